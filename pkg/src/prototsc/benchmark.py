"""Benchmark runs over many datasets and variants, and aggregation of their
accuracies into top-1 counts, average accuracies, and average ranks.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import typing as t
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.stats import rankdata

from .config import FORMAT_VERSION
from .config import RunConfig
from .config import write_json
from .data import load_ts
from .data import TimeSeriesDataset
from .errors import DataError
from .errors import SchemaError
from .train import evaluate
from .train import train

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Aggregates:
    """Per-method summary over datasets."""

    top1: dict[str, int]
    """Datasets where the method attains the maximum. Tied methods all count."""

    average_accuracy: dict[str, float]

    average_rank: dict[str, float]
    """Mean rank, 1 is best, ties get the average of the ranks they span."""


def aggregate(
    accuracies: t.Sequence[t.Sequence[float]] | np.ndarray,
    methods: t.Sequence[str],
    datasets: t.Sequence[str] | None = None,
) -> Aggregates:
    """Aggregate an accuracy matrix with one row per dataset and one column per
    method.

    :raises DataError: The matrix is ragged, empty, does not match the names, or
        has entries outside ``[0, 1]``.
    """
    rows = [list(row) for row in accuracies]

    if not rows or not methods:
        raise DataError("accuracy matrix is empty")

    if any(len(row) != len(methods) for row in rows):
        raise DataError(f"ragged accuracy matrix, every row needs {len(methods)} entries")

    if datasets is not None and len(datasets) != len(rows):
        raise DataError(f"{len(rows)} accuracy rows for {len(datasets)} datasets")

    matrix = np.asarray(rows, dtype=np.float64)

    if not np.all((matrix >= 0.0) & (matrix <= 1.0)):
        raise DataError("accuracies must be in [0, 1]")

    best = matrix.max(axis=1, keepdims=True)
    top1 = (matrix == best).sum(axis=0)
    ranks = np.vstack([rankdata(-row, method="average") for row in matrix])
    return Aggregates(
        top1={m: int(v) for m, v in zip(methods, top1)},
        average_accuracy={m: float(v) for m, v in zip(methods, matrix.mean(axis=0))},
        average_rank={m: float(v) for m, v in zip(methods, ranks.mean(axis=0))},
    )


@dataclasses.dataclass
class BenchmarkReport:
    """Accuracy of each method on each dataset, the aggregates, and per-epoch
    validation accuracy curves keyed by dataset then method.
    """

    datasets: list[str]
    methods: list[str]
    accuracies: list[list[float]]
    curves: dict[str, dict[str, list[float]]] = dataclasses.field(default_factory=dict)

    @property
    def aggregates(self) -> Aggregates:
        return aggregate(self.accuracies, self.methods, self.datasets)

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "format_version": FORMAT_VERSION,
            "datasets": self.datasets,
            "methods": self.methods,
            "accuracies": self.accuracies,
            "aggregates": dataclasses.asdict(self.aggregates),
            "curves": self.curves,
        }

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> BenchmarkReport:
        """
        :raises SchemaError: The version or structure is not supported.
        """
        if data.get("format_version") != FORMAT_VERSION:
            raise SchemaError(
                f"report format_version {data.get('format_version')!r} is not"
                f" supported, expected {FORMAT_VERSION}"
            )

        try:
            return cls(
                datasets=list(data["datasets"]),
                methods=list(data["methods"]),
                accuracies=[list(row) for row in data["accuracies"]],
                curves=dict(data.get("curves", {})),
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"report is missing or has invalid {e}") from None

    def write(self, out_dir: str | os.PathLike[str]) -> None:
        """Write ``benchmark.csv`` with one row per dataset and method, and
        ``benchmark.json`` with everything.
        """
        os.makedirs(out_dir, exist_ok=True)

        with open(os.path.join(out_dir, "benchmark.csv"), "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["dataset", "method", "accuracy"])

            for dataset, row in zip(self.datasets, self.accuracies):
                for method, accuracy in zip(self.methods, row):
                    writer.writerow([dataset, method, repr(accuracy)])

        write_json(os.path.join(out_dir, "benchmark.json"), self.to_dict())

    @classmethod
    def read(cls, path: str | os.PathLike[str]) -> BenchmarkReport:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def find_datasets(data_dir: str | os.PathLike[str]) -> dict[str, tuple[str, str]]:
    """Find ``<name>_TRAIN.ts`` and ``<name>_TEST.ts`` pairs directly in
    ``data_dir`` or in a ``<name>`` subdirectory, sorted by name.
    """
    found: dict[str, tuple[str, str]] = {}
    subdirs = sorted(e.path for e in os.scandir(data_dir) if e.is_dir())

    for root in [os.fspath(data_dir), *subdirs]:
        for entry in sorted(os.scandir(root), key=lambda e: e.name):
            if entry.is_file() and entry.name.endswith("_TRAIN.ts"):
                name = entry.name.removesuffix("_TRAIN.ts")
                test = os.path.join(root, f"{name}_TEST.ts")

                if os.path.isfile(test):
                    found[name] = (entry.path, test)
                else:
                    logger.warning("skipping %s, no matching %s", entry.path, test)

    if not found:
        raise DataError(f"{os.fspath(data_dir)}: no <name>_TRAIN.ts and <name>_TEST.ts pairs")

    return dict(sorted(found.items()))


def _load_pair(train_path: str, test_path: str, normalize: bool) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    train_set = load_ts(train_path)
    test_set = load_ts(test_path, length=train_set.length)

    if normalize:
        train_set, test_set = train_set.normalized(), test_set.normalized()

    train_set.check_compatible(test_set)
    return train_set, test_set


def run_benchmark(config: RunConfig, data_dir: str | os.PathLike[str], threads: int = 1) -> BenchmarkReport:
    """Train and test every variant of ``config.variants`` on every dataset pair in
    ``data_dir``. Runs are independent and seeded, so the report is the same for
    any number of threads.
    """
    pairs = find_datasets(data_dir)
    loaded = {
        name: _load_pair(train_path, test_path, config.train.normalize)
        for name, (train_path, test_path) in pairs.items()
    }
    jobs = [(name, variant) for name in loaded for variant in config.variants]

    def run(job: tuple[str, str]) -> tuple[float, list[float]]:
        name, variant = job
        train_set, test_set = loaded[name]
        result = train(config.train.variant(variant), train_set)
        accuracy = evaluate(result.model, test_set)
        logger.info("%s / %s: test accuracy %.4f", name, variant, accuracy)
        return accuracy, result.history.column("val_accuracy")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(run, jobs))

    methods = list(config.variants)
    accuracies: list[list[float]] = []
    curves: dict[str, dict[str, list[float]]] = {}
    it = iter(results)

    for name in loaded:
        row = []
        curves[name] = {}

        for variant in methods:
            accuracy, curve = next(it)
            row.append(accuracy)
            curves[name][variant] = curve

        accuracies.append(row)

    return BenchmarkReport(list(loaded), methods, accuracies, curves)
