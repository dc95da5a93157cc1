from __future__ import annotations

import json
import os
import pathlib

import numpy as np
import pytest

from prototsc.benchmark import aggregate
from prototsc.benchmark import BenchmarkReport
from prototsc.benchmark import find_datasets
from prototsc.benchmark import run_benchmark
from prototsc.config import RunConfig
from prototsc.errors import DataError
from prototsc.errors import SchemaError
from prototsc.testing import tiny_config
from prototsc.testing import tiny_spec
from prototsc.testing import UEA_ACCURACIES
from prototsc.testing import UEA_DATASETS
from prototsc.testing import UEA_METHODS
from prototsc.testing import write_dataset_pair


def test_published_table() -> None:
    result = aggregate(UEA_ACCURACIES, UEA_METHODS, UEA_DATASETS)
    assert result.average_accuracy["Prototype"] == pytest.approx(0.7827)
    assert result.average_rank["Prototype"] == pytest.approx(2.7)
    assert abs(result.average_rank["Prototype"] - 2.8) <= 0.25
    assert result.top1["Prototype"] == 3


def test_two_by_two() -> None:
    result = aggregate([[0.9, 0.8], [0.7, 0.8]], ["a", "b"])
    assert result.top1 == {"a": 1, "b": 1}
    assert result.average_rank == {"a": 1.5, "b": 1.5}
    assert result.average_accuracy == {"a": pytest.approx(0.8), "b": pytest.approx(0.8)}


def test_ties_share_ranks() -> None:
    result = aggregate([[0.5, 0.5, 0.4]], ["a", "b", "c"])
    assert result.top1 == {"a": 1, "b": 1, "c": 0}
    assert result.average_rank == {"a": 1.5, "b": 1.5, "c": 3.0}


@pytest.mark.parametrize(("n_datasets", "n_methods"), [(1, 2), (4, 3), (10, 10), (7, 5)])
def test_average_ranks_sum(n_datasets: int, n_methods: int) -> None:
    rng = np.random.default_rng(n_datasets * n_methods)
    # Two decimals so ties occur.
    matrix = np.round(rng.uniform(0.5, 0.6, (n_datasets, n_methods)), 2)
    methods = [f"m{i}" for i in range(n_methods)]
    ranks = aggregate(matrix, methods).average_rank
    assert sum(ranks.values()) == pytest.approx(n_methods * (n_methods + 1) / 2)


def test_published_table_ranks_sum() -> None:
    ranks = aggregate(UEA_ACCURACIES, UEA_METHODS, UEA_DATASETS).average_rank
    assert sum(ranks.values()) == pytest.approx(55.0)


@pytest.mark.parametrize(
    ("matrix", "message"),
    [
        pytest.param([], "empty", id="empty"),
        pytest.param([[0.5, 0.5], [0.5]], "ragged", id="ragged"),
        pytest.param([[0.5, 1.5]], "\\[0, 1\\]", id="range"),
        pytest.param([[0.5, -0.1]], "\\[0, 1\\]", id="negative"),
    ],
)
def test_aggregate_invalid(matrix: list[list[float]], message: str) -> None:
    with pytest.raises(DataError, match=message):
        aggregate(matrix, ["a", "b"])


def test_aggregate_dataset_count() -> None:
    with pytest.raises(DataError, match="1 accuracy rows for 2 datasets"):
        aggregate([[0.5]], ["a"], ["x", "y"])


def test_report_write_read(tmp_path: pathlib.Path) -> None:
    report = BenchmarkReport(["x", "y"], ["a", "b"], [[0.9, 0.8], [0.7, 0.8]], {"x": {"a": [0.5]}})
    report.write(tmp_path)
    lines = (tmp_path / "benchmark.csv").read_text().splitlines()
    assert lines[:3] == ["dataset,method,accuracy", "x,a,0.9", "x,b,0.8"]
    back = BenchmarkReport.read(tmp_path / "benchmark.json")
    assert back == report
    data = json.loads((tmp_path / "benchmark.json").read_text())
    assert data["aggregates"]["average_rank"] == {"a": 1.5, "b": 1.5}


def test_report_schema() -> None:
    with pytest.raises(SchemaError, match="format_version 9"):
        BenchmarkReport.from_dict({"format_version": 9})

    with pytest.raises(SchemaError, match="missing or has invalid"):
        BenchmarkReport.from_dict({"format_version": 1, "datasets": []})


def test_find_datasets(tmp_path: pathlib.Path, caplog: pytest.LogCaptureFixture) -> None:
    spec = tiny_spec(n_train=4, n_test=2)
    write_dataset_pair(tmp_path, "b", spec)
    os.mkdir(tmp_path / "a")
    write_dataset_pair(tmp_path / "a", "a", spec)
    (tmp_path / "c_TRAIN.ts").write_text("")
    found = find_datasets(tmp_path)
    assert list(found) == ["a", "b"]
    assert found["a"][0] == os.path.join(tmp_path, "a", "a_TRAIN.ts")
    assert "c_TEST.ts" in caplog.text


def test_find_datasets_none(tmp_path: pathlib.Path) -> None:
    with pytest.raises(DataError, match="no <name>_TRAIN.ts"):
        find_datasets(tmp_path)


def test_run_benchmark_threads(tmp_path: pathlib.Path) -> None:
    write_dataset_pair(tmp_path, "one", tiny_spec())
    write_dataset_pair(tmp_path, "two", tiny_spec(seed=3, base_frequencies=(2.0, 6.0)))
    run = RunConfig(train=tiny_config(max_epochs=2), variants=("full", "linear_head"))
    serial = run_benchmark(run, tmp_path)
    parallel = run_benchmark(run, tmp_path, threads=3)
    assert serial.datasets == ["one", "two"]
    assert serial.methods == ["full", "linear_head"]
    assert serial.accuracies == parallel.accuracies
    assert serial.curves == parallel.curves
    assert len(serial.curves["one"]["full"]) == 2
    assert all(0.0 <= a <= 1.0 for row in serial.accuracies for a in row)
