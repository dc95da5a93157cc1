"""Relate learned prototypes to the training samples nearest to them, and export
embeddings for external plotting.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import typing as t

import numpy as np

from .data import TimeSeriesDataset
from .model import PrototypeClassifier
from .prototypes import cosine_similarity
from .prototypes import PrototypeBank


@dataclasses.dataclass(frozen=True)
class AttributionRecord:
    """The training samples most similar to one prototype.

    ``neighbors`` are indices into the training file, in order of descending
    cosine similarity given by ``scores``.
    """

    level: int
    class_index: int
    class_name: str
    prototype_index: int
    neighbors: list[int]
    neighbor_labels: list[str]
    scores: list[float]
    prototype: list[float]

    def to_dict(self) -> dict[str, t.Any]:
        return dataclasses.asdict(self)


def attribute(
    bank: PrototypeBank,
    embeddings: np.ndarray,
    labels: np.ndarray,
    class_names: t.Sequence[str],
    top_m: int = 5,
    levels: t.Sequence[int] | None = None,
) -> list[AttributionRecord]:
    """Find the ``top_m`` nearest embeddings to each prototype by cosine
    similarity. Ties keep the lower sample index first.

    :param bank: The prototypes.
    :param embeddings: ``(N, D)`` embeddings of the training samples.
    :param labels: Class index of each sample.
    :param class_names: Label names by class index.
    :param top_m: Neighbors per prototype.
    :param levels: Level indices to report, all levels by default.
    """
    if top_m < 1:
        raise ValueError(f"top_m must be at least 1, got {top_m}.")

    records = []
    chosen = range(len(bank.levels)) if levels is None else levels

    for level in chosen:
        prototypes = bank.levels[level]
        # (N, C, K), clipped against rounding just outside [-1, 1].
        sims = np.clip(cosine_similarity(embeddings, prototypes), -1.0, 1.0)

        for c in range(prototypes.shape[0]):
            for k in range(prototypes.shape[1]):
                column = sims[:, c, k]
                order = np.argsort(-column, kind="stable")[:top_m]
                records.append(
                    AttributionRecord(
                        level=level % len(bank.levels),
                        class_index=c,
                        class_name=class_names[c],
                        prototype_index=k,
                        neighbors=[int(i) for i in order],
                        neighbor_labels=[class_names[labels[i]] for i in order],
                        scores=[float(column[i]) for i in order],
                        prototype=[float(v) for v in prototypes[c, k]],
                    )
                )

    return records


def inspect_model(
    model: PrototypeClassifier, dataset: TimeSeriesDataset, top_m: int = 5
) -> tuple[list[AttributionRecord], np.ndarray]:
    """Attribute every prototype of a trained model against a dataset. Returns
    the records and the dataset's embeddings.
    """
    if model.bank is None:
        raise ValueError("Only prototype heads can be inspected.")

    embeddings = model.embeddings(dataset.samples)
    records = attribute(model.bank, embeddings, dataset.labels, dataset.class_names, top_m)
    return records, embeddings


def write_embeddings_csv(
    path: str | os.PathLike[str], embeddings: np.ndarray, labels: np.ndarray, class_names: t.Sequence[str]
) -> None:
    """One row per sample: index, label name, then the embedding values."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "label", *(f"z{i}" for i in range(embeddings.shape[1]))])

        for i, (z, label) in enumerate(zip(embeddings, labels)):
            writer.writerow([i, class_names[label], *(repr(float(v)) for v in z)])
