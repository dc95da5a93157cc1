from __future__ import annotations

import pathlib

import numpy as np
import pytest

from prototsc.attribution import attribute
from prototsc.attribution import inspect_model
from prototsc.attribution import write_embeddings_csv
from prototsc.data import make_synthetic_split
from prototsc.model import PrototypeClassifier
from prototsc.prototypes import PrototypeBank
from prototsc.testing import tiny_config
from prototsc.testing import tiny_spec


@pytest.fixture
def separable() -> tuple[PrototypeBank, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    labels = np.array([0, 1] * 6)
    embeddings = np.eye(4)[labels] + 0.1 * rng.standard_normal((12, 4))
    bank = PrototypeBank([np.eye(4)[:2, None, :]])
    return bank, embeddings, labels


def test_nearest_samples_share_class(
    separable: tuple[PrototypeBank, np.ndarray, np.ndarray],
) -> None:
    bank, embeddings, labels = separable
    records = attribute(bank, embeddings, labels, ["a", "b"], top_m=3)
    assert [(r.class_name, r.prototype_index) for r in records] == [("a", 0), ("b", 0)]

    for record in records:
        assert record.neighbor_labels == [record.class_name] * 3
        assert record.scores == sorted(record.scores, reverse=True)
        assert all(-1.0 <= s <= 1.0 for s in record.scores)


def test_top_m(separable: tuple[PrototypeBank, np.ndarray, np.ndarray]) -> None:
    bank, embeddings, labels = separable
    assert len(attribute(bank, embeddings, labels, ["a", "b"], top_m=50)[0].neighbors) == 12

    with pytest.raises(ValueError, match="top_m"):
        attribute(bank, embeddings, labels, ["a", "b"], top_m=0)


def test_ties_keep_lower_index() -> None:
    bank = PrototypeBank([np.eye(2)[:1, None, :]])
    embeddings = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 0.0]])
    record = attribute(bank, embeddings, np.zeros(3, dtype=int), ["a"], top_m=2)[0]
    assert record.neighbors == [1, 2]


def test_levels_selection(separable: tuple[PrototypeBank, np.ndarray, np.ndarray]) -> None:
    _, embeddings, labels = separable
    bank = PrototypeBank([np.eye(4)[:2, None, :], np.eye(4)[None, 2:4, :].repeat(2, axis=0)])
    records = attribute(bank, embeddings, labels, ["a", "b"], levels=[-1])
    assert {r.level for r in records} == {1}
    assert len(records) == 4


def test_inspect_model(tmp_path: pathlib.Path) -> None:
    train_set, _ = make_synthetic_split(tiny_spec())
    model = PrototypeClassifier(tiny_config(), 1, 16, train_set.class_names)
    records, embeddings = inspect_model(model, train_set, top_m=4)
    assert len(records) == 2 * (1 + 2)
    assert embeddings.shape == (len(train_set), 8)
    assert records[0].to_dict()["neighbors"] == records[0].neighbors

    write_embeddings_csv(tmp_path / "e.csv", embeddings, train_set.labels, train_set.class_names)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "index,label,z0,z1,z2,z3,z4,z5,z6,z7"
    assert len(lines) == 1 + len(train_set)
    assert lines[1].split(",")[1] == train_set.class_names[train_set.labels[0]]


def test_inspect_linear_head() -> None:
    train_set, _ = make_synthetic_split(tiny_spec())
    model = PrototypeClassifier(tiny_config(head="linear"), 1, 16, train_set.class_names)

    with pytest.raises(ValueError, match="prototype heads"):
        inspect_model(model, train_set)
