from __future__ import annotations

import logging
import pathlib
import typing as t

import numpy as np
import pytest

from prototsc import tensor as T
from prototsc.config import TrainConfig
from prototsc.data import make_synthetic_split
from prototsc.data import SyntheticSpec
from prototsc.data import TimeSeriesDataset
from prototsc.errors import DataError
from prototsc.errors import NumericError
from prototsc.errors import SchemaError
from prototsc.model import load_checkpoint
from prototsc.model import PrototypeClassifier
from prototsc.model import save_checkpoint
from prototsc.optim import Adam
from prototsc.tensor import Tensor
from prototsc.testing import tiny_config
from prototsc.testing import tiny_spec
from prototsc.train import EarlyStopping
from prototsc.train import evaluate
from prototsc.train import prepare
from prototsc.train import train


@pytest.fixture(scope="module")
def split() -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    train_set, test_set = make_synthetic_split(tiny_spec())
    return train_set.normalized(), test_set.normalized()


def test_early_stopping_patience() -> None:
    stopper = EarlyStopping(20)
    stopped = None

    for epoch in range(100):
        accuracy = min(epoch, 5) / 10
        stopper.update(epoch, accuracy, 1.0, state=epoch)

        if stopper.should_stop(epoch):
            stopped = epoch
            break

    assert stopped == 25
    assert stopper.best_epoch == 5
    assert stopper.best_state == 5


def test_early_stopping_tie_uses_loss() -> None:
    stopper = EarlyStopping(3)
    assert stopper.update(0, 0.5, 1.0)
    assert stopper.update(1, 0.5, 0.9)
    assert not stopper.update(2, 0.5, 0.9)
    assert not stopper.update(3, 0.4, 0.1)
    assert stopper.best_epoch == 1


class _Fixed:
    def __init__(self, predictions: np.ndarray) -> None:
        self.predictions = predictions

    def predict(self, samples: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return self.predictions


def _balanced() -> TimeSeriesDataset:
    return TimeSeriesDataset(np.zeros((4, 1, 3)), [0, 1, 0, 1], ["a", "b"])


def test_evaluate_all_correct() -> None:
    data = _balanced()
    assert evaluate(_Fixed(data.labels), data) == 1.0  # type: ignore[arg-type]


def test_evaluate_constant_predictor() -> None:
    data = _balanced()
    assert evaluate(_Fixed(np.zeros(4, dtype=int)), data) == 0.5  # type: ignore[arg-type]


def test_evaluate_empty() -> None:
    empty = TimeSeriesDataset(np.zeros((0, 1, 3)), np.zeros(0, dtype=int), ["a"])

    with pytest.raises(DataError, match="empty"):
        evaluate(_Fixed(np.zeros(0)), empty)  # type: ignore[arg-type]


def test_train_is_deterministic(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    first = train(tiny_config(), split[0])
    second = train(tiny_config(), split[0])
    assert first.history.records == second.history.records
    assert first.best_epoch == second.best_epoch

    for name, value in first.model.state_dict().items():
        assert value.tobytes() == second.model.state_dict()[name].tobytes(), name

    assert first.model.bank is not None and second.model.bank is not None

    for a, b in zip(first.model.bank.levels, second.model.bank.levels):
        assert a.tobytes() == b.tobytes()


def test_seed_changes_result(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    a = train(tiny_config(max_epochs=1), split[0]).model.state_dict()
    b = train(tiny_config(max_epochs=1, seed=1), split[0]).model.state_dict()
    assert any(a[k].tobytes() != b[k].tobytes() for k in a)


def test_train_restores_best(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    train_set, val_set = split
    result = train(tiny_config(max_epochs=6, patience=2), train_set, val_set)
    assert result.epochs_run == len(result.history)
    assert result.best_val_accuracy == max(result.history.column("val_accuracy"))
    assert evaluate(result.model, val_set) == pytest.approx(result.best_val_accuracy)
    assert not result.model.training


def test_history_csv(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset], tmp_path: pathlib.Path
) -> None:
    result = train(tiny_config(max_epochs=2), split[0])
    result.history.write_csv(tmp_path / "history.csv")
    lines = (tmp_path / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_accuracy,gamma"
    assert len(lines) == 1 + result.epochs_run
    assert lines[1].startswith("0,")
    assert lines[1].endswith(",1.0")


def test_no_validation_split_monitors_train(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset], caplog: pytest.LogCaptureFixture
) -> None:
    with caplog.at_level(logging.WARNING, logger="prototsc.train"):
        train_set, val_set = prepare(tiny_config(validation_fraction=0.0), split[0])

    assert val_set is train_set
    assert "monitors the training set" in caplog.text


def test_prepare_incompatible(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    other, _ = make_synthetic_split(tiny_spec(length=20))

    with pytest.raises(DataError):
        prepare(tiny_config(), split[0], other)


def test_non_finite_loss(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset], monkeypatch: pytest.MonkeyPatch
) -> None:
    def nan_loss(self: PrototypeClassifier, scores: t.Any, labels: t.Any) -> Tensor:
        return Tensor(np.array(np.nan))

    monkeypatch.setattr(PrototypeClassifier, "loss", nan_loss)

    with pytest.raises(NumericError, match="epoch 0, batch 0: loss is not finite"):
        train(tiny_config(), split[0])


def test_linear_head(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    result = train(tiny_config(head="linear", max_epochs=2), split[0])
    assert result.model.bank is None
    assert result.model.head is not None
    assert set(result.history.column("gamma")) == {1.0}
    assert 0.0 <= evaluate(result.model, split[1]) <= 1.0


def test_model_loss_gradient() -> None:
    model = PrototypeClassifier(tiny_config(), 1, 16, ["a", "b"])
    labels = np.array([0, 1, 1, 0])
    x = Tensor(np.random.default_rng(0).standard_normal((4, 1, 16)), requires_grad=True)
    model.loss(model(x), labels).backward()
    assert x.grad is not None
    analytic = x.grad.reshape(-1)
    numeric = np.empty_like(analytic)
    flat = x.data.reshape(-1)
    eps = 1e-5

    with T.no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            upper = model.loss(model(x), labels).item()
            flat[i] = original - eps
            lower = model.loss(model(x), labels).item()
            flat[i] = original
            numeric[i] = (upper - lower) / (2 * eps)

    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_parameters_receive_gradients() -> None:
    model = PrototypeClassifier(tiny_config(), 2, 16, ["a", "b", "c"])
    x = Tensor(np.random.default_rng(1).standard_normal((3, 2, 16)))
    model.loss(model(x), np.array([0, 1, 2])).backward()

    for name, p in model.named_parameters():
        assert p.grad is not None, name


def test_model_shapes() -> None:
    model = PrototypeClassifier(tiny_config(), 2, 16, ["a", "b", "c"])
    samples = np.random.default_rng(2).standard_normal((5, 2, 16))
    assert [s.shape for s in model(Tensor(samples))] == [(5, 3), (5, 3)]
    proba = model.predict_proba(samples, batch_size=2)
    assert proba.shape == (5, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert model.embeddings(samples).shape == (5, 8)


def test_checkpoint_round_trip(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset], tmp_path: pathlib.Path
) -> None:
    model = train(tiny_config(max_epochs=2), split[0]).model
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(path, model, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta["extra"] == {"note": "x"}
    assert loaded.config == model.config
    assert loaded.class_names == model.class_names

    for name, value in model.state_dict().items():
        assert loaded.state_dict()[name].tobytes() == value.tobytes(), name

    assert model.bank is not None and loaded.bank is not None
    assert loaded.bank.to_meta() == model.bank.to_meta()

    for a, b in zip(model.bank.levels, loaded.bank.levels):
        assert a.tobytes() == b.tobytes()

    assert loaded.predict_proba(split[1].samples).tobytes() == (
        model.predict_proba(split[1].samples).tobytes()
    )


def test_checkpoint_not_a_checkpoint(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "bad.npz"
    np.savez(path, other=np.zeros(2))

    with pytest.raises(SchemaError, match="no meta record"):
        load_checkpoint(path)


@pytest.mark.slow
def test_default_configuration_separates_synthetic_classes() -> None:
    train_set, test_set = make_synthetic_split(SyntheticSpec())
    config = TrainConfig()
    assert (config.max_epochs, config.patience) == (150, 20)
    result = train(config, train_set.normalized())
    assert evaluate(result.model, test_set.normalized()) >= 0.95


def test_optimizer_step_leaves_prototypes(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset],
) -> None:
    model = PrototypeClassifier(tiny_config(), 1, 16, split[0].class_names)
    assert model.bank is not None
    before = [level.tobytes() for level in model.bank.levels]
    optimizer = Adam(model.parameters(), lr=0.01)
    model.loss(model(Tensor(split[0].samples[:8])), split[0].labels[:8]).backward()
    optimizer.step()
    assert [level.tobytes() for level in model.bank.levels] == before


def test_warmup_epoch_freezes_bank(split: tuple[TimeSeriesDataset, TimeSeriesDataset]) -> None:
    config = tiny_config(max_epochs=1)
    fresh = PrototypeClassifier(config, 1, 16, split[0].class_names)
    result = train(config, split[0])
    assert np.isfinite(result.history.records[0].train_loss)
    assert fresh.bank is not None and result.model.bank is not None

    for a, b in zip(fresh.bank.levels, result.model.bank.levels):
        assert a.tobytes() == b.tobytes()


def test_prediction_uses_top_level_only(
    split: tuple[TimeSeriesDataset, TimeSeriesDataset], tmp_path: pathlib.Path
) -> None:
    model = train(tiny_config(max_epochs=2), split[0]).model
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(path, model)

    with np.load(path) as archive:
        arrays = {k: archive[k] for k in archive.files if k != "bank/level_0"}

    trimmed = tmp_path / "trimmed.npz"
    np.savez(trimmed, **arrays)
    loaded, _ = load_checkpoint(trimmed)
    assert loaded.bank is not None and len(loaded.bank.levels) == 1
    assert loaded.predict_proba(split[1].samples).tobytes() == (
        model.predict_proba(split[1].samples).tobytes()
    )
