"""Deterministic training with prototype updates and early stopping, and
accuracy evaluation.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import typing as t

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import stratified_split
from .data import TimeSeriesDataset
from .errors import DataError
from .errors import NumericError
from .model import make_rngs
from .model import PrototypeClassifier
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    gamma: float


class History:
    """Per-epoch training curves."""

    fields: t.ClassVar[tuple[str, ...]] = tuple(
        f.name for f in dataclasses.fields(EpochRecord)
    )

    def __init__(self) -> None:
        self.records: list[EpochRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> t.Iterator[EpochRecord]:
        return iter(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def column(self, name: str) -> list[t.Any]:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path: str | os.PathLike[str]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.fields)

            for record in self.records:
                writer.writerow([repr(v) for v in dataclasses.astuple(record)])


class EarlyStopping:
    """Track the best validation result and decide when to stop.

    An epoch improves on the best if its accuracy is higher, or equal with a
    lower loss. Training stops once ``patience`` epochs have passed since the
    best one.

    :param patience: Epochs without improvement before stopping.
    """

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best_epoch = -1
        self.best_accuracy = -np.inf
        self.best_loss = np.inf
        self.best_state: t.Any = None

    def update(self, epoch: int, accuracy: float, loss: float, state: t.Any = None) -> bool:
        """Record an epoch's result, keeping ``state`` if it is the new best.
        Returns whether it improved.
        """
        improved = accuracy > self.best_accuracy or (
            accuracy == self.best_accuracy and loss < self.best_loss
        )

        if improved:
            self.best_epoch = epoch
            self.best_accuracy = accuracy
            self.best_loss = loss
            self.best_state = state

        return improved

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


@dataclasses.dataclass
class TrainResult:
    model: PrototypeClassifier
    history: History
    best_epoch: int
    best_val_accuracy: float
    epochs_run: int


def evaluate(model: PrototypeClassifier, dataset: TimeSeriesDataset, batch_size: int = 64) -> float:
    """Fraction of samples whose predicted class matches the label, with dropout
    disabled.

    :raises DataError: The dataset is empty.
    """
    if len(dataset) == 0:
        raise DataError(f"{dataset.origin or 'dataset'}: cannot evaluate on an empty dataset")

    predictions = model.predict(dataset.samples, batch_size)
    return float(np.mean(predictions == dataset.labels))


def evaluate_loss(
    model: PrototypeClassifier, dataset: TimeSeriesDataset, batch_size: int = 64
) -> tuple[float, float]:
    """Accuracy and mean training loss over a dataset, in evaluation mode."""
    if len(dataset) == 0:
        raise DataError(f"{dataset.origin or 'dataset'}: cannot evaluate on an empty dataset")

    training = model.training
    model.eval()
    correct = 0
    total = 0.0

    try:
        with T.no_grad():
            for start in range(0, len(dataset), batch_size):
                x = Tensor(dataset.samples[start : start + batch_size], dtype=model.dtype)
                y = dataset.labels[start : start + batch_size]
                scores = model(x)
                total += model.loss(scores, y).item() * len(y)
                correct += int(np.sum(scores[-1].data.argmax(axis=1) == y))
    finally:
        model.train(training)

    return correct / len(dataset), total / len(dataset)


def prepare(
    config: TrainConfig,
    train_set: TimeSeriesDataset,
    val_set: TimeSeriesDataset | None = None,
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Choose the data a run trains and validates on. Without a validation set,
    a stratified fraction of the training set is held out, or, if the fraction
    is 0, the training set itself is monitored.
    """
    if val_set is None:
        if config.validation_fraction > 0:
            train_set, val_set = stratified_split(
                train_set, config.validation_fraction, config.seed
            )
        else:
            logger.warning("No validation split, early stopping monitors the training set.")
            val_set = train_set

    train_set.check_compatible(val_set)
    return train_set, val_set


def train(
    config: TrainConfig,
    train_set: TimeSeriesDataset,
    val_set: TimeSeriesDataset | None = None,
) -> TrainResult:
    """Train a classifier.

    Each epoch shuffles the training set, and for each batch computes the loss,
    backpropagates, takes an optimizer step, then updates the prototypes with the
    momentum of the current schedule step. After each epoch the validation set is
    evaluated. Once ``patience`` epochs pass without improvement, training stops
    and the best epoch's parameters and prototypes are restored.

    Samples are used as given, normalize them beforehand if wanted.

    :param config: All settings. The same config and data give the same result.
    :param train_set: Data to fit.
    :param val_set: Data to monitor, see :func:`prepare`.
    :raises NumericError: The loss became NaN or infinite. The message names the
        epoch and batch.
    """
    train_set, val_set = prepare(config, train_set, val_set)

    if len(train_set) == 0:
        raise DataError("cannot train on an empty dataset")

    rngs = make_rngs(config.seed)
    model = PrototypeClassifier(
        config, train_set.n_variables, train_set.length, train_set.class_names, rngs
    )
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    stopper = EarlyStopping(config.patience)
    history = History()
    iteration = 0
    epoch = 0

    for epoch in range(config.max_epochs):
        model.train()
        order = rngs.shuffle.permutation(len(train_set))
        total = 0.0
        gamma = model.schedule_gamma(epoch)

        for batch, start in enumerate(range(0, len(train_set), config.batch_size)):
            index = order[start : start + config.batch_size]
            samples = train_set.samples[index]
            labels = train_set.labels[index]

            try:
                optimizer.zero_grad()
                loss = model.loss(model(Tensor(samples, dtype=model.dtype)), labels)
                value = loss.item()

                if not np.isfinite(value):
                    raise NumericError("loss is not finite")

                loss.backward()
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {batch}: {e.message}") from e

            optimizer.step()
            step = epoch if config.schedule_unit == "epoch" else iteration
            gamma = model.update_prototypes(samples, labels, step)
            total += value * len(index)
            iteration += 1

        val_accuracy, val_loss = evaluate_loss(model, val_set, config.batch_size)
        record = EpochRecord(epoch, total / len(train_set), val_loss, val_accuracy, gamma)
        history.append(record)
        logger.info(
            "epoch %d: train_loss=%.6f val_loss=%.6f val_accuracy=%.4f gamma=%.6f",
            epoch,
            record.train_loss,
            val_loss,
            val_accuracy,
            gamma,
        )

        if stopper.update(epoch, val_accuracy, val_loss, model.snapshot()):
            logger.debug("epoch %d is the new best", epoch)
        elif stopper.should_stop(epoch):
            logger.info(
                "stopping at epoch %d, no improvement since epoch %d",
                epoch,
                stopper.best_epoch,
            )
            break

    model.restore(stopper.best_state)
    model.eval()
    return TrainResult(
        model=model,
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_accuracy=float(stopper.best_accuracy),
        epochs_run=epoch + 1,
    )
