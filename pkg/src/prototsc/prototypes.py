"""Hierarchical prototype classification head.

Each level holds ``K`` prototypes per class on a hypersphere of radius ``r``.
A class is scored by the temperature-scaled log-sum-exp of the cosine
similarities between an embedding and that class's prototypes. Prototypes are
plain arrays, never tensors: they are moved only by :func:`ema_update`, toward
the embeddings assigned to them, under a momentum schedule.
"""

from __future__ import annotations

import dataclasses
import math
import typing as t

import numpy as np

from . import tensor as T
from .errors import DataError
from .errors import NumericError
from .errors import ShapeError
from .nn import Linear
from .nn import Module
from .tensor import Tensor


@dataclasses.dataclass(frozen=True)
class GammaSchedule:
    """Momentum schedule for prototype updates.

    Prototypes are frozen for ``warmup`` steps, then the momentum decays linearly
    from 1 to ``gamma_a`` over ``active`` steps, then approaches ``gamma_b``
    exponentially with time constant ``tau``. If ``constant`` is set, the
    momentum is that value at every step instead.
    """

    warmup: int = 3
    active: int = 10
    gamma_a: float = 0.99
    gamma_b: float = 0.999
    tau: float = 30.0
    constant: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma_a <= self.gamma_b <= 1.0:
            raise ValueError(
                f"Schedule needs 0 < gamma_a <= gamma_b <= 1, got {self.gamma_a}"
                f" and {self.gamma_b}."
            )

        if self.warmup < 0 or self.active < 0:
            raise ValueError("Schedule phase lengths must be nonnegative.")

        if not self.tau > 0:
            raise ValueError(f"Schedule tau must be positive, got {self.tau}.")

        if self.constant is not None and not 0.0 < self.constant <= 1.0:
            raise ValueError(f"Constant momentum must be in (0, 1], got {self.constant}.")

    def __call__(self, step: int) -> float:
        return gamma_schedule(step, self)


def gamma_schedule(step: int, params: GammaSchedule) -> float:
    """The momentum ``gamma`` at a schedule step, in ``[gamma_a, 1]``."""
    if step < 0:
        raise ValueError(f"Schedule step must be nonnegative, got {step}.")

    if params.constant is not None:
        return params.constant

    if step < params.warmup:
        return 1.0

    if step < params.warmup + params.active:
        alpha = (step - params.warmup) / params.active
        return 1.0 - (1.0 - params.gamma_a) * alpha

    elapsed = step - params.warmup - params.active
    return params.gamma_a + (params.gamma_b - params.gamma_a) * (
        1.0 - math.exp(-elapsed / params.tau)
    )


class PrototypeBank:
    """Per-level, per-class prototype vectors with the schedule state.

    :param levels: One array of shape ``(C, K, D)`` per level, lowest first. The
        last level is the one used for prediction.
    :param temperature: Divisor of similarities in class scores.
    :param radius: Norm every prototype is kept at.
    :param schedule: Momentum schedule for :func:`ema_update`.
    :param step: Current schedule step.
    """

    def __init__(
        self,
        levels: t.Sequence[np.ndarray],
        temperature: float = 0.1,
        radius: float = 1.0,
        schedule: GammaSchedule | None = None,
        step: int = 0,
    ) -> None:
        if not levels:
            raise ValueError("A prototype bank needs at least one level.")

        arrays = [np.array(level, dtype=np.float64) for level in levels]
        first = arrays[0]

        for level in arrays:
            if level.ndim != 3 or level.shape[0] != first.shape[0] or level.shape[2] != first.shape[2]:
                raise ShapeError("prototype_bank", first.shape, level.shape)

        self.levels: list[np.ndarray] = arrays
        self.temperature = temperature
        self.radius = radius
        self.schedule = schedule or GammaSchedule()
        self.step = step

    @property
    def n_classes(self) -> int:
        return int(self.levels[0].shape[0])

    @property
    def dim(self) -> int:
        return int(self.levels[0].shape[2])

    @property
    def counts(self) -> tuple[int, ...]:
        """Prototypes per class at each level."""
        return tuple(int(level.shape[1]) for level in self.levels)

    @property
    def total_prototypes(self) -> int:
        return sum(self.counts) * self.n_classes

    def copy(self) -> PrototypeBank:
        return PrototypeBank(
            [level.copy() for level in self.levels],
            self.temperature,
            self.radius,
            self.schedule,
            self.step,
        )

    def to_meta(self) -> dict[str, t.Any]:
        """Everything except the prototype values, as JSON-compatible data."""
        return {
            "counts": list(self.counts),
            "n_classes": self.n_classes,
            "dim": self.dim,
            "radius": self.radius,
            "temperature": self.temperature,
            "schedule": dataclasses.asdict(self.schedule),
            "step": self.step,
        }

    @classmethod
    def from_meta(cls, meta: dict[str, t.Any], levels: t.Sequence[np.ndarray]) -> PrototypeBank:
        return cls(
            levels,
            temperature=meta["temperature"],
            radius=meta["radius"],
            schedule=GammaSchedule(**meta["schedule"]),
            step=meta["step"],
        )


def init_prototypes(
    n_classes: int,
    counts: t.Sequence[int],
    dim: int,
    seed: int | np.random.Generator,
    radius: float = 1.0,
    temperature: float = 0.1,
    schedule: GammaSchedule | None = None,
) -> PrototypeBank:
    """Create a bank with mutually orthogonal prototypes within each class and
    level. A Gaussian ``(D, K)`` matrix is factored with QR, and the ``K``
    orthonormal columns become the prototypes, scaled to ``radius``.

    :param n_classes: Number of classes ``C``.
    :param counts: Prototypes per class ``K`` at each level.
    :param dim: Embedding width ``D``, at least ``max(counts)``.
    :param seed: Seed or generator. The same seed gives the same bank.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    levels = []

    for k in counts:
        if k < 1:
            raise ValueError(f"Each level needs at least one prototype per class, got {k}.")

        if k > dim:
            raise ValueError(
                f"Cannot make {k} mutually orthogonal prototypes in {dim} dimensions."
            )

        level = np.empty((n_classes, k, dim), dtype=np.float64)

        for c in range(n_classes):
            q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
            rows = q.T
            level[c] = radius * rows / np.linalg.norm(rows, axis=1, keepdims=True)

        levels.append(level)

    return PrototypeBank(levels, temperature, radius, schedule)


def _unit_rows(values: np.ndarray, name: str) -> np.ndarray:
    norm = np.linalg.norm(values, axis=-1, keepdims=True)

    if np.any(norm == 0.0):
        raise NumericError(f"{name}: zero-norm vector has no direction")

    return values / norm


def cosine_similarity(z: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row of ``z`` ``(N, D)`` with each prototype of a
    ``(..., D)`` array. The result has shape ``(N, ...)``.
    """
    unit_z = _unit_rows(np.asarray(z, dtype=np.float64), "cosine_similarity")
    unit_p = _unit_rows(prototypes, "cosine_similarity")
    return np.tensordot(unit_z, unit_p, axes=([1], [-1]))


def _level(bank: PrototypeBank, level: int) -> np.ndarray:
    if not -len(bank.levels) <= level < len(bank.levels):
        raise ValueError(f"Bank has {len(bank.levels)} levels, no level {level}.")

    return bank.levels[level]


def class_scores(z: Tensor, bank: PrototypeBank, level: int = -1) -> Tensor:
    """Score each class: ``log sum_k exp(cos(z, p_k) / T)`` over the class's
    prototypes at one level. Differentiable in ``z``, constant in the prototypes.

    :param z: Embeddings of shape ``(B, D)``, rows must be nonzero.
    :param bank: The prototypes.
    :param level: Level index, ``-1`` is the top level.
    :return: Scores of shape ``(B, C)``.
    """
    if z.ndim != 2 or z.shape[1] != bank.dim:
        raise ShapeError("class_scores", (bank.dim,), z.shape[1:] if z.ndim == 2 else z.shape)

    prototypes = _level(bank, level)
    c, k, d = prototypes.shape
    unit_p = _unit_rows(prototypes, "class_scores").reshape(c * k, d)
    sims = T.l2_normalize(z) @ Tensor(unit_p.T.astype(z.dtype))
    sims = sims.reshape(z.shape[0], c, k)
    return T.logsumexp(sims, axis=-1, temperature=bank.temperature)


def predict(z: Tensor, bank: PrototypeBank) -> tuple[np.ndarray, np.ndarray]:
    """Classify with the top level only. Returns the predicted class per row and
    the softmax probabilities over class scores.
    """
    with T.no_grad():
        probabilities = class_scores(z, bank, -1).softmax(axis=-1).data

    return probabilities.argmax(axis=1), probabilities


def _check_labels(labels: np.ndarray, n_classes: int, n_rows: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)

    if labels.shape != (n_rows,):
        raise ShapeError("ema_update", (n_rows,), labels.shape, "one label per row")

    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range for {n_classes} classes: {labels.tolist()}")

    return labels


def ema_update(
    bank: PrototypeBank, z: np.ndarray, labels: np.ndarray, step: int | None = None
) -> float:
    """Move prototypes toward the embeddings of their class in this batch.

    For each class present and each level, every sample's mass is split across
    the class's prototypes by a softmax over raw cosine similarities. Each
    prototype's target is the weighted mean of its samples, and the prototype
    becomes ``gamma * p + (1 - gamma) * target``, projected back to the sphere.
    Classes absent from the batch are untouched. With ``gamma == 1`` nothing
    changes at all.

    :param bank: Updated in place. Its ``step`` is set to the step used.
    :param z: Embeddings ``(B, D)``, computed without gradient recording.
    :param labels: Class index per row.
    :param step: Schedule step, defaults to ``bank.step``.
    :return: The momentum used.
    """
    z = np.asarray(z, dtype=np.float64)

    if z.ndim != 2 or z.shape[1] != bank.dim:
        raise ShapeError("ema_update", (bank.dim,), z.shape[1:] if z.ndim == 2 else z.shape)

    labels = _check_labels(labels, bank.n_classes, z.shape[0])
    step = bank.step if step is None else step
    gamma = gamma_schedule(step, bank.schedule)
    bank.step = step

    if gamma == 1.0:
        return gamma

    for level in bank.levels:
        for c in np.unique(labels):
            members = z[labels == c]
            prototypes = level[c]
            sims = cosine_similarity(members, prototypes)
            sims = sims - sims.max(axis=1, keepdims=True)
            weights = np.exp(sims)
            weights /= weights.sum(axis=1, keepdims=True)
            target = (weights.T @ members) / weights.sum(axis=0)[:, None]
            moved = gamma * prototypes + (1.0 - gamma) * target
            level[c] = bank.radius * _unit_rows(moved, "ema_update")

    return gamma


def diversity_penalty(prototypes: Tensor, radius: float = 1.0) -> Tensor:
    """Mean over classes of ``||P P^T - I||_F^2`` for one ``(C, K, D)`` level with
    rows divided by ``radius``.
    """
    unit = prototypes * (1.0 / radius)
    gram = unit @ unit.transpose(0, 2, 1)
    eye = np.eye(prototypes.shape[1], dtype=prototypes.dtype)
    diff = gram - Tensor(eye)
    return (diff * diff).sum(axis=(1, 2)).mean()


def diversity_loss(bank: PrototypeBank) -> float:
    """The diversity penalty averaged over levels. Zero exactly when every
    class's prototypes are orthonormal at every level.
    """
    with T.no_grad():
        values = [diversity_penalty(Tensor(level), bank.radius).item() for level in bank.levels]

    return float(np.mean(values))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    log_probs = logits.log_softmax(axis=-1)
    picked = log_probs[np.arange(labels.size), labels]
    return -picked.mean()


def total_loss(
    scores: t.Sequence[Tensor],
    labels: np.ndarray,
    bank: PrototypeBank,
    weights: t.Sequence[float],
    diversity_weight: float = 0.01,
) -> Tensor:
    """Sum over levels of ``w * cross_entropy + diversity_weight * penalty``.

    :param scores: One ``(B, C)`` class score matrix per bank level.
    :param labels: Class index per row.
    :param bank: Prototypes, for the diversity penalty of each level.
    :param weights: One positive weight per level.
    :param diversity_weight: Weight of the diversity penalty.
    """
    if len(scores) != len(bank.levels) or len(weights) != len(bank.levels):
        raise ShapeError(
            "total_loss",
            (len(bank.levels),),
            (len(scores), len(weights)),
            "one score matrix and weight per level",
        )

    loss: Tensor | None = None

    for s, w, level in zip(scores, weights, bank.levels):
        with T.no_grad():
            penalty = diversity_penalty(Tensor(level), bank.radius).item()

        term = cross_entropy(s, labels) * float(w) + diversity_weight * penalty
        loss = term if loss is None else loss + term

    assert loss is not None
    return loss


class LinearHead(Module):
    """Plain linear classifier over the embedding, used in place of prototypes
    to compare the two heads.
    """

    def __init__(
        self, d_model: int, n_classes: int, rng: np.random.Generator, dtype: t.Any = np.float32
    ) -> None:
        self.linear = Linear(d_model, n_classes, rng, dtype)

    def forward(self, z: Tensor) -> Tensor:
        return self.linear(z)
