"""Reference implementations and fixtures used by the test suite and by the
``selftest`` command.
"""

from __future__ import annotations

import math
import os
import typing as t

import numpy as np

from . import tensor as T
from .benchmark import aggregate
from .config import TrainConfig
from .data import make_synthetic_split
from .data import save_ts
from .data import SyntheticSpec
from .prototypes import diversity_loss
from .prototypes import diversity_penalty
from .prototypes import ema_update
from .prototypes import GammaSchedule
from .prototypes import gamma_schedule
from .prototypes import init_prototypes
from .prototypes import PrototypeBank
from .tensor import Tensor

UEA_DATASETS = [
    "EthanolConcentration",
    "FaceDetection",
    "Handwriting",
    "Heartbeat",
    "JapaneseVowels",
    "PEMS-SF",
    "SelfRegulationSCP1",
    "SelfRegulationSCP2",
    "SpokenArabicDigits",
    "UWaveGestureLibrary",
]
UEA_METHODS = [
    "Fedformer",
    "PatchTST",
    "TSLANet",
    "ModernTCN",
    "FIC-TSC",
    "TimesNet",
    "NST",
    "GPT2",
    "ST-MEM",
    "Prototype",
]
UEA_ACCURACIES = [
    [0.361, 0.350, 0.304, 0.363, 0.392, 0.357, 0.262, 0.342, 0.323, 0.369],
    [0.671, 0.656, 0.668, 0.708, 0.684, 0.686, 0.673, 0.692, 0.644, 0.698],
    [0.212, 0.188, 0.579, 0.306, 0.616, 0.321, 0.374, 0.327, 0.184, 0.713],
    [0.746, 0.727, 0.776, 0.772, 0.810, 0.780, 0.790, 0.772, 0.746, 0.800],
    [0.954, 0.954, 0.992, 0.898, 0.991, 0.984, 0.981, 0.986, 0.935, 0.989],
    [0.827, 0.832, 0.618, 0.838, 0.792, 0.896, 0.855, 0.879, 0.770, 0.878],
    [0.573, 0.812, 0.918, 0.934, 0.901, 0.918, 0.915, 0.932, 0.877, 0.887],
    [0.517, 0.511, 0.323, 0.617, 0.594, 0.572, 0.572, 0.594, 0.561, 0.572],
    [0.988, 0.980, 0.999, 0.987, 0.999, 0.990, 0.980, 0.992, 0.970, 1.000],
    [0.703, 0.856, 0.903, 0.867, 0.902, 0.853, 0.856, 0.881, 0.694, 0.921],
]
"""Published test accuracies of ten methods on ten multivariate archive datasets,
one row per dataset.
"""


def brute_force_ema(
    levels: t.Sequence[np.ndarray],
    z: np.ndarray,
    labels: t.Sequence[int],
    gamma: float,
    radius: float = 1.0,
) -> list[np.ndarray]:
    """Loop-by-loop prototype update, written for clarity rather than speed, to
    check :func:`.ema_update` against. Returns new level arrays.
    """
    out = [np.array(level, dtype=np.float64) for level in levels]

    if gamma == 1.0:
        return out

    def cos(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    for level in out:
        n_classes, n_protos, dim = level.shape

        for c in range(n_classes):
            members = [i for i in range(len(labels)) if labels[i] == c]

            if not members:
                continue

            old = level[c].copy()

            for k in range(n_protos):
                numerator = np.zeros(dim)
                denominator = 0.0

                for i in members:
                    sims = [cos(z[i], old[j]) for j in range(n_protos)]
                    peak = max(sims)
                    q = math.exp(sims[k] - peak) / sum(math.exp(s - peak) for s in sims)
                    numerator += q * z[i]
                    denominator += q

                moved = gamma * old[k] + (1.0 - gamma) * numerator / denominator
                level[c, k] = radius * moved / np.linalg.norm(moved)

    return out


def random_bank(
    seed: int,
    n_classes: int,
    counts: t.Sequence[int],
    dim: int,
    schedule: GammaSchedule | None = None,
) -> PrototypeBank:
    return init_prototypes(n_classes, counts, dim, seed, schedule=schedule)


def tiny_config(**changes: t.Any) -> TrainConfig:
    """A small 64-bit model with no dropout, quick enough for gradient checks
    and short training runs in tests.
    """
    values: dict[str, t.Any] = {
        "dtype": "float64",
        "d_model": 8,
        "n_heads": 2,
        "kernel_sizes": (3, 5),
        "inception_layers": 1,
        "encoder_layers": 1,
        "dropout": 0.0,
        "prototype_counts": (1, 2),
        "batch_size": 8,
        "max_epochs": 3,
        "patience": 2,
        "validation_fraction": 0.25,
    }
    values.update(changes)
    return TrainConfig(**values)


def tiny_spec(**changes: t.Any) -> SyntheticSpec:
    values: dict[str, t.Any] = {
        "n_classes": 2,
        "n_train": 24,
        "n_test": 12,
        "length": 16,
        "base_frequencies": (1.0, 4.0),
        "noise_std": 0.1,
    }
    values.update(changes)
    return SyntheticSpec(**values)


def write_dataset_pair(directory: str | os.PathLike[str], name: str, spec: SyntheticSpec) -> tuple[str, str]:
    """Write a synthetic problem as ``<name>_TRAIN.ts`` and ``<name>_TEST.ts``."""
    train_set, test_set = make_synthetic_split(spec)
    train_path = os.path.join(directory, f"{name}_TRAIN.ts")
    test_path = os.path.join(directory, f"{name}_TEST.ts")
    save_ts(train_path, train_set, name)
    save_ts(test_path, test_set, name)
    return train_path, test_path


class Check(t.NamedTuple):
    name: str
    passed: bool
    detail: str


def _check(name: str, passed: bool | np.bool_, detail: str) -> Check:
    return Check(name, bool(passed), detail)


def run_selftest(seed: int = 2025) -> list[Check]:
    """Run a fast subset of the oracle and invariant checks and report each."""
    rng = np.random.default_rng(seed)
    checks = []

    value = T.lse_reduce([1.0, -1.0], 0.07).item()
    checks.append(_check("lse_reduce", abs(value - 1.0 / 0.07) < 1e-9, f"{value:.9f}"))

    worst = 0.0

    for length in (4, 24, 128, 1751):
        x = Tensor(rng.standard_normal((2, length)))
        real, imag = T.rfft(x)
        worst = max(worst, float(np.abs(T.irfft(real, imag, length).data - x.data).max()))

    checks.append(_check("fft_round_trip", worst <= 1e-6, f"max error {worst:.2e}"))

    # Random output weights keep every true gradient coordinate away from zero.
    w7 = Tensor(rng.uniform(0.5, 1.5, 7))
    w9 = Tensor(rng.uniform(0.5, 1.5, 9))
    w5 = Tensor(rng.uniform(0.5, 1.5, 5))
    cases: dict[str, tuple[t.Callable[..., Tensor], list[Tensor]]] = {
        "conv1d": (
            lambda x, w, b: (T.conv1d(x, w, b) * w7).sum(),
            [Tensor(rng.standard_normal(s)) for s in [(2, 3, 7), (4, 3, 3), (4,)]],
        ),
        "spectral_filter": (
            lambda x, m: (T.spectral_filter(x, m) * w9).sum(),
            [Tensor(rng.standard_normal((2, 3, 9))), Tensor(rng.standard_normal((3, 5)))],
        ),
        "layer_norm": (
            lambda x, w, b: (T.layer_norm(x, w, b) * w5).sum(),
            [Tensor(rng.standard_normal(s)) for s in [(3, 5), (5,), (5,)]],
        ),
        "logsumexp": (
            lambda x: T.logsumexp(x, axis=-1, temperature=0.5).sum(),
            [Tensor(rng.standard_normal((3, 4)))],
        ),
    }

    for name, (f, point) in cases.items():
        error = T.finite_diff_check(f, point, eps=1e-5)
        checks.append(_check(f"gradient_{name}", error <= 1e-4, f"relative error {error:.2e}"))

    schedule = GammaSchedule()
    table = {0: 1.0, 2: 1.0, 8: 0.995, 13: 0.99, 1000: 0.999}
    actual = {s: gamma_schedule(s, schedule) for s in table}
    bad = {s: v for s, v in actual.items() if abs(v - table[s]) > 1e-6}
    checks.append(_check("gamma_schedule", not bad, f"mismatches {bad}" if bad else "table matches"))

    worst = 0.0

    for i in range(20):
        n_classes = (2, 5)[i % 2]
        bank = random_bank(
            seed + i, n_classes, ((1, 2, 3)[i % 3],), 6, GammaSchedule(constant=0.9)
        )
        z = rng.standard_normal((16, 6))
        labels = rng.integers(0, n_classes, 16)
        expected = brute_force_ema(bank.levels, z, labels, 0.9)
        ema_update(bank, z, labels)
        worst = max(worst, max(float(np.abs(a - b).max()) for a, b in zip(bank.levels, expected)))

    checks.append(_check("ema_oracle", worst <= 1e-6, f"max difference {worst:.2e}"))

    fresh = random_bank(seed, 3, (2, 3), 16)
    duplicated = PrototypeBank([np.tile(np.eye(1, 4), (1, 2, 1))])
    div_fresh = diversity_loss(fresh)
    div_dup = diversity_loss(duplicated)
    checks.append(
        _check(
            "diversity_loss",
            div_fresh <= 1e-10 and abs(div_dup - 2.0) <= 1e-12,
            f"fresh {div_fresh:.2e}, duplicated {div_dup}",
        )
    )
    error = T.finite_diff_check(
        lambda p: diversity_penalty(p), [Tensor(rng.standard_normal((1, 2, 4)))]
    )
    checks.append(_check("gradient_diversity", error <= 1e-4, f"relative error {error:.2e}"))

    result = aggregate(UEA_ACCURACIES, UEA_METHODS, UEA_DATASETS)
    accuracy = result.average_accuracy["Prototype"]
    rank = result.average_rank["Prototype"]
    checks.append(
        _check(
            "aggregate",
            abs(accuracy - 0.783) <= 5e-4 and abs(rank - 2.8) <= 0.25,
            f"average accuracy {accuracy:.4f}, average rank {rank:.2f}",
        )
    )
    return checks
