"""Training configuration, named experiment variants, and the JSON run
configuration file.

Every :class:`TrainConfig` field declares its value validators in its field
metadata. Cross-field rules are data validators. Validation collects every
message before raising, so a bad config file reports all of its problems at
once.
"""

from __future__ import annotations

import dataclasses
import json
import os
import typing as t

import numpy as np

from .errors import SchemaError
from .prototypes import GammaSchedule
from .validators import IsBool
from .validators import IsInteger
from .validators import Length
from .validators import NumberRange
from .validators import OneOf
from .validators import validate_data
from .validators import ValidationError

FORMAT_VERSION = 1
"""Version of every file format written by this library."""

DEFAULT_SEED = 2025
SEED_ENV_VAR = "PDF_SEED"


def _field(default: t.Any, *validators: t.Any) -> t.Any:
    return dataclasses.field(default=default, metadata={"validators": list(validators)})


def _positive_int() -> list[t.Any]:
    return [IsInteger(), NumberRange(min=1)]


def _check_heads(data: dict[str, t.Any]) -> None:
    if data["d_model"] % data["n_heads"]:
        raise ValidationError({"n_heads": ["Must divide d_model."]})


def _check_width(data: dict[str, t.Any]) -> None:
    if data["d_model"] % 2:
        raise ValidationError({"d_model": ["Must be even for positional encoding."]})

    if data["d_model"] < len(data["kernel_sizes"]) + 1:
        raise ValidationError(
            {"d_model": ["Must be at least the number of inception branches."]}
        )


def _check_prototypes(data: dict[str, t.Any]) -> None:
    errors: dict[str, list[str]] = {}

    if max(data["prototype_counts"]) > data["d_model"]:
        errors["prototype_counts"] = [
            "Each count must be at most d_model, orthogonal prototypes need that"
            " many dimensions."
        ]

    weights = data["level_weights"]

    if weights and len(weights) != len(data["prototype_counts"]):
        errors["level_weights"] = ["Must have one weight per prototype level."]

    if data["gamma_a"] > data["gamma_b"]:
        errors["gamma_a"] = ["Must be at most gamma_b."]

    if errors:
        raise ValidationError(errors)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run. Defaults reproduce the unified
    configuration: two encoder layers, batch size 16, dropout 0.2, width 128,
    learning rate 0.001, 150 epochs, patience 20, seed 2025.

    Creating an instance validates it, raising
    :exc:`.ValidationError` with a dict of messages per field.
    """

    seed: int = _field(DEFAULT_SEED, IsInteger(), NumberRange(min=0))
    dtype: str = _field("float32", OneOf(["float32", "float64"]))
    normalize: bool = _field(True, IsBool())

    # embedding
    d_model: int = _field(128, IsInteger(), NumberRange(min=2))
    frequency_weighting: bool = _field(True, IsBool())
    embedding: str = _field("inception", OneOf(["inception", "linear"]))
    inception_layers: int = _field(2, IsInteger(), NumberRange(min=0))
    kernel_sizes: tuple[int, ...] = _field(
        (3, 7, 15), Length(min=1), [IsInteger(), NumberRange(min=1)]
    )
    pool_size: int = _field(3, *_positive_int())

    # encoder
    encoder_layers: int = _field(2, *_positive_int())
    n_heads: int = _field(4, *_positive_int())
    ff_multiplier: int = _field(2, *_positive_int())
    dropout: float = _field(0.2, NumberRange(min=0, max=0.95))
    pooling: str = _field("mean", OneOf(["mean", "last", "max"]))
    positional_encoding: bool = _field(True, IsBool())

    # head
    head: str = _field("prototype", OneOf(["prototype", "linear"]))
    prototype_counts: tuple[int, ...] = _field(
        (2, 3), Length(min=1), [IsInteger(), NumberRange(min=1)]
    )
    level_weights: tuple[float, ...] = _field(
        (), [NumberRange(min=0, exclusive_min=True)]
    )
    temperature: float = _field(0.1, NumberRange(min=0, exclusive_min=True))
    radius: float = _field(1.0, NumberRange(min=0, exclusive_min=True))
    diversity_weight: float = _field(0.01, NumberRange(min=0))

    # prototype momentum
    gamma_mode: str = _field("schedule", OneOf(["schedule", "constant"]))
    gamma_constant: float = _field(0.999, NumberRange(min=0, max=1, exclusive_min=True))
    gamma_warmup: int = _field(3, IsInteger(), NumberRange(min=0))
    gamma_active: int = _field(10, IsInteger(), NumberRange(min=0))
    gamma_a: float = _field(0.99, NumberRange(min=0, max=1, exclusive_min=True))
    gamma_b: float = _field(0.999, NumberRange(min=0, max=1, exclusive_min=True))
    gamma_tau: float = _field(30.0, NumberRange(min=0, exclusive_min=True))
    schedule_unit: str = _field("epoch", OneOf(["epoch", "iteration"]))

    # optimization
    batch_size: int = _field(16, *_positive_int())
    learning_rate: float = _field(0.001, NumberRange(min=0, exclusive_min=True))
    max_epochs: int = _field(150, *_positive_int())
    patience: int = _field(20, *_positive_int())
    validation_fraction: float = _field(0.2, NumberRange(min=0, max=0.9))

    data_validators: t.ClassVar[list[t.Any]] = [
        _check_heads,
        _check_width,
        _check_prototypes,
    ]

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)

            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))
            elif f.type == "float" and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))

        self.validate()

    def validate(self) -> None:
        items = {f.name: f.metadata["validators"] for f in dataclasses.fields(self)}
        validate_data(items, self.data_validators, dataclasses.asdict(self))

    def to_dict(self) -> dict[str, t.Any]:
        """JSON-compatible values, tuples as lists."""
        return {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(self).items()
        }

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> TrainConfig:
        """Create a config from a mapping. Omitted keys take their defaults.

        :raises ValidationError: A key is unknown or a value is invalid.
        """
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(data.keys() - names)

        if unknown:
            raise ValidationError({k: ["Unknown key."] for k in unknown})

        return cls(**data)

    def replace(self, **changes: t.Any) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def variant(self, name: str) -> TrainConfig:
        """Apply one of the named :data:`VARIANTS` on top of this config."""
        if name not in VARIANTS:
            raise ValidationError(
                {"variants": [f"Unknown variant '{name}'. Choose from {', '.join(VARIANTS)}."]}
            )

        return self.replace(**VARIANTS[name])

    @property
    def numpy_dtype(self) -> type[np.floating[t.Any]]:
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def d_ff(self) -> int:
        return self.d_model * self.ff_multiplier

    @property
    def level_weight_values(self) -> tuple[float, ...]:
        return self.level_weights or (1.0,) * len(self.prototype_counts)

    @property
    def gamma_schedule(self) -> GammaSchedule:
        return GammaSchedule(
            warmup=self.gamma_warmup,
            active=self.gamma_active,
            gamma_a=self.gamma_a,
            gamma_b=self.gamma_b,
            tau=self.gamma_tau,
            constant=self.gamma_constant if self.gamma_mode == "constant" else None,
        )


VARIANTS: dict[str, dict[str, t.Any]] = {
    "full": {},
    "no_frequency_weight": {"frequency_weighting": False},
    "linear_embedding": {"embedding": "linear"},
    "linear_head": {"head": "linear"},
    "single_level": {"prototype_counts": (3,), "level_weights": ()},
    "gamma_fixed_1": {"gamma_mode": "constant", "gamma_constant": 1.0},
    "gamma_fixed_0.999": {"gamma_mode": "constant", "gamma_constant": 0.999},
    "gamma_fixed_0.95": {"gamma_mode": "constant", "gamma_constant": 0.95},
    "gamma_0.7_0.99": {"gamma_a": 0.7, "gamma_b": 0.99},
    "gamma_0.95_0.999": {"gamma_a": 0.95, "gamma_b": 0.999},
    "gamma_0.97_0.997": {"gamma_a": 0.97, "gamma_b": 0.997},
    "k_3_3_3": {"prototype_counts": (3, 3, 3), "level_weights": ()},
    "k_5_3": {"prototype_counts": (5, 3), "level_weights": ()},
    "k_3_3": {"prototype_counts": (3, 3), "level_weights": ()},
    "k_2_2": {"prototype_counts": (2, 2), "level_weights": ()},
}
"""Named changes for ablation and sensitivity runs, applied with
:meth:`TrainConfig.variant`.
"""

_RUN_KEYS = ("train_path", "test_path", "data_dir", "out_dir", "variants", "format_version")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """A configuration file: every :class:`TrainConfig` key at the top level,
    plus dataset paths, output directory, and benchmark variants.
    """

    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    train_path: str | None = None
    test_path: str | None = None
    data_dir: str | None = None
    out_dir: str | None = None
    variants: tuple[str, ...] = ("full",)

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> RunConfig:
        """
        :raises SchemaError: ``format_version`` is not supported.
        :raises ValidationError: A key is unknown or a value is invalid.
        """
        version = data.get("format_version", FORMAT_VERSION)

        if version != FORMAT_VERSION:
            raise SchemaError(
                f"config format_version {version!r} is not supported, expected"
                f" {FORMAT_VERSION}"
            )

        train_data = {k: v for k, v in data.items() if k not in _RUN_KEYS}
        errors: dict[str, list[str]] = {}

        for key in ("train_path", "test_path", "data_dir", "out_dir"):
            if data.get(key) is not None and not isinstance(data[key], str):
                errors[key] = ["Must be a path string."]

        variants = data.get("variants", ["full"])

        if not isinstance(variants, list) or not variants:
            errors["variants"] = ["Must be a non-empty list of variant names."]
        else:
            unknown = [v for v in variants if v not in VARIANTS]

            if unknown:
                errors["variants"] = [f"Unknown variants {unknown}."]

        try:
            train = TrainConfig.from_dict(train_data)
        except ValidationError as e:
            assert isinstance(e.message, dict)
            errors.update(e.message)

        if errors:
            raise ValidationError(errors)

        return cls(
            train=train,
            train_path=data.get("train_path"),
            test_path=data.get("test_path"),
            data_dir=data.get("data_dir"),
            out_dir=data.get("out_dir"),
            variants=tuple(variants),
        )

    def to_dict(self) -> dict[str, t.Any]:
        """The effective configuration, suitable for writing back as a file that
        reproduces the run.
        """
        out: dict[str, t.Any] = {"format_version": FORMAT_VERSION}
        out.update(self.train.to_dict())
        out["train_path"] = self.train_path
        out["test_path"] = self.test_path
        out["data_dir"] = self.data_dir
        out["out_dir"] = self.out_dir
        out["variants"] = list(self.variants)
        return out

    def replace(self, **changes: t.Any) -> RunConfig:
        return dataclasses.replace(self, **changes)


def resolve_seed(
    flag: int | None, data: t.Mapping[str, t.Any], environ: t.Mapping[str, str]
) -> int:
    """Pick the seed: the command line flag, then the config file's ``seed``, then
    the ``PDF_SEED`` environment variable, then 2025.
    """
    if flag is not None:
        return flag

    if "seed" in data:
        return data["seed"]  # type: ignore[no-any-return]

    if SEED_ENV_VAR in environ:
        try:
            return int(environ[SEED_ENV_VAR])
        except ValueError:
            raise ValidationError(
                {"seed": [f"{SEED_ENV_VAR} must be an integer, got {environ[SEED_ENV_VAR]!r}."]}
            ) from None

    return DEFAULT_SEED


def load_config(
    path: str | os.PathLike[str] | None,
    seed: int | None = None,
    environ: t.Mapping[str, str] | None = None,
) -> RunConfig:
    """Read a JSON configuration file, or use all defaults if ``path`` is
    ``None``, and apply the seed precedence of :func:`resolve_seed`.
    """
    data: dict[str, t.Any] = {}

    if path is not None:
        with open(path, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{os.fspath(path)}: invalid JSON: {e}") from None

        if not isinstance(data, dict):
            raise SchemaError(f"{os.fspath(path)}: config must be a JSON object")

    data["seed"] = resolve_seed(seed, data, os.environ if environ is None else environ)
    return RunConfig.from_dict(data)


def write_json(path: str | os.PathLike[str], data: t.Any) -> None:
    """Write JSON with sorted keys and a trailing newline, so equal data gives
    identical bytes.
    """
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
