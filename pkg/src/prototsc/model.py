from __future__ import annotations

import json
import os
import typing as t

import numpy as np

from . import tensor as T
from .config import FORMAT_VERSION
from .config import TrainConfig
from .embedding import EmbeddingStack
from .encoder import EncoderStack
from .errors import SchemaError
from .errors import ShapeError
from .nn import Module
from .prototypes import class_scores
from .prototypes import cross_entropy
from .prototypes import ema_update
from .prototypes import gamma_schedule
from .prototypes import init_prototypes
from .prototypes import LinearHead
from .prototypes import PrototypeBank
from .prototypes import total_loss
from .tensor import Tensor


class Rngs(t.NamedTuple):
    """Independent random streams derived from one seed."""

    init: np.random.Generator
    dropout: np.random.Generator
    prototypes: np.random.Generator
    shuffle: np.random.Generator


def make_rngs(seed: int) -> Rngs:
    streams = np.random.SeedSequence(seed).spawn(len(Rngs._fields))
    return Rngs(*(np.random.default_rng(s) for s in streams))


class PrototypeClassifier(Module):
    """The full classifier: embedding stack, encoder, and either a prototype
    bank or a linear head.

    :param config: Architecture and head settings.
    :param n_variables: Input channels ``V``.
    :param length: Series length ``L``.
    :param class_names: Label names, their count is ``C``.
    :param rngs: Random streams, derived from ``config.seed`` by default.
    """

    def __init__(
        self,
        config: TrainConfig,
        n_variables: int,
        length: int,
        class_names: t.Sequence[str],
        rngs: Rngs | None = None,
    ) -> None:
        rngs = rngs or make_rngs(config.seed)
        dtype = config.numpy_dtype
        self.config = config
        self.class_names = list(class_names)
        self.dtype = dtype
        self.embedding = EmbeddingStack(
            n_variables,
            length,
            config.d_model,
            config.inception_layers if config.embedding == "inception" else 0,
            config.kernel_sizes,
            config.pool_size,
            rngs.init,
            dtype,
            frequency_weighting=config.frequency_weighting,
        )
        self.encoder = EncoderStack(
            length,
            config.d_model,
            config.encoder_layers,
            config.n_heads,
            config.d_ff,
            config.dropout,
            config.pooling,
            config.positional_encoding,
            rngs.init,
            rngs.dropout,
            dtype,
        )
        self.head: LinearHead | None = None
        self.bank: PrototypeBank | None = None

        if config.head == "linear":
            self.head = LinearHead(config.d_model, len(self.class_names), rngs.init, dtype)
        else:
            self.bank = init_prototypes(
                len(self.class_names),
                config.prototype_counts,
                config.d_model,
                rngs.prototypes,
                radius=config.radius,
                temperature=config.temperature,
                schedule=config.gamma_schedule,
            )

    @property
    def n_variables(self) -> int:
        return self.embedding.n_variables

    @property
    def length(self) -> int:
        return self.embedding.length

    def embed(self, x: Tensor) -> Tensor:
        """Map ``(B, V, L)`` input to ``(B, D)`` embeddings."""
        return self.encoder(self.embedding(x))

    def forward(self, x: Tensor) -> list[Tensor]:
        """Class scores, one ``(B, C)`` matrix per prototype level (lowest first),
        or a single matrix of logits for the linear head.
        """
        z = self.embed(x)

        if self.bank is None:
            assert self.head is not None
            return [self.head(z)]

        return [class_scores(z, self.bank, level) for level in range(len(self.bank.levels))]

    def loss(self, scores: list[Tensor], labels: np.ndarray) -> Tensor:
        if self.bank is None:
            return cross_entropy(scores[0], labels)

        return total_loss(
            scores,
            labels,
            self.bank,
            self.config.level_weight_values,
            self.config.diversity_weight,
        )

    def _batches(self, samples: np.ndarray, batch_size: int) -> t.Iterator[Tensor]:
        if samples.ndim != 3 or samples.shape[1:] != (self.n_variables, self.length):
            raise ShapeError("predict", (self.n_variables, self.length), samples.shape[1:])

        for start in range(0, samples.shape[0], batch_size):
            yield Tensor(samples[start : start + batch_size], dtype=self.dtype)

    def embeddings(self, samples: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Evaluation-mode embeddings of shape ``(N, D)`` in 64-bit, computed
        without recording. The training mode is restored afterward.
        """
        training = self.training
        self.eval()

        try:
            with T.no_grad():
                parts = [self.embed(x).data for x in self._batches(samples, batch_size)]
        finally:
            self.train(training)

        if not parts:
            return np.empty((0, self.config.d_model))

        return np.concatenate(parts).astype(np.float64)

    def predict_proba(self, samples: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Class probabilities of shape ``(N, C)`` from the top level only."""
        training = self.training
        self.eval()
        parts = []

        try:
            with T.no_grad():
                for x in self._batches(samples, batch_size):
                    parts.append(self.forward(x)[-1].softmax(axis=-1).data)
        finally:
            self.train(training)

        return np.concatenate(parts) if parts else np.empty((0, len(self.class_names)))

    def predict(self, samples: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return self.predict_proba(samples, batch_size).argmax(axis=1)

    def schedule_gamma(self, step: int) -> float:
        if self.bank is None:
            return 1.0

        return gamma_schedule(step, self.bank.schedule)

    def update_prototypes(self, samples: np.ndarray, labels: np.ndarray, step: int) -> float:
        """Run one EMA update on the bank from a batch, using evaluation-mode
        embeddings. Returns the momentum used. Nothing is computed when the
        momentum is 1.
        """
        if self.bank is None:
            return 1.0

        if self.schedule_gamma(step) == 1.0:
            self.bank.step = step
            return 1.0

        return ema_update(self.bank, self.embeddings(samples), labels, step)

    def snapshot(self) -> tuple[dict[str, np.ndarray], PrototypeBank | None]:
        return self.state_dict(), self.bank.copy() if self.bank is not None else None

    def restore(self, snapshot: tuple[dict[str, np.ndarray], PrototypeBank | None]) -> None:
        state, bank = snapshot
        self.load_state_dict(state)

        if bank is not None:
            self.bank = bank.copy()


def save_checkpoint(
    path: str | os.PathLike[str],
    model: PrototypeClassifier,
    extra: dict[str, t.Any] | None = None,
) -> None:
    """Write parameters and prototypes to an ``.npz`` file. Arrays are stored
    under ``param/<name>`` and ``bank/level_<i>``, everything else as JSON under
    ``meta``.
    """
    arrays = {f"param/{name}": value for name, value in model.state_dict().items()}
    meta: dict[str, t.Any] = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "n_variables": model.n_variables,
        "length": model.length,
        "class_names": model.class_names,
        "bank": None,
        "extra": extra or {},
    }

    if model.bank is not None:
        meta["bank"] = model.bank.to_meta()

        for i, level in enumerate(model.bank.levels):
            arrays[f"bank/level_{i}"] = level

    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))

    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str | os.PathLike[str]) -> tuple[PrototypeClassifier, dict[str, t.Any]]:
    """Rebuild a model from :func:`save_checkpoint` output. The bank has exactly
    the levels stored in the file. Returns the model and the checkpoint's meta.

    :raises SchemaError: The file is not a supported checkpoint.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (ValueError, KeyError) as e:
        raise SchemaError(f"{os.fspath(path)}: not a checkpoint: {e}") from None

    if "meta" not in arrays:
        raise SchemaError(f"{os.fspath(path)}: checkpoint has no meta record")

    meta = json.loads(str(arrays["meta"]))

    if meta.get("format_version") != FORMAT_VERSION:
        raise SchemaError(
            f"{os.fspath(path)}: checkpoint format_version"
            f" {meta.get('format_version')!r} is not supported, expected {FORMAT_VERSION}"
        )

    config = TrainConfig.from_dict(meta["config"])
    model = PrototypeClassifier(config, meta["n_variables"], meta["length"], meta["class_names"])
    model.load_state_dict(
        {k.removeprefix("param/"): v for k, v in arrays.items() if k.startswith("param/")}
    )

    if meta["bank"] is not None:
        levels = [
            arrays[k]
            for k in sorted(
                (k for k in arrays if k.startswith("bank/level_")),
                key=lambda k: int(k.removeprefix("bank/level_")),
            )
        ]

        if not levels:
            raise SchemaError(f"{os.fspath(path)}: checkpoint has no prototype levels")

        model.bank = PrototypeBank.from_meta(meta["bank"], levels)

    return model, meta
