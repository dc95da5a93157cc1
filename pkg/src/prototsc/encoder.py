"""Transformer encoder over embedded features, pooled into one vector per
sample.
"""

from __future__ import annotations

import typing as t

import numpy as np

from .errors import ShapeError
from .nn import Dropout
from .nn import LayerNorm
from .nn import Linear
from .nn import Module
from .tensor import Tensor

POOLING_MODES = ("mean", "last", "max")


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table of shape ``(length, d_model)``. Even columns
    hold ``sin(pos / 10000^(2i / d_model))``, odd columns the matching cosine.
    """
    if d_model % 2:
        raise ValueError(f"Positional encoding needs an even width, got {d_model}.")

    position = np.arange(length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.empty((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(position / rate)
    table[:, 1::2] = np.cos(position / rate)
    return table


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with ``n_heads`` heads of width
    ``d_model // n_heads``. The softmax weights of the last call are kept in
    :attr:`attention_weights`, shape ``(B, heads, L, L)``.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        if d_model % n_heads:
            raise ValueError(f"{n_heads} heads do not divide width {d_model}.")

        self.d_model = d_model
        self.n_heads = n_heads
        self.query = Linear(d_model, d_model, rng, dtype)
        self.key = Linear(d_model, d_model, rng, dtype)
        self.value = Linear(d_model, d_model, rng, dtype)
        self.output = Linear(d_model, d_model, rng, dtype)
        self.attention_weights: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        b, length, d = x.shape
        head = d // self.n_heads

        def split(y: Tensor) -> Tensor:
            return y.reshape(b, length, self.n_heads, head).transpose(0, 2, 1, 3)

        q = split(self.query(x))
        k = split(self.key(x))
        v = split(self.value(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / float(np.sqrt(head)))
        weights = scores.softmax(axis=-1)
        self.attention_weights = weights.data
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, length, d)
        return self.output(out)


class EncoderLayer(Module):
    """Pre-norm encoder layer: ``z = z + drop(MHSA(LN(z)))`` then
    ``z = z + drop(FFN(LN(z)))`` with a GELU feed-forward network.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        d_ff: int,
        dropout: float,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        self.d_model = d_model
        self.attention_norm = LayerNorm(d_model, dtype)
        self.attention = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.attention_dropout = Dropout(dropout, dropout_rng)
        self.ff_norm = LayerNorm(d_model, dtype)
        self.ff_in = Linear(d_model, d_ff, rng, dtype)
        self.ff_out = Linear(d_ff, d_model, rng, dtype)
        self.ff_dropout = Dropout(dropout, dropout_rng)

    @property
    def attention_weights(self) -> np.ndarray | None:
        return self.attention.attention_weights

    def forward(self, z: Tensor) -> Tensor:
        return encoder_layer_forward(z, self)

    def zero_init(self) -> None:
        """Zero both residual branch output projections, making the layer the
        identity.
        """
        self.attention.output.zero_init()
        self.ff_out.zero_init()


def encoder_layer_forward(z: Tensor, layer: EncoderLayer) -> Tensor:
    if z.ndim != 3 or z.shape[-1] != layer.d_model:
        raise ShapeError("encoder_layer_forward", (layer.d_model,), z.shape[-1:])

    z = z + layer.attention_dropout(layer.attention(layer.attention_norm(z)))
    hidden = layer.ff_in(layer.ff_norm(z)).gelu()
    return z + layer.ff_dropout(layer.ff_out(hidden))


def pool(z: Tensor, mode: str) -> Tensor:
    """Reduce ``(B, L, D)`` over the temporal axis to ``(B, D)``."""
    if mode == "mean":
        return z.mean(axis=1)

    if mode == "last":
        return z[:, -1, :]

    if mode == "max":
        return z.max(axis=1)

    raise ValueError(f"Unknown pooling mode '{mode}'.")


class EncoderStack(Module):
    """Adds the positional table to ``(B, L, D)`` features, applies the encoder
    layers, and pools to ``(B, D)``.

    :param length: Series length ``L``.
    :param d_model: Feature width ``D``.
    :param n_layers: Number of encoder layers, at least 1.
    :param n_heads: Attention heads per layer.
    :param d_ff: Hidden width of the feed-forward networks.
    :param dropout: Dropout probability after each sublayer.
    :param pooling: One of ``"mean"``, ``"last"``, ``"max"``.
    :param positional: Add the sinusoidal position table.
    :param rng: Generator for weight initialization.
    :param dropout_rng: Generator for dropout masks.
    :param dtype: Parameter storage precision.
    """

    def __init__(
        self,
        length: int,
        d_model: int,
        n_layers: int,
        n_heads: int,
        d_ff: int,
        dropout: float,
        pooling: str,
        positional: bool,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        if n_layers < 1:
            raise ValueError("The encoder needs at least one layer.")

        if pooling not in POOLING_MODES:
            raise ValueError(f"Unknown pooling mode '{pooling}'.")

        self.length = length
        self.d_model = d_model
        self.pooling = pooling
        self.positional = (
            positional_encoding(length, d_model).astype(dtype) if positional else None
        )
        self.layers = [
            EncoderLayer(d_model, n_heads, d_ff, dropout, rng, dropout_rng, dtype)
            for _ in range(n_layers)
        ]

    def forward(self, e: Tensor) -> Tensor:
        return encode(e, self)


def encode(e: Tensor, stack: EncoderStack) -> Tensor:
    """Turn ``(B, D, L)`` features into the ``(B, D)`` embedding ``z``."""
    if e.ndim != 3 or e.shape[1:] != (stack.d_model, stack.length):
        raise ShapeError("encode", (stack.d_model, stack.length), e.shape[1:])

    z = e.transpose(0, 2, 1)

    if stack.positional is not None:
        z = z + Tensor(stack.positional)

    for layer in stack.layers:
        z = layer(z)

    return pool(z, stack.pooling)
