"""The embedding stage: learnable frequency weighting of the raw input, a
pointwise projection to the model width, and a residual stack of multi-branch
inception layers.
"""

from __future__ import annotations

import typing as t

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv1d
from .nn import Module
from .nn import parameter
from .tensor import Tensor


class FrequencyMask(Module):
    """One real weight per channel and nonnegative frequency bin, shape
    ``(V, L // 2 + 1)``, initialized to ones and shared across the batch.
    """

    def __init__(self, n_variables: int, length: int, dtype: t.Any = np.float32) -> None:
        self.n_variables = n_variables
        self.length = length
        self.weights = parameter(np.ones((n_variables, length // 2 + 1)), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return frequency_weight(x, self)


def frequency_weight(x: Tensor, mask: FrequencyMask | Tensor) -> Tensor:
    """Scale each frequency component of each channel, ``irfft(W * rfft(x))`` along
    the temporal axis. Differentiable in both ``x`` and the mask.

    :param x: Input of shape ``(B, V, L)``.
    :param mask: Weights of shape ``(V, L // 2 + 1)``.
    """
    weights = mask.weights if isinstance(mask, FrequencyMask) else mask

    if x.ndim != 3 or weights.shape != (x.shape[1], x.shape[2] // 2 + 1):
        raise ShapeError("frequency_weight", x.shape, weights.shape)

    return T.spectral_filter(x, weights)


class InceptionLayer(Module):
    """Parallel convolutions of several kernel sizes plus a max-pool branch,
    concatenated along channels, projected back to the input width by a
    pointwise convolution followed by ReLU, and added to the input.

    :param channels: Input and output channel count ``D``.
    :param kernel_sizes: One convolution branch per size.
    :param pool_size: Window of the max-pool branch, which is followed by a
        pointwise convolution.
    :param rng: Generator for weight initialization.
    :param dtype: Parameter storage precision.
    """

    def __init__(
        self,
        channels: int,
        kernel_sizes: t.Sequence[int],
        pool_size: int,
        rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        n_branches = len(kernel_sizes) + 1

        if channels < n_branches:
            raise ValueError(
                f"{channels} channels cannot be shared by {n_branches} branches."
            )

        width = channels // n_branches
        self.channels = channels
        self.pool_size = pool_size
        self.branches = [Conv1d(channels, width, k, rng, dtype) for k in kernel_sizes]
        self.pool_branch = Conv1d(channels, width, 1, rng, dtype)
        self.projection = Conv1d(width * n_branches, channels, 1, rng, dtype)

    def forward(self, e: Tensor) -> Tensor:
        return inception_forward(e, self)

    def zero_init(self) -> None:
        """Zero every branch and the projection, making the layer the identity."""
        for conv in [*self.branches, self.pool_branch, self.projection]:
            conv.zero_init()


def inception_forward(e: Tensor, layer: InceptionLayer) -> Tensor:
    """Apply one inception layer to ``(B, D, L)`` features, see
    :class:`InceptionLayer`.
    """
    if e.ndim != 3 or e.shape[1] != layer.channels:
        raise ShapeError("inception_forward", (layer.channels,), e.shape[1:2] or e.shape)

    outputs = [branch(e) for branch in layer.branches]
    outputs.append(layer.pool_branch(T.max_pool1d(e, layer.pool_size)))
    out = layer.projection(T.concat(outputs, axis=1)).relu() + e
    assert out.shape == e.shape
    return out


class EmbeddingStack(Module):
    """Maps ``(B, V, L)`` input to ``(B, D, L)`` features.

    :param n_variables: Input channels ``V``.
    :param length: Series length ``L``.
    :param d_model: Feature width ``D``.
    :param n_layers: Number of inception layers, may be 0.
    :param kernel_sizes: Convolution branch kernel sizes.
    :param pool_size: Max-pool branch window.
    :param rng: Generator for weight initialization.
    :param dtype: Parameter storage precision.
    :param frequency_weighting: Apply a learnable :class:`FrequencyMask` first.
    """

    def __init__(
        self,
        n_variables: int,
        length: int,
        d_model: int,
        n_layers: int,
        kernel_sizes: t.Sequence[int],
        pool_size: int,
        rng: np.random.Generator,
        dtype: t.Any = np.float32,
        frequency_weighting: bool = True,
    ) -> None:
        self.n_variables = n_variables
        self.length = length
        self.d_model = d_model
        self.frequency_mask = (
            FrequencyMask(n_variables, length, dtype) if frequency_weighting else None
        )
        self.projection = Conv1d(n_variables, d_model, 1, rng, dtype)
        self.layers = [
            InceptionLayer(d_model, kernel_sizes, pool_size, rng, dtype)
            for _ in range(n_layers)
        ]

    def forward(self, x: Tensor) -> Tensor:
        return embed(x, self)


def embed(x: Tensor, stack: EmbeddingStack) -> Tensor:
    """Frequency weighting (if enabled), projection to ``D`` channels, then the
    inception layers.
    """
    if x.ndim != 3 or x.shape[1:] != (stack.n_variables, stack.length):
        raise ShapeError("embed", (stack.n_variables, stack.length), x.shape[1:])

    if stack.frequency_mask is not None:
        x = frequency_weight(x, stack.frequency_mask)

    e = stack.projection(x)

    for layer in stack.layers:
        e = layer(e)

    return e
