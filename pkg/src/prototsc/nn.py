from __future__ import annotations

import typing as t

import numpy as np

from . import tensor as T
from .errors import SchemaError
from .tensor import Tensor


class Module:
    """Base class of every model component holding trainable parameters. Provides
    traversal over child modules and parameters, training mode switching, and
    conversion of parameters to and from plain arrays.

    Children are discovered from instance attributes: a :class:`Tensor` that
    requires gradients is a parameter, a :class:`Module` is a child, and lists or
    tuples of either are expanded with their index in the name.
    """

    training: bool = True
    """Whether dropout is active. Set with :meth:`train` and :meth:`eval`."""

    def forward(self, *args: t.Any, **kwargs: t.Any) -> t.Any:
        raise NotImplementedError

    def __call__(self, *args: t.Any, **kwargs: t.Any) -> t.Any:
        return self.forward(*args, **kwargs)

    def _find_children(self) -> t.Iterator[tuple[str, Module | Tensor]]:
        """Iterate over the modules and tensors this module references directly, in
        attribute definition order. Used by :meth:`named_parameters` and
        :meth:`modules` to perform a depth-first traversal of the tree.
        """
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> t.Iterator[tuple[str, Tensor]]:
        """Iterate over ``(dotted_name, tensor)`` for every trainable tensor in
        this module and its descendants. The order is stable for a given model
        structure.
        """
        for name, value in self._find_children():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield f"{prefix}{name}", value
            else:
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> t.Iterator[Module]:
        yield self

        for _, value in self._find_children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> Module:
        for module in self.modules():
            module.training = mode

        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copy every parameter's values into a dict keyed by dotted name."""
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: t.Mapping[str, np.ndarray]) -> None:
        """Replace parameter values from a dict created by :meth:`state_dict`. The
        names and shapes must match this model's exactly.

        :raises SchemaError: A name is missing, unexpected, or has the wrong shape.
        """
        params = dict(self.named_parameters())
        missing = sorted(params.keys() - state.keys())
        unexpected = sorted(state.keys() - params.keys())

        if missing or unexpected:
            raise SchemaError(
                f"parameter names do not match the model, missing {missing},"
                f" unexpected {unexpected}"
            )

        for name, p in params.items():
            value = np.asarray(state[name])

            if value.shape != p.shape:
                raise SchemaError(
                    f"parameter '{name}' has shape {value.shape}, expected {p.shape}"
                )

            p.data = value.astype(p.dtype, copy=True)
            p.grad = None


def parameter(data: np.ndarray, dtype: t.Any) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _uniform(
    rng: np.random.Generator, bound: float, shape: tuple[int, ...], dtype: t.Any
) -> Tensor:
    return parameter(rng.uniform(-bound, bound, size=shape), dtype)


class Linear(Module):
    """Affine map over the last axis, ``x @ weight + bias``. ``weight`` has shape
    ``(in_features, out_features)``. Weights and bias are initialized uniformly in
    ``[-1/sqrt(in_features), 1/sqrt(in_features)]``.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        bound = 1.0 / np.sqrt(in_features)
        self.weight = _uniform(rng, bound, (in_features, out_features), dtype)
        self.bias = _uniform(rng, bound, (out_features,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def zero_init(self) -> None:
        """Set weight and bias to zero so the layer outputs zeros."""
        self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class Conv1d(Module):
    """Length-preserving 1-D convolution over ``(B, C_in, L)`` input, see
    :class:`.tensor.Conv1d`.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dtype: t.Any = np.float32,
    ) -> None:
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        bound = 1.0 / np.sqrt(in_channels * kernel_size)
        self.weight = _uniform(
            rng, bound, (out_channels, in_channels, kernel_size), dtype
        )
        self.bias = _uniform(rng, bound, (out_channels,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias)

    def zero_init(self) -> None:
        self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class LayerNorm(Module):
    def __init__(self, features: int, dtype: t.Any = np.float32, eps: float = 1e-5) -> None:
        self.eps = eps
        self.weight = parameter(np.ones(features), dtype)
        self.bias = parameter(np.zeros(features), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, eps=self.eps)


class Dropout(Module):
    """Zero each element with probability ``p`` during training and scale the rest
    by ``1 / (1 - p)``. The identity in evaluation mode.

    :param p: Drop probability in ``[0, 1)``.
    :param rng: Generator for the masks. Shared by all dropout layers of a model so
        a seeded run draws the same masks in the same order.
    """

    def __init__(self, p: float, rng: np.random.Generator) -> None:
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x

        keep = self.rng.random(x.shape) >= self.p
        mask = keep.astype(x.dtype) / np.asarray(1.0 - self.p, dtype=x.dtype)
        return x * Tensor(mask)
