"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable computation in the model is built from the operations in this
module. A :class:`Tensor` wraps a NumPy array. Applying an operation to tensors that
require gradients records the operation on the result, and :meth:`Tensor.backward`
replays those records in reverse through a :class:`Tape`.

Gradients always accumulate in 64-bit floats, whatever the storage precision.
"""

from __future__ import annotations

import contextlib
import threading
import typing as t

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import NumericError
from .errors import ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations on the current thread are recorded for backward."""
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> t.Iterator[None]:
    """Disable recording for the duration of the block, on this thread only.
    Used for evaluation and for prototype updates, which never take part in
    backpropagation.
    """
    previous = is_grad_enabled()
    _state.grad_enabled = False

    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A dense array of real values, optionally participating in gradient
    recording.

    :param data: Array-like values. Integer input is stored as 64-bit floats,
        floating point input keeps its precision unless ``dtype`` is given.
    :param requires_grad: Whether gradients with respect to this tensor are
        computed by :meth:`backward`.
    :param dtype: Storage precision to convert to.
    """

    def __init__(
        self,
        data: t.Any,
        requires_grad: bool = False,
        dtype: t.Any = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype)

        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)

        self.data: np.ndarray = array
        """The values, row-major."""

        self.requires_grad: bool = requires_grad

        self.grad: np.ndarray | None = None
        """Accumulated gradient of the last :meth:`backward` calls, in 64-bit, with
        the same shape as :attr:`data`. Only leaves (tensors not produced by an
        operation) keep a gradient.
        """

        self.creator: Function | None = None
        """The operation that produced this tensor, if it was recorded."""

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype[t.Any]:
        return self.data.dtype

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", (), self.shape, "tensor must have one element")

        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        """A new leaf sharing this tensor's values but not recorded."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.float64)

        if grad.shape != self.data.shape:
            raise ShapeError("backward", self.shape, grad.shape, "gradient shape")

        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Compute the gradient of this scalar with respect to every leaf that
        requires gradients and was used to compute it. Gradients are added to any
        existing :attr:`grad`.
        """
        if self.data.size != 1:
            raise ShapeError("backward", (), self.shape, "loss must be a scalar")

        seed = np.ones(self.data.shape, dtype=np.float64)

        if self.creator is None:
            if self.requires_grad:
                self._accumulate(seed)

            return

        Tape.record(self).backward(self, seed)

    def _wrap(self, other: t.Any) -> Tensor:
        if isinstance(other, Tensor):
            return other

        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: t.Any) -> Tensor:
        return Add.apply(self, self._wrap(other))

    def __radd__(self, other: t.Any) -> Tensor:
        return Add.apply(self._wrap(other), self)

    def __sub__(self, other: t.Any) -> Tensor:
        return Sub.apply(self, self._wrap(other))

    def __rsub__(self, other: t.Any) -> Tensor:
        return Sub.apply(self._wrap(other), self)

    def __mul__(self, other: t.Any) -> Tensor:
        if isinstance(other, (int, float)):
            return Scale.apply(self, factor=float(other))

        return Mul.apply(self, self._wrap(other))

    def __rmul__(self, other: t.Any) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: t.Any) -> Tensor:
        if isinstance(other, (int, float)):
            return Scale.apply(self, factor=1.0 / float(other))

        return Div.apply(self, self._wrap(other))

    def __neg__(self) -> Tensor:
        return Scale.apply(self, factor=-1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return Matmul.apply(self, self._wrap(other))

    def __getitem__(self, key: t.Any) -> Tensor:
        return Index.apply(self, key=key)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(
        self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
    ) -> Tensor:
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int, keepdims: bool = False) -> Tensor:
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> Tensor:
        return Transpose.apply(self, axes=axes)

    def relu(self) -> Tensor:
        return ReLU.apply(self)

    def gelu(self) -> Tensor:
        return GELU.apply(self)

    def softmax(self, axis: int = -1) -> Tensor:
        return Softmax.apply(self, axis=axis)

    def log_softmax(self, axis: int = -1) -> Tensor:
        return LogSoftmax.apply(self, axis=axis)


class Tape:
    """Ordered record of the operations that produced a tensor, sufficient to run
    reverse accumulation. Built from the ``creator`` links of the result by
    :meth:`record`. Prototypes and anything computed under :func:`no_grad` are
    never part of a tape.

    :param nodes: Recorded (non-leaf) tensors in execution order.
    """

    def __init__(self, nodes: list[Tensor]) -> None:
        self.nodes: list[Tensor] = nodes

    @classmethod
    def record(cls, root: Tensor) -> Tape:
        """Collect every recorded tensor ``root`` depends on, in an order where each
        tensor appears after all of its inputs.
        """
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]

        # Iterative post-order traversal, graphs can be deeper than the recursion
        # limit.
        while stack:
            node, expanded = stack.pop()

            if expanded:
                order.append(node)
                continue

            if node.creator is None or id(node) in visited:
                continue

            visited.add(id(node))
            stack.append((node, True))

            for inp in node.creator.inputs:
                if inp.creator is not None and id(inp) not in visited:
                    stack.append((inp, False))

        return cls(order)

    def backward(self, root: Tensor, seed: np.ndarray) -> None:
        """Visit each recorded operation once in reverse order, passing gradients
        to its inputs. Leaves accumulate into their ``grad``.
        """
        grads: dict[int, np.ndarray] = {id(root): seed}

        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)

            if grad is None:
                continue

            fn = node.creator
            assert fn is not None

            for inp, g in zip(fn.inputs, fn.backward(grad)):
                if g is None or not inp.requires_grad:
                    continue

                if inp.creator is None:
                    inp._accumulate(g)
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + g
                else:
                    grads[id(inp)] = np.asarray(g, dtype=np.float64)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions that broadcasting added or expanded so the gradient
    matches ``shape``.
    """
    if grad.shape == shape:
        return grad

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


class Function:
    """Base class of every recorded operation. Subclasses implement
    :meth:`forward` on arrays and :meth:`backward` returning one gradient (or
    ``None``) per input.
    """

    name: t.ClassVar[str] = "function"

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs: tuple[Tensor, ...] = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: t.Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: t.Any) -> Tensor:
        fn = cls(*inputs)

        # Non-finite results are reported below as NumericError.
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = fn.forward(*(x.data for x in inputs), **kwargs)

        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.name}: produced NaN or infinite values")

        requires_grad = is_grad_enabled() and any(x.requires_grad for x in inputs)
        result = Tensor(out, requires_grad=requires_grad)

        if requires_grad:
            result.creator = fn

        return result


def _broadcast(name: str, x: np.ndarray, y: np.ndarray) -> None:
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(name, x.shape, y.shape) from None


class Add(Function):
    name = "add"

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _broadcast(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _broadcast(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _broadcast(self.name, x, y)
        self.x = x
        self.y = y
        return x * y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (
            unbroadcast(grad * self.y, self.x.shape),
            unbroadcast(grad * self.x, self.y.shape),
        )


class Div(Function):
    name = "div"

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _broadcast(self.name, x, y)
        self.x = x
        self.y = y
        return x / y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (
            unbroadcast(grad / self.y, self.x.shape),
            unbroadcast(-grad * self.x / (self.y * self.y), self.y.shape),
        )


class Scale(Function):
    """Multiply by a constant."""

    name = "scale"

    def forward(self, x: np.ndarray, factor: float) -> np.ndarray:  # type: ignore[override]
        self.factor = factor
        return x * np.asarray(factor, dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.factor,)


class Matmul(Function):
    """Matrix product of the last two axes, broadcasting leading axes. Both
    operands must have at least two dimensions and ``x.shape[-1] ==
    y.shape[-2]``.
    """

    name = "matmul"

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeError(self.name, x.shape, y.shape)

        try:
            np.broadcast_shapes(x.shape[:-2], y.shape[:-2])
        except ValueError:
            raise ShapeError(self.name, x.shape, y.shape) from None

        self.x = x
        self.y = y
        return np.matmul(x, y)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        gx = np.matmul(grad, np.swapaxes(self.y, -1, -2))
        gy = np.matmul(np.swapaxes(self.x, -1, -2), grad)
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


def _expand_reduced(
    grad: np.ndarray, shape: tuple[int, ...], axis: t.Any, keepdims: bool
) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)

    return np.broadcast_to(grad, shape)


class Sum(Function):
    name = "sum"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, axis: t.Any = None, keepdims: bool = False
    ) -> np.ndarray:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(np.sum(x, axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (_expand_reduced(grad, self.shape, self.axis, self.keepdims),)


class Mean(Function):
    name = "mean"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, axis: t.Any = None, keepdims: bool = False
    ) -> np.ndarray:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        out = np.asarray(np.mean(x, axis=axis, keepdims=keepdims))
        self.count = x.size // max(out.size, 1) if x.size else 1
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        grad = _expand_reduced(grad, self.shape, self.axis, self.keepdims)
        return (grad / self.count,)


class Max(Function):
    """Maximum along one axis. The gradient goes to the first maximal entry."""

    name = "max"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, axis: int, keepdims: bool = False
    ) -> np.ndarray:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        self.index = np.argmax(x, axis=axis)
        return np.max(x, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        if self.keepdims:
            grad = np.squeeze(grad, axis=self.axis)

        out = np.zeros(self.shape, dtype=np.float64)
        np.put_along_axis(
            out,
            np.expand_dims(self.index, self.axis),
            np.expand_dims(grad, self.axis),
            axis=self.axis,
        )
        return (out,)


class Reshape(Function):
    name = "reshape"

    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:  # type: ignore[override]
        self.shape = x.shape

        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(self.name, x.shape, tuple(shape)) from None

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad.reshape(self.shape),)


class Transpose(Function):
    """Permute axes. ``axes`` follows :func:`numpy.transpose`."""

    name = "transpose"

    def forward(self, x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:  # type: ignore[override]
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(self.name, x.shape, tuple(axes), "axes must permute dims")

        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    name = "index"

    def forward(self, x: np.ndarray, key: t.Any) -> np.ndarray:  # type: ignore[override]
        self.shape = x.shape
        self.key = key
        return np.asarray(x[key])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        out = np.zeros(self.shape, dtype=np.float64)
        np.add.at(out, self.key, grad)
        return (out,)


class Concat(Function):
    """Join tensors along an existing axis, the channel axis for convolution
    branch outputs.
    """

    name = "concat"

    def forward(self, *arrays: np.ndarray, axis: int = 1) -> np.ndarray:
        first = arrays[0]

        for other in arrays[1:]:
            same_rank = other.ndim == first.ndim
            rest = [d for i, d in enumerate(first.shape) if i != axis % first.ndim]
            other_rest = [d for i, d in enumerate(other.shape) if i != axis % other.ndim]

            if not same_rank or rest != other_rest:
                raise ShapeError(self.name, first.shape, other.shape)

        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return tuple(np.split(grad, np.cumsum(self.sizes)[:-1], axis=self.axis))


def concat(tensors: t.Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


class ReLU(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.mask,)


class GELU(Function):
    """Exact GELU, ``x * Phi(x)`` with the normal CDF."""

    name = "gelu"

    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.x = x
        self.cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
        return (x * self.cdf).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        pdf = np.exp(-0.5 * self.x.astype(np.float64) ** 2) / np.sqrt(2.0 * np.pi)
        return (grad * (self.cdf + self.x * pdf),)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


class Softmax(Function):
    name = "softmax"

    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:  # type: ignore[override]
        self.axis = axis
        self.y = _softmax(x, axis)
        return self.y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        inner = np.sum(grad * self.y, axis=self.axis, keepdims=True)
        return (self.y * (grad - inner),)


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:  # type: ignore[override]
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        self.y = np.exp(out)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        total = np.sum(grad, axis=self.axis, keepdims=True)
        return (grad - self.y * total,)


class LogSumExp(Function):
    """``log sum exp(x / temperature)`` along one axis, stabilized by subtracting
    the maximum before exponentiation.
    """

    name = "logsumexp"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, axis: int = -1, temperature: float = 1.0
    ) -> np.ndarray:
        self.axis = axis
        self.temperature = temperature
        scaled = x / temperature
        peak = np.max(scaled, axis=axis, keepdims=True)
        total = np.sum(np.exp(scaled - peak), axis=axis, keepdims=True)
        self.weights = np.exp(scaled - peak) / total
        return np.squeeze(peak + np.log(total), axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        grad = np.expand_dims(grad, self.axis)
        return (self.weights * grad / self.temperature,)


class L2Normalize(Function):
    """Scale vectors along the last axis to unit length. Zero vectors have no
    direction and are an error.
    """

    name = "l2_normalize"

    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        norm = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=-1, keepdims=True))

        if np.any(norm == 0.0):
            raise NumericError(f"{self.name}: zero-norm vector has no direction")

        self.norm = norm
        self.y = x / norm
        return self.y.astype(x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        inner = np.sum(grad * self.y, axis=-1, keepdims=True)
        return ((grad - self.y * inner) / self.norm,)


class LayerNorm(Function):
    """Normalize over the last axis to zero mean and unit variance, then apply a
    learnable per-feature scale and shift.
    """

    name = "layer_norm"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray, eps: float = 1e-5
    ) -> np.ndarray:
        if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
            raise ShapeError(self.name, x.shape, weight.shape)

        mean = np.mean(x, axis=-1, keepdims=True)
        var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean) * self.inv_std
        self.weight = weight
        return self.xhat * weight + bias

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        n = self.xhat.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        g_weight = np.sum(grad * self.xhat, axis=lead)
        g_bias = np.sum(grad, axis=lead)
        g_xhat = grad * self.weight
        g_x = (self.inv_std / n) * (
            n * g_xhat
            - np.sum(g_xhat, axis=-1, keepdims=True)
            - self.xhat * np.sum(g_xhat * self.xhat, axis=-1, keepdims=True)
        )
        return g_x, g_weight, g_bias


def _same_padding(kernel_size: int) -> tuple[int, int]:
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


class Conv1d(Function):
    """1-D cross-correlation with stride 1 and zero padding that preserves the
    temporal length. ``x`` is ``(B, C_in, L)``, ``weight`` is ``(C_out, C_in, k)``,
    ``bias`` is ``(C_out,)``, output is ``(B, C_out, L)``.
    """

    name = "conv1d"

    def forward(  # type: ignore[override]
        self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray
    ) -> np.ndarray:
        if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
            raise ShapeError(self.name, x.shape, weight.shape)

        if bias.shape != weight.shape[:1]:
            raise ShapeError(self.name, weight.shape, bias.shape, "bias")

        b, c_in, length = x.shape
        c_out, _, k = weight.shape
        left, right = _same_padding(k)
        padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
        # (B, C_in, L, k) -> (B, L, C_in * k), column index is c * k + j.
        cols = sliding_window_view(padded, k, axis=2)
        cols = cols.transpose(0, 2, 1, 3).reshape(b, length, c_in * k)
        flat = weight.reshape(c_out, c_in * k)
        out = np.matmul(cols, flat.T) + bias
        self.cols = cols
        self.flat = flat
        self.shape = x.shape
        self.kernel = k
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        b, c_in, length = self.shape
        k = self.kernel
        left, _ = _same_padding(k)
        g = grad.transpose(0, 2, 1)
        c_out = g.shape[-1]
        g_flat = np.matmul(
            self.cols.reshape(-1, c_in * k).T, g.reshape(-1, c_out)
        ).T
        g_bias = g.sum(axis=(0, 1))
        g_cols = np.matmul(g, self.flat).reshape(b, length, c_in, k)
        g_padded = np.zeros((b, c_in, length + k - 1), dtype=np.float64)

        for j in range(k):
            g_padded[:, :, j : j + length] += g_cols[:, :, :, j].transpose(0, 2, 1)

        g_x = g_padded[:, :, left : left + length]
        return g_x, g_flat.reshape(c_out, c_in, k), g_bias


class MaxPool1d(Function):
    """Max pooling along the last axis with stride 1 and padding that preserves
    the temporal length.
    """

    name = "max_pool1d"

    def forward(self, x: np.ndarray, size: int) -> np.ndarray:  # type: ignore[override]
        left, right = _same_padding(size)
        padded = np.pad(
            x, ((0, 0),) * (x.ndim - 1) + ((left, right),), constant_values=-np.inf
        )
        windows = sliding_window_view(padded, size, axis=-1)
        self.index = np.argmax(windows, axis=-1)
        self.size = size
        self.shape = x.shape
        return np.max(windows, axis=-1)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        left, _ = _same_padding(self.size)
        length = self.shape[-1]
        out = np.zeros(self.shape[:-1] + (length + self.size - 1,), dtype=np.float64)

        for j in range(self.size):
            out[..., j : j + length] += grad * (self.index == j)

        return (out[..., left : left + length],)


def _spectral_weights(length: int) -> np.ndarray:
    # Multiplicity of each rfft bin in the full spectrum, DC and Nyquist once.
    counts = np.full(length // 2 + 1, 2.0)
    counts[0] = 1.0

    if length % 2 == 0:
        counts[-1] = 1.0

    return counts


class SpectralFilter(Function):
    """``irfft(mask * rfft(x))`` along the last axis, with a real mask of shape
    ``(..., L // 2 + 1)`` broadcast against the spectrum. The operator is symmetric
    in the time domain, so the signal gradient is the same filter applied to the
    incoming gradient. The mask gradient is exact as well.
    """

    name = "spectral_filter"

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:  # type: ignore[override]
        length = x.shape[-1]
        bins = length // 2 + 1

        if mask.shape[-1] != bins:
            raise ShapeError(self.name, x.shape, mask.shape, "mask needs L // 2 + 1 bins")

        spectrum = np.fft.rfft(x.astype(np.float64), axis=-1)
        _broadcast(self.name, spectrum, mask)
        self.spectrum = spectrum
        self.mask = mask
        self.length = length
        return np.fft.irfft(spectrum * mask, n=length, axis=-1).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g_spectrum = np.fft.rfft(grad, axis=-1)
        g_x = np.fft.irfft(g_spectrum * self.mask, n=self.length, axis=-1)
        scale = _spectral_weights(self.length) / self.length
        g_mask = scale * np.real(self.spectrum * np.conj(g_spectrum))
        return g_x, unbroadcast(g_mask, self.mask.shape)


def spectral_filter(x: Tensor, mask: Tensor) -> Tensor:
    return SpectralFilter.apply(x, mask)


def rfft(x: Tensor) -> tuple[Tensor, Tensor]:
    """Real-input DFT along the last axis. Returns the real and imaginary parts of
    the ``L // 2 + 1`` nonnegative-frequency coefficients. Not recorded; use
    :func:`spectral_filter` for a differentiable masked round trip.
    """
    spectrum = np.fft.rfft(x.data.astype(np.float64), axis=-1)
    return Tensor(spectrum.real), Tensor(spectrum.imag)


def irfft(real: Tensor, imag: Tensor, length: int) -> Tensor:
    """Inverse of :func:`rfft` for a signal of the given length. Not recorded."""
    if real.shape != imag.shape or real.shape[-1] != length // 2 + 1:
        raise ShapeError("irfft", real.shape, imag.shape)

    return Tensor(np.fft.irfft(real.data + 1j * imag.data, n=length, axis=-1))


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Conv1d.apply(x, weight, bias)


def max_pool1d(x: Tensor, size: int) -> Tensor:
    return MaxPool1d.apply(x, size=size)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, weight, bias, eps=eps)


def l2_normalize(x: Tensor) -> Tensor:
    return L2Normalize.apply(x)


def logsumexp(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    return LogSumExp.apply(x, axis=axis, temperature=temperature)


def lse_reduce(values: Tensor | t.Sequence[float] | np.ndarray, temperature: float) -> Tensor:
    """Compute ``log sum_k exp(values_k / temperature)`` for a vector, stabilized
    by subtracting the maximum.

    :param values: Non-empty vector of reals.
    :param temperature: Positive divisor controlling sharpness.
    """
    v = values if isinstance(values, Tensor) else Tensor(values)

    if v.data.size == 0:
        raise ShapeError("lse_reduce", (1,), v.shape, "values must be non-empty")

    if not temperature > 0:
        raise ValueError(f"Temperature must be positive, got {temperature}.")

    return logsumexp(v, axis=-1, temperature=temperature)


def finite_diff_check(
    f: t.Callable[..., Tensor], point: t.Sequence[Tensor], eps: float = 1e-5
) -> float:
    """Compare :meth:`Tensor.backward` against central differences.

    For each coordinate of each tensor in ``point``, the numeric derivative is
    ``(f(x + eps) - f(x - eps)) / (2 * eps)``. Returns the largest
    ``|analytic - numeric| / max(|numeric|, 1e-8)`` over all coordinates.

    :param f: Deterministic function of the point tensors returning a scalar.
        Called as ``f(*point)``.
    :param point: Tensors to differentiate with respect to. Their values are
        perturbed in place and restored.
    :param eps: Step size, between 1e-5 and 1e-3.
    """
    if not 1e-5 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-5, 1e-3], got {eps}.")

    for p in point:
        p.data = np.array(p.data, order="C")
        p.requires_grad = True
        p.grad = None

    f(*point).backward()
    worst = 0.0

    with no_grad():
        for p in point:
            analytic = (
                p.grad.reshape(-1) if p.grad is not None else np.zeros(p.data.size)
            )
            flat = p.data.reshape(-1)

            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                upper = f(*point).item()
                flat[i] = original - eps
                lower = f(*point).item()
                flat[i] = original
                numeric = (upper - lower) / (2.0 * eps)
                error = abs(analytic[i] - numeric) / max(abs(numeric), 1e-8)
                worst = max(worst, error)

    return worst
