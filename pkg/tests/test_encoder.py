from __future__ import annotations

import numpy as np
import pytest

from prototsc import tensor as T
from prototsc.encoder import encode
from prototsc.encoder import EncoderLayer
from prototsc.encoder import EncoderStack
from prototsc.encoder import pool
from prototsc.encoder import positional_encoding
from prototsc.errors import ShapeError
from prototsc.tensor import Tensor


def _x(shape: tuple[int, ...], seed: int = 0) -> Tensor:
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def _layer(dropout: float = 0.0, d_model: int = 8, seed: int = 0) -> EncoderLayer:
    rng = np.random.default_rng(seed)
    return EncoderLayer(d_model, 2, 2 * d_model, dropout, rng, rng, np.float64)


def _stack(pooling: str = "mean", dropout: float = 0.0, **changes: object) -> EncoderStack:
    rng = np.random.default_rng(0)
    values: dict[str, object] = {
        "length": 10,
        "d_model": 8,
        "n_layers": 2,
        "n_heads": 2,
        "d_ff": 16,
        "dropout": dropout,
        "pooling": pooling,
        "positional": True,
        "rng": rng,
        "dropout_rng": np.random.default_rng(1),
        "dtype": np.float64,
    }
    values.update(changes)
    return EncoderStack(**values)  # type: ignore[arg-type]


def test_positional_encoding() -> None:
    table = positional_encoding(6, 4)
    assert table.shape == (6, 4)
    assert table[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert table[1, 0] == pytest.approx(np.sin(1.0))
    assert table[1, 3] == pytest.approx(np.cos(1.0 / 100.0))


def test_positional_encoding_odd_width() -> None:
    with pytest.raises(ValueError, match="even"):
        positional_encoding(6, 5)


def test_zero_init_layer_is_identity() -> None:
    layer = _layer(dropout=0.2)
    layer.zero_init()
    z = _x((3, 7, 8))
    assert layer(z).data.tobytes() == z.data.tobytes()


def test_attention_weights() -> None:
    layer = _layer()
    layer(_x((3, 7, 8)))
    weights = layer.attention_weights
    assert weights is not None
    assert weights.shape == (3, 2, 7, 7)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0)


def test_layer_dimension_mismatch() -> None:
    with pytest.raises(ShapeError, match="encoder_layer_forward"):
        _layer()(_x((3, 7, 6)))


def test_layer_gradient() -> None:
    layer = _layer()
    w = Tensor(np.random.default_rng(9).uniform(0.5, 1.5, (2, 5, 8)))
    error = T.finite_diff_check(lambda z: (layer(z) * w).sum(), [_x((2, 5, 8), seed=4)])
    assert error <= 1e-4


def test_mean_pool_of_constant() -> None:
    row = np.arange(8, dtype=np.float64)
    z = Tensor(np.broadcast_to(row, (2, 5, 8)).copy())
    np.testing.assert_allclose(pool(z, "mean").data, np.broadcast_to(row, (2, 8)))


def test_pool_modes() -> None:
    z = _x((2, 5, 8))
    np.testing.assert_array_equal(pool(z, "last").data, z.data[:, -1])
    np.testing.assert_array_equal(pool(z, "max").data, z.data.max(axis=1))

    with pytest.raises(ValueError, match="pooling"):
        pool(z, "median")


def test_encode_shape() -> None:
    rng = np.random.default_rng(0)
    stack = EncoderStack(24, 128, 2, 4, 256, 0.2, "mean", True, rng, rng)
    assert encode(_x((16, 128, 24)), stack).shape == (16, 128)


@pytest.mark.parametrize("pooling", ["mean", "last", "max"])
def test_stack_pooling(pooling: str) -> None:
    assert _stack(pooling)(_x((3, 8, 10))).shape == (3, 8)


def test_stack_shape_error() -> None:
    with pytest.raises(ShapeError, match="encode"):
        _stack()(_x((3, 10, 8)))


def test_stack_invalid() -> None:
    with pytest.raises(ValueError, match="at least one layer"):
        _stack(n_layers=0)

    with pytest.raises(ValueError, match="pooling"):
        _stack("median")


@pytest.mark.parametrize("identity", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_encode_without_positions_ignores_order(identity: bool, seed: int) -> None:
    stack = _stack(positional=False)

    if identity:
        for layer in stack.layers:
            layer.zero_init()

    x = _x((2, 8, 10), seed=seed)
    order = np.random.default_rng(seed).permutation(10)
    shuffled = Tensor(x.data[:, :, order])
    np.testing.assert_allclose(encode(shuffled, stack).data, encode(x, stack).data, atol=1e-10)

    if identity:
        np.testing.assert_allclose(encode(x, stack).data, x.data.mean(axis=-1), atol=1e-12)


def test_positional_encoding_changes_output() -> None:
    x = _x((2, 8, 10))
    with_table = _stack()(x).data
    without = _stack(positional=False)(x).data
    assert _stack(positional=False).positional is None
    assert not np.allclose(with_table, without)


def test_dropout_only_in_training() -> None:
    stack = _stack(dropout=0.5)
    x = _x((2, 8, 10))
    first = stack(x).data
    second = stack(x).data
    assert not np.array_equal(first, second)
    stack.eval()
    np.testing.assert_array_equal(stack(x).data, stack(x).data)
