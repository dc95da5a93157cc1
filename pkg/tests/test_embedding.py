from __future__ import annotations

import numpy as np
import pytest

from prototsc import tensor as T
from prototsc.embedding import embed
from prototsc.embedding import EmbeddingStack
from prototsc.embedding import frequency_weight
from prototsc.embedding import FrequencyMask
from prototsc.embedding import InceptionLayer
from prototsc.errors import ShapeError
from prototsc.tensor import Tensor


def _x(shape: tuple[int, ...], seed: int = 0) -> Tensor:
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_mask_init() -> None:
    mask = FrequencyMask(3, 10)
    assert mask.weights.shape == (3, 6)
    assert (mask.weights.data == 1).all()
    assert [name for name, _ in mask.named_parameters()] == ["weights"]


def test_ones_mask_is_identity() -> None:
    x = _x((2, 3, 17))
    out = frequency_weight(x, FrequencyMask(3, 17))
    assert np.abs(out.data - x.data).max() <= 1e-4


@pytest.mark.parametrize("length", [16, 17])
def test_ones_mask_preserves_energy(length: int) -> None:
    x = _x((2, 3, length), seed=length)
    out = frequency_weight(x, Tensor(np.ones((3, length // 2 + 1))))
    energy = (x.data**2).sum(axis=-1)
    np.testing.assert_allclose((out.data**2).sum(axis=-1), energy, rtol=1e-10)
    real, imag = T.rfft(x)
    power = real.data**2 + imag.data**2
    weights = np.full(length // 2 + 1, 2.0)
    weights[0] = 1.0

    if length % 2 == 0:
        weights[-1] = 1.0

    np.testing.assert_allclose((power * weights).sum(axis=-1) / length, energy, rtol=1e-10)


@pytest.mark.parametrize(("a", "b"), [(1.0, 1.0), (2.5, -0.5), (0.0, 3.0)])
def test_frequency_weight_is_linear(a: float, b: float) -> None:
    mask = Tensor(np.random.default_rng(4).uniform(0.0, 2.0, (3, 9)))
    x = _x((2, 3, 16), seed=5)
    y = _x((2, 3, 16), seed=6)
    combined = frequency_weight(Tensor(a * x.data + b * y.data), mask).data
    expect = a * frequency_weight(x, mask).data + b * frequency_weight(y, mask).data
    np.testing.assert_allclose(combined, expect, atol=1e-10)


def test_zeros_mask_annihilates() -> None:
    x = _x((2, 3, 16))
    out = frequency_weight(x, Tensor(np.zeros((3, 9))))
    assert not out.data.any()


def test_mask_removes_frequency() -> None:
    steps = np.arange(64)
    x = Tensor(np.sin(2 * np.pi * 4 * steps / 64)[None, None])
    weights = np.ones((1, 33))
    weights[0, 4] = 0.0
    out = frequency_weight(x, Tensor(weights))
    assert np.abs(out.data).max() <= 1e-4


@pytest.mark.parametrize("shape", [(2, 3, 16), (2, 16), (2, 2, 16)])
def test_frequency_weight_shape_error(shape: tuple[int, ...]) -> None:
    with pytest.raises(ShapeError, match="frequency_weight"):
        frequency_weight(Tensor(np.zeros(shape)), Tensor(np.ones((3, 8))))


def test_frequency_mask_gradient() -> None:
    mask = FrequencyMask(2, 10, np.float64)
    mask.weights.data = np.random.default_rng(1).uniform(0.5, 1.5, (2, 6))
    x = _x((3, 2, 10), seed=2)
    w = Tensor(np.random.default_rng(3).uniform(0.5, 1.5, (3, 2, 10)))
    error = T.finite_diff_check(lambda m: (frequency_weight(x, m) * w).sum(), [mask.weights])
    assert error <= 1e-4


def test_inception_shape() -> None:
    layer = InceptionLayer(128, (3, 7, 15), 3, np.random.default_rng(0))
    out = layer(_x((2, 128, 96)))
    assert out.shape == (2, 128, 96)
    assert len(layer.branches) == 3
    assert layer.branches[0].out_channels == 32


def test_inception_zero_init_is_identity() -> None:
    layer = InceptionLayer(8, (3, 5), 3, np.random.default_rng(0), np.float64)
    layer.zero_init()
    x = _x((2, 8, 12))
    assert layer(x).data.tobytes() == x.data.tobytes()


def test_inception_channel_mismatch() -> None:
    layer = InceptionLayer(8, (3, 5), 3, np.random.default_rng(0))

    with pytest.raises(ShapeError):
        layer(_x((2, 6, 12)))


def test_inception_too_narrow() -> None:
    with pytest.raises(ValueError, match="branches"):
        InceptionLayer(3, (3, 5, 7), 3, np.random.default_rng(0))


def test_stack_shape() -> None:
    stack = EmbeddingStack(3, 315, 128, 2, (3, 7, 15), 3, np.random.default_rng(0))
    assert stack(_x((1, 3, 315))).shape == (1, 128, 315)


def test_empty_stack_is_projection() -> None:
    stack = EmbeddingStack(2, 20, 8, 0, (3, 5), 3, np.random.default_rng(0), np.float64)
    assert stack.frequency_mask is not None
    stack.frequency_mask.weights.data = np.linspace(0.0, 2.0, 22).reshape(2, 11)
    x = _x((4, 2, 20))
    expect = stack.projection(frequency_weight(x, stack.frequency_mask))
    np.testing.assert_array_equal(embed(x, stack).data, expect.data)


def test_stack_without_frequency_weighting() -> None:
    stack = EmbeddingStack(
        2, 20, 8, 0, (3, 5), 3, np.random.default_rng(0), np.float64, frequency_weighting=False
    )
    assert stack.frequency_mask is None
    x = _x((4, 2, 20))
    np.testing.assert_array_equal(stack(x).data, stack.projection(x).data)
    assert not any(name.startswith("frequency_mask") for name, _ in stack.named_parameters())


def test_stack_deterministic() -> None:
    stack = EmbeddingStack(2, 24, 8, 2, (3, 5), 3, np.random.default_rng(0))
    x = _x((3, 2, 24))
    assert stack(x).data.tobytes() == stack(x).data.tobytes()


def test_stack_same_seed_same_parameters() -> None:
    a = EmbeddingStack(2, 24, 8, 2, (3, 5), 3, np.random.default_rng(5))
    b = EmbeddingStack(2, 24, 8, 2, (3, 5), 3, np.random.default_rng(5))

    for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), name


def test_embed_shape_error() -> None:
    stack = EmbeddingStack(2, 24, 8, 1, (3, 5), 3, np.random.default_rng(0))

    with pytest.raises(ShapeError, match="embed"):
        stack(_x((3, 3, 24)))


def test_stack_gradient_reaches_every_parameter() -> None:
    stack = EmbeddingStack(2, 12, 8, 1, (3, 5), 3, np.random.default_rng(0), np.float64)
    stack(_x((2, 2, 12))).sum().backward()

    for name, p in stack.named_parameters():
        assert p.grad is not None, name
        assert p.grad.shape == p.shape
