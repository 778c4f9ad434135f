#!/usr/bin/env python3
"""
Tests for the tensor engine: primitives, tape, initializers and the gradient oracle
"""

import itertools

import numpy as np
import pytest

from src.core.errors import (
    ConfigError,
    InvalidAxisError,
    InvalidLossError,
    InvalidShapeError,
    NoGraphError,
    ShapeMismatchError,
)
from src.core.gradcheck import grad_check
from src.core.rng import RngStream
from src.core.tensor import (
    Init,
    Tensor,
    backward,
    concat,
    create,
    elementwise,
    no_grad,
    reduce,
    stack,
)


def leaf(values, dtype="f64"):
    return Tensor(np.asarray(values, dtype=float), requires_grad=True, dtype=dtype)


def test_create_zeros_and_ones():
    """create honours shape, dtype and constant inits"""
    zeros = create([2, 3])
    ones = create([4], "f64", Init.ones())
    assert zeros.shape == (2, 3) and zeros.dtype == np.float32 and not zeros.data.any()
    assert ones.dtype == np.float64 and np.all(ones.data == 1.0)


def test_create_rejects_bad_extents():
    with pytest.raises(InvalidShapeError):
        create([2, 0])
    with pytest.raises(InvalidShapeError):
        create([-1])


def test_create_random_needs_rng():
    with pytest.raises(ConfigError):
        create([3], init=Init.uniform(0, 1))


def test_he_uniform_bounds_and_determinism():
    """Same stream, same values; samples stay inside sqrt(6/fan_in)"""
    first = create([3, 3, 4, 8], init=Init.he_uniform(36), rng=RngStream(seed=7))
    second = create([3, 3, 4, 8], init=Init.he_uniform(36), rng=RngStream(seed=7))
    other = create([3, 3, 4, 8], init=Init.he_uniform(36), rng=RngStream(seed=7, stream_index=1))
    limit = np.sqrt(6.0 / 36)
    assert np.array_equal(first.data, second.data)
    assert not np.array_equal(first.data, other.data)
    assert np.all(np.abs(first.data) <= limit)


def test_substreams_are_reproducible_and_distinct():
    parent = RngStream(seed=5)
    assert parent.substream(3) == parent.substream(3)
    draws = [parent.substream(i).generator().random() for i in range(4)]
    assert len(set(draws)) == 4
    assert len({parent.substream(i).seed for i in range(16)}) == 16
    assert RngStream(seed=5, stream_index=1).substream(3).seed != parent.substream(3).seed


def test_elementwise_broadcast_add():
    """[2,3] + [3] broadcasts over the leading axis"""
    a = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    b = Tensor(np.array([10, 20, 30], dtype=np.float32))
    assert np.array_equal(elementwise("add", a, b).data, [[10, 21, 32], [13, 24, 35]])


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        elementwise("mul", Tensor(np.ones((2, 3))), Tensor(np.ones((2,))))


def test_max0_and_abs_subgradient_at_zero():
    """ReLU and |x| use 0 as the subgradient at 0"""
    x = leaf([-1.0, 0.0, 2.0])
    backward(x.relu().sum())
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])
    y = leaf([-1.0, 0.0, 2.0])
    backward(y.abs().sum())
    assert np.array_equal(y.grad, [-1.0, 0.0, 1.0])


def test_broadcast_gradient_is_reduced():
    """The gradient of a broadcast operand sums over the broadcast axes"""
    a = leaf(np.ones((4, 3)))
    b = leaf([1.0, 2.0, 3.0])
    backward((a * b).sum())
    assert b.grad.shape == (3,)
    assert np.array_equal(b.grad, [4.0, 4.0, 4.0])
    assert np.array_equal(a.grad, np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_gradients_accumulate_across_backward_calls():
    x = leaf([3.0])
    backward((x * x).sum())
    backward((x * x).sum())
    assert np.allclose(x.grad, [12.0])


def test_reused_tensor_gets_summed_gradient():
    x = leaf([2.0])
    y = x * x + x
    backward(y.sum())
    assert np.allclose(x.grad, [5.0])


def test_reduce_mean_and_sum():
    x = Tensor(np.arange(24, dtype=np.float64).reshape(2, 3, 4))
    assert reduce("sum", x, axes=(0, 2)).shape == (3,)
    assert np.allclose(reduce("mean", x).data, 11.5)


def test_reduce_rejects_bad_axes():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(InvalidAxisError):
        reduce("sum", x, axes=(0, 0))
    with pytest.raises(InvalidAxisError):
        reduce("mean", x, axes=(2,))


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(InvalidLossError):
        backward(x * 2.0)


def test_backward_requires_graph():
    with pytest.raises(NoGraphError):
        backward(Tensor(np.array(1.0)))


def test_no_grad_skips_tracing():
    x = leaf([1.0])
    with no_grad():
        y = x * 3.0
    assert y.node is None and not y.requires_grad


def test_deep_chain_does_not_recurse():
    """A long chain of nodes is ordered without recursion"""
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y + 0.0
    backward(y.sum())
    assert np.allclose(x.grad, [1.0])


def test_stack_concat_and_slice_gradients():
    a = leaf([1.0, 2.0])
    b = leaf([3.0, 4.0])
    stacked = stack([a, b], axis=0)
    joined = concat([a, b], axis=0)
    assert stacked.shape == (2, 2) and joined.shape == (4,)
    backward((stacked[1] * 2.0).sum() + joined.sum())
    assert np.allclose(a.grad, [1.0, 1.0])
    assert np.allclose(b.grad, [3.0, 3.0])


SEEDS = range(20)

# every shape of rank <= 3 with extents in 1..3
SMALL_SHAPES = [tuple(s) for rank in range(4) for s in itertools.product(range(1, 4), repeat=rank)]


def loop_broadcast_shape(a, b):
    """Right-aligned extents; None when they clash"""
    rank = max(len(a), len(b))
    a, b = (1,) * (rank - len(a)) + a, (1,) * (rank - len(b)) + b
    out = []
    for x, y in zip(a, b):
        if x != y and 1 not in (x, y):
            return None
        out.append(max(x, y))
    return tuple(out)


def source_index(out_index, shape):
    """Operand coordinate read by one output coordinate"""
    tail = out_index[len(out_index) - len(shape):] if shape else ()
    return tuple(0 if extent == 1 else i for i, extent in zip(tail, shape))


LOCAL_GRADS = {
    "add": lambda x, y: (1.0, 1.0),
    "sub": lambda x, y: (1.0, -1.0),
    "mul": lambda x, y: (y, x),
    "div": lambda x, y: (1.0 / y, -x / (y * y)),
}
FORWARD = {
    "add": lambda x, y: x + y,
    "sub": lambda x, y: x - y,
    "mul": lambda x, y: x * y,
    "div": lambda x, y: x / y,
}


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_broadcast_matches_loop_oracle_for_all_small_shapes(op):
    """Forward values and reduced gradients against explicit loops"""
    gen = RngStream(seed=21).generator()
    for shape_a, shape_b in itertools.product(SMALL_SHAPES, repeat=2):
        out_shape = loop_broadcast_shape(shape_a, shape_b)
        a = leaf(gen.uniform(0.5, 1.5, shape_a))
        b = leaf(gen.uniform(0.5, 1.5, shape_b))
        if out_shape is None:
            with pytest.raises(ShapeMismatchError):
                elementwise(op, a, b)
            continue
        weights = np.asarray(gen.uniform(-1.0, 1.0, out_shape))
        expected = np.zeros(out_shape)
        grad_a, grad_b = np.zeros(shape_a), np.zeros(shape_b)
        for index in itertools.product(*(range(n) for n in out_shape)):
            x, y = a.data[source_index(index, shape_a)], b.data[source_index(index, shape_b)]
            expected[index] = FORWARD[op](x, y)
            dx, dy = LOCAL_GRADS[op](x, y)
            grad_a[source_index(index, shape_a)] += weights[index] * dx
            grad_b[source_index(index, shape_b)] += weights[index] * dy
        out = elementwise(op, a, b)
        assert out.shape == out_shape, (shape_a, shape_b)
        assert np.allclose(out.data, expected, atol=1e-12), (shape_a, shape_b)
        backward((out * Tensor(weights, dtype="f64")).sum())
        assert np.allclose(a.grad, grad_a, atol=1e-12), (shape_a, shape_b)
        assert np.allclose(b.grad, grad_b, atol=1e-12), (shape_a, shape_b)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_primitives_pass_gradcheck(op, seed):
    gen = RngStream(seed=seed).generator()
    a = leaf(gen.uniform(0.5, 1.5, (3, 4)))
    b = leaf(gen.uniform(0.5, 1.5, (4,)))
    assert grad_check(lambda x, y: elementwise(op, x, y).sum(), [a, b]) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", ["sigmoid", "tanh", "neg", "max0", "abs"])
def test_unary_primitives_pass_gradcheck(op, seed):
    gen = RngStream(seed=seed).generator()
    # keep away from the kink at 0
    values = gen.uniform(0.2, 1.0, (3, 3)) * gen.choice([-1.0, 1.0], (3, 3))
    x = leaf(values)
    assert grad_check(lambda t: (elementwise(op, t) * t).sum(), [x]) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_reshape_transpose_gradcheck(seed):
    gen = RngStream(seed=seed).generator()
    a = leaf(gen.standard_normal((3, 4)))
    b = leaf(gen.standard_normal((2, 3)))
    f = lambda x, y: (x.transpose(1, 0) @ y.transpose(1, 0)).reshape(8).mean()
    assert grad_check(f, [a, b]) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_reductions_pass_gradcheck(seed):
    gen = RngStream(seed=seed).generator()
    x = leaf(gen.uniform(-1.0, 1.0, (2, 3, 4)))
    weights = Tensor(gen.uniform(-1.0, 1.0, (2, 4)), dtype="f64")
    f = lambda t: (reduce("sum", t, axes=1) * weights).sum() + reduce("mean", t, axes=(0, 2)).sum()
    assert grad_check(f, [x]) < 1e-6


def test_grad_check_needs_f64():
    x = Tensor(np.ones(3, dtype=np.float32))
    with pytest.raises(ConfigError):
        grad_check(lambda t: t.sum(), [x])


def test_grad_check_detects_wrong_gradient():
    """A primitive with a deliberately wrong backward is caught"""
    from src.core.tensor import TapeNode

    class Broken(TapeNode):
        op = "broken"

        def forward(self, a):
            return a * a

        def backward(self, grad):
            return (grad * 3.0,)

    x = leaf([2.5, -2.0])
    assert grad_check(lambda t: Broken.apply(t).sum(), [x]) > 0.1
