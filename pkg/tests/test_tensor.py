import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scribe_verify import tensor as T
from scribe_verify.tensor import ShapeError, Tape, Tensor, no_grad

from conftest import check_grads


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64


@pytest.mark.parametrize(
    "op,shapes",
    [
        (lambda a, b: a + b, [(3, 4), (4,)]),
        (lambda a, b: a - b, [(2, 3), (2, 1)]),
        (lambda a, b: a * b, [(3, 1, 4), (5, 1)]),
        (lambda a, b: a / (b * b + 0.5), [(3, 4), (3, 4)]),
        (lambda a, b: a @ b, [(3, 4), (4, 5)]),
        (lambda a, b: a @ b, [(2, 3, 4), (4, 2)]),
        (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    ],
)
def test_binary_ops_match_finite_differences(op, shapes, rng):
    check_grads(op, *[rng.standard_normal(s) for s in shapes])


@pytest.mark.parametrize(
    "op",
    [
        lambda a: a**3,
        lambda a: (a * a + 1.0).sqrt(),
        lambda a: a.exp(),
        lambda a: (a * a + 0.5).log(),
        lambda a: a.sum(axis=1),
        lambda a: a.mean(axis=(0, 2), keepdims=True),
        lambda a: a.mean(),
        lambda a: a.reshape(6, 4),
        lambda a: a.transpose(2, 0, 1),
        lambda a: T.swapaxes(a, 0, 2),
        lambda a: a[:, 1, ::2],
        lambda a: a[np.array([0, 1, 1])],
        lambda a: T.broadcast_to(a[:, :1, :], (2, 5, 4)),
        lambda a: T.split(a, 2, axis=2)[1],
        lambda a: -a,
        lambda a: 2.0 - a,
        lambda a: 1.0 / (a * a + 1.0),
    ],
)
def test_unary_ops_match_finite_differences(op, rng):
    check_grads(op, rng.standard_normal((2, 3, 4)))


def test_broadcast_mismatch_raises_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_grads_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_shared_subexpression_gets_both_contributions():
    x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
    y = x * x
    (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(16.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    y.backward()  # no-op
    assert x.grad is None


def test_tape_is_topological():
    x = Tensor(np.ones(2), requires_grad=True)
    y = (x * 2.0 + x).sum()
    tape = Tape.from_output(y)
    order = {id(n): k for k, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n._parents:
            if id(p) in order:
                assert order[id(p)] < order[id(n)]


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0, dtype=np.float64), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-10, 10)))
def test_sum_gradient_is_ones(a):
    x = Tensor(a, requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones_like(a))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
    arrays(np.float64, (2,), elements=st.floats(-5, 5)),
)
def test_add_broadcast_gradient_sums_over_broadcast_axis(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    (ta + tb).sum().backward()
    np.testing.assert_array_equal(tb.grad, np.full(2, 3.0))
    assert tb.grad.shape == b.shape
