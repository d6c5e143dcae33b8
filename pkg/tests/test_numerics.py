import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from fbr.errors import ArgumentError, ContractError, DegenerateInputError
from fbr.numerics import cosine_sim, grad_check, softmax, tensor

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    big = softmax([100.0, 0.0])
    assert big[0] == pytest.approx(1.0) and big[1] < 1e-40
    assert abs(big.sum() - 1.0) < 1e-9
    # e / (e + 1)
    oracle = math.e / (math.e + 1.0)
    np.testing.assert_allclose(softmax([1.0, 0.0]), [oracle, 1 - oracle], atol=1e-12)
    np.testing.assert_allclose(softmax([1.0, 0.0]), [0.7311, 0.2689], atol=1e-4)


def test_softmax_empty():
    with pytest.raises(ArgumentError):
        softmax([])


def test_softmax_keeps_torch_and_grad():
    v = tensor([0.3, -1.0, 2.0], requires_grad=True)
    out = softmax(v)
    assert isinstance(out, torch.Tensor)
    out[0].backward()
    assert v.grad is not None


@given(st.lists(finite, min_size=1, max_size=20), st.floats(-100, 100))
def test_softmax_shift_invariance(v, shift):
    a = softmax(v)
    b = softmax([x + shift for x in v])
    assert np.max(np.abs(a - b)) <= 1e-12
    assert abs(a.sum() - 1.0) <= 1e-9


@given(st.lists(finite, min_size=2, max_size=10, unique=True))
def test_softmax_monotone(v):
    out = softmax(v)
    order_in = np.argsort(v)
    assert np.all(np.diff(out[order_in]) >= 0)


def test_cosine_examples():
    assert cosine_sim([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_sim([1.0, 0.0], [0.0, 5.0]) == 0.0
    assert cosine_sim([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-4)


def test_cosine_errors():
    with pytest.raises(DegenerateInputError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ArgumentError):
        cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@given(vec, vec, st.floats(0.01, 100))
def test_cosine_properties(a, b, lam):
    s = cosine_sim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == cosine_sim(b, a)
    assert cosine_sim([lam * x for x in a], b) == pytest.approx(s, abs=1e-12)


def test_grad_check_sum_is_exact(rng):
    x = tensor(rng.normal(size=7))
    rep = grad_check(lambda t: t.sum(), [x])
    assert rep.max_rel_error < 1e-10


def test_grad_check_square(rng):
    x = tensor(rng.normal(size=(4, 5)))
    rep = grad_check(lambda t: (t ** 2).sum(), [x], step=1e-4)
    assert rep.max_rel_error < 1e-6
    assert rep.max_rel_error >= 0


def test_grad_check_catches_wrong_gradient(rng):
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 3 * x

    rep = grad_check(lambda t: Bad.apply(t), [tensor(rng.normal(size=5))])
    assert rep.max_rel_error > 0.3


def test_grad_check_flags_threshold_point():
    x = tensor([0.5, 1.0, -2.0])
    rep = grad_check(lambda t: torch.relu(t - 0.5).sum(), [x])
    assert rep.flags_nonsmooth
    assert 0 in rep.nonsmooth and 1 not in rep.nonsmooth


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ContractError):
        grad_check(lambda t: t * 2, [tensor([1.0, 2.0])])
    with pytest.raises(ArgumentError):
        grad_check(lambda t: t.sum(), [tensor([1.0])], step=0.0)


def test_grad_check_multiple_inputs(rng):
    a = tensor(rng.normal(size=(3, 4)))
    b = tensor(rng.normal(size=(4,)))
    rep = grad_check(lambda x, y: torch.tanh(x @ y).sum(), [a, b])
    assert rep.max_rel_error < 1e-5
