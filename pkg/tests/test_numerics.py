import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vitcae import numerics as nx
from vitcae.errors import ContractError, DimensionError, NumericDomainError

from _gradcases import ELEMENTARY
from _oracles import gradcheck


@pytest.mark.parametrize("name", sorted(ELEMENTARY))
def test_elementary_gradients_match_central_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(3):
        fn, inputs = ELEMENTARY[name](rng)
        assert gradcheck(fn, inputs, rng) < 1e-4


def test_matmul_examples():
    b = nx.Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal((nx.Tensor(np.eye(2)) @ b).data, b.data)
    assert np.array_equal((b @ nx.Tensor(np.zeros((3, 4)))).data, np.zeros((2, 4)))
    out = nx.Tensor([[1.0, 2.0], [3.0, 4.0]]) @ nx.Tensor([[1.0], [1.0]])
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.Tensor(np.ones((2, 3))) @ nx.Tensor(np.ones((4, 5)))


def test_softmax_examples():
    assert np.allclose(nx.softmax_rows(np.zeros((1, 4))).data, 0.25)
    row = nx.softmax_rows(np.array([[1.0, -1.0]])).data[0]
    assert row == pytest.approx([0.8808, 0.1192], abs=1e-4)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericDomainError):
        nx.softmax_rows(np.array([[0.0, np.nan]]))
    with pytest.raises(NumericDomainError):
        nx.softmax_rows(np.array([[np.inf, 0.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    a = nx.softmax_rows(x).data
    assert np.all(a >= 0)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12, rtol=0)
    assert np.allclose(nx.softmax_rows(x + c).data, a, atol=1e-12, rtol=0)


def test_layer_norm_examples():
    one, zero = np.ones(3), np.zeros(3)
    assert np.allclose(nx.layer_norm(np.full((2, 3), 4.0), one, zero).data, 0.0)
    bias = np.array([1.0, 2.0, 3.0])
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.allclose(nx.layer_norm(x, zero, bias).data, bias)
    out = nx.layer_norm(np.array([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-12).data
    assert out == pytest.approx([-1.0, 1.0], abs=1e-9)


def test_layer_norm_zero_mean_unit_variance():
    x = np.random.default_rng(1).standard_normal((5, 8)) * 3 + 2
    out = nx.layer_norm(x, np.ones(8), np.zeros(8), eps=1e-12).data
    assert np.allclose(out.mean(-1), 0.0, atol=1e-12)
    assert np.allclose(out.var(-1), 1.0, atol=1e-9)


def test_backward_examples():
    x = nx.parameter(np.random.default_rng(2).standard_normal((2, 3, 4)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones_like(x.data))
    y = nx.parameter(np.ones(3))
    (y * 0.0).sum().backward()
    assert np.array_equal(y.grad, np.zeros(3))


def test_backward_accumulates_and_double_use():
    rng = np.random.default_rng(3)
    x = nx.parameter(rng.standard_normal(4))
    loss = (x * x).sum()
    loss.backward()
    single = x.grad.copy()
    loss.backward()
    assert np.allclose(x.grad, 2 * single)
    x.grad = None
    twice = (x * x).sum() + (x * x).sum()
    twice.backward()
    assert np.allclose(x.grad, 2 * single)


def test_backward_non_scalar_is_contract_error():
    x = nx.parameter(np.ones(3))
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_frozen_leaves_are_not_recorded():
    w = nx.parameter(np.ones((2, 2)))
    frozen = nx.parameter(np.ones((2, 2)))
    frozen.requires_grad = False
    (w @ frozen).sum().backward()
    assert w.grad is not None and frozen.grad is None


def test_numerical_gradient_restores_input():
    x = nx.parameter(np.array([0.3, -1.2]))
    before = x.data.copy()
    g = nx.numerical_gradient(lambda: (x * x).sum(), x)
    assert np.array_equal(x.data, before)
    assert g == pytest.approx(2 * before, rel=1e-8)


def test_default_dtype_switch():
    try:
        nx.set_default_dtype("float32")
        assert nx.parameter([1.0, 2.0]).dtype == np.float32
    finally:
        nx.set_default_dtype("float64")
    assert nx.parameter([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        nx.set_default_dtype("int32")
