import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transrx import numerics as nx
from transrx.numerics import ContractError, NonFiniteError, Parameter, Tensor
from transrx.selftest import PRIMITIVES, primitive_fd_error


# ---------------------------------------------------------------- forward values

def test_matmul_identity():
    a = Tensor([[1, 2], [3, 4]])
    out = nx.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_annihilating():
    out = nx.matmul(Tensor([[1, 0]]), Tensor([[0], [5]]))
    np.testing.assert_array_equal(out.data, [[0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ContractError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_layer_norm_constant_maps_to_bias():
    x = Tensor(np.full((1, 4), 3.0))
    out = nx.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_already_normalized():
    out = nx.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_moments():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(2.0, 5.0, (7, 32)))
    out = nx.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(nx.softmax_lastaxis(Tensor(np.zeros(4))).data, 0.25)
    out = nx.softmax_lastaxis(Tensor([1000.0, 0.0])).data
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    out = nx.softmax_lastaxis(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_pointwise_values():
    np.testing.assert_array_equal(nx.relu(Tensor([-3.0, 2.0])).data, [0.0, 2.0])
    assert float(nx.sigmoid(Tensor(0.0)).data) == 0.5
    out = nx.concat_lastaxis([Tensor(np.ones((2, 3, 4))), Tensor(np.zeros((2, 3, 1)))])
    assert out.shape == (2, 3, 5)


def test_add_shape_mismatch():
    with pytest.raises(ContractError):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_non_finite_raises_with_op_name():
    with pytest.raises(NonFiniteError, match="mul"):
        nx.mul(Tensor([np.inf]), Tensor([0.0]))


# ---------------------------------------------------------------- backward

def test_backward_sum_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    nx.backward(nx.sum_all(x))
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    nx.backward(nx.sum_all(nx.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        nx.backward(nx.mul(x, x))


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = nx.add(x, x)
    nx.backward(nx.sum_all(nx.mul(y, x)))  # 2x^2 -> 4x
    np.testing.assert_allclose(x.grad, [12.0])


def test_matmul_gradient_fd_float32():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    err = nx.finite_difference_check(lambda: nx.sum_all(nx.matmul(a, b)), [a, b], eps=1e-2)
    assert err < 1e-3


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_fd64(name):
    assert primitive_fd_error(name) < 1e-4


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        b = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
        loss = nx.sum_all(nx.softmax_lastaxis(nx.matmul(a, b)))
        nx.backward(loss)
        return loss.data.copy(), a.grad.copy(), b.grad.copy()

    r1, r2 = run(), run()
    for u, v in zip(r1, r2):
        assert u.tobytes() == v.tobytes()


# ---------------------------------------------------------------- AdamW

def test_adamw_first_step_closed_form():
    p = Parameter("w", Tensor([0.0]))
    p.tensor.grad = np.array([1.0], dtype=np.float32)
    nx.adamw_step([p], lr=1e-3, weight_decay=0.0)
    # m_hat = v_hat = 1 -> step = lr / (1 + eps)
    np.testing.assert_allclose(p.data, [-1e-3 / (1 + 1e-8)], rtol=1e-6)
    assert p.step == 1


def test_adamw_zero_grad_no_decay_is_noop():
    p = Parameter("w", Tensor([0.3, -2.0]))
    before = p.data.copy()
    p.zero_grad()
    nx.adamw_step([p], weight_decay=0.0)
    assert p.data.tobytes() == before.tobytes()


def test_adamw_pure_decay():
    p = Parameter("w", Tensor([1.5, -2.0], dtype=np.float64))
    p.zero_grad()
    nx.adamw_step([p], lr=1e-2, weight_decay=0.1)
    np.testing.assert_allclose(p.data, np.array([1.5, -2.0]) * (1 - 1e-2 * 0.1))


def test_adamw_missing_grad():
    p = Parameter("w", Tensor([1.0]))
    with pytest.raises(ContractError, match="'w'"):
        nx.adamw_step([p])


def test_parameter_moments_zero_initialized():
    p = Parameter("w", Tensor(np.ones((2, 3))))
    assert p.m.shape == p.v.shape == (2, 3)
    assert not p.m.any() and not p.v.any()


def test_modes_are_per_thread():
    import threading

    entered, release = threading.Event(), threading.Event()

    def worker():
        with nx.no_grad(), nx.precision(np.float64):
            entered.set()
            release.wait(5)

    t = threading.Thread(target=worker)
    t.start()
    entered.wait(5)
    try:
        x = nx.Tensor(np.ones(3), requires_grad=True)
        y = nx.sum_all(nx.mul(x, x))
        assert y.requires_grad and x.data.dtype == np.float32
    finally:
        release.set()
        t.join()
