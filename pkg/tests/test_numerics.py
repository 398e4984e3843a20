import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from pgt import numerics as nx
from pgt.errors import ContractError
from pgt.numerics import Tape, Tensor, grad_check


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_hand_cases():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(eye, m).data, m.data)
    assert nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(nx.matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b))) < 1e-12


def test_softmax_cases():
    assert np.allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)
    big = nx.softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(big)) and np.allclose(big, 0.5)
    assert np.allclose(nx.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).normal(scale=30.0, size=(rows, cols))
    s = nx.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-12)


def test_layer_norm_cases():
    ones, zeros = Tensor(np.ones(3)), Tensor(np.zeros(3))
    assert np.array_equal(nx.layer_norm(Tensor([[5.0, 5.0, 5.0]]), ones, zeros).data, np.zeros((1, 3)))
    out = nx.layer_norm(Tensor([[1.0, 2.0, 3.0]]), ones, zeros, eps=0.0).data
    assert np.allclose(out, [[-1.2247, 0.0, 1.2247]], atol=1e-4)
    x = np.random.default_rng(1).normal(size=(4, 3))
    collapsed = nx.layer_norm(Tensor(x), zeros, Tensor(np.full(3, 0.7))).data
    assert np.all(collapsed == 0.7)


def test_gelu_cases():
    assert nx.gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(nx.gelu(Tensor([12.0])).data[0] - 12.0) < 1e-12
    assert abs(nx.gelu(Tensor([1.0])).data[0] - 0.8413) < 1e-3
    x = np.linspace(-4, 4, 17)
    assert np.allclose(nx.gelu(Tensor(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)


def test_grad_check_square():
    x = Tensor([3.0], requires_grad=True)
    assert grad_check(lambda t: nx.tsum(t * t), x) < 1e-8


def test_grad_check_constant_sum_of_softmax():
    x = Tensor(np.random.default_rng(2).normal(size=5), requires_grad=True)
    g = nx.analytic_grad(lambda t: nx.tsum(nx.softmax(t)), x)
    n = nx.numerical_grad(lambda t: nx.tsum(nx.softmax(t)), x)
    assert np.max(np.abs(g - n)) < 1e-6


def test_grad_check_rejects_non_scalar_and_bad_eps():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda t: t * 2.0, x)
    with pytest.raises(ContractError):
        grad_check(lambda t: nx.tsum(t), x, eps=1e-2)


UNARY = {
    "exp": lambda t: nx.exp(t),
    "log": lambda t: nx.log(nx.absolute(t) + 0.5),
    "sqrt": lambda t: nx.sqrt(t * t + 1.0),
    "sigmoid": nx.sigmoid,
    "softplus": nx.softplus,
    "gelu": nx.gelu,
    "power": lambda t: nx.power(t * t + 1.0, 1.5),
    "softmax": lambda t: nx.softmax(t, axis=-1),
    "log_softmax": lambda t: nx.log_softmax(t, axis=-1),
    "transpose": lambda t: nx.transpose(t),
    "reshape": lambda t: nx.reshape(t, (-1,)),
    "getitem": lambda t: t[1:, ::2],
    "fancy_getitem": lambda t: t[np.array([0, 0, 1])],
    "pad": lambda t: nx.pad(t, ((1, 0), (0, 2))),
    "concat": lambda t: nx.concat([t, t * 2.0], axis=0),
    "mean": lambda t: nx.mean(t, axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_backward_matches_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w = rng.normal(size=UNARY[name](Tensor(x.data)).shape)
    assert grad_check(lambda t: nx.tsum(UNARY[name](t) * w), x, eps=1e-5) < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_binary_ops_backward_on_random_shapes(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(m, k)), requires_grad=True)
    b = rng.normal(size=(k, n))
    bias = rng.normal(size=(n,))
    w = rng.normal(size=(m, n))

    def f(t):
        y = nx.matmul(t, Tensor(b)) + Tensor(bias)
        return nx.tsum(y * w / (nx.absolute(y) + 2.0))

    coords = None if a.size <= 40 else rng.choice(a.size, 40, replace=False)
    assert grad_check(f, a, eps=1e-5, coords=coords) < 1e-4


def test_layer_norm_backward():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    gamma, beta = Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8))
    w = rng.normal(size=(6, 8))
    assert grad_check(lambda t: nx.tsum(nx.layer_norm(t, gamma, beta) * w), x, eps=1e-5) < 1e-4
    g = Tensor(gamma.data, requires_grad=True)
    assert grad_check(lambda t: nx.tsum(nx.layer_norm(Tensor(x.data), t, beta) * w), g, eps=1e-5) < 1e-4


def test_broadcast_backward_reduces_to_input_shape():
    a = Tensor(np.ones((3, 1)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        y = nx.tsum(a * b)
    tape.backward(y)
    assert a.grad.shape == (3, 1) and np.allclose(a.grad, 6.0)
    assert b.grad.shape == (4,) and np.allclose(b.grad, 3.0)


def test_tape_records_only_differentiable_ops():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        nx.tsum(Tensor(np.ones(2)) * 3.0)
    assert len(tape) == 0
    with Tape() as tape:
        z = nx.tsum(x * 3.0)
    assert len(tape) == 2
    tape.backward(z)
    assert np.allclose(x.grad, 3.0)


def test_gradient_accumulates_once_per_backward():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        y = nx.tsum(x * x + x)
    tape.backward(y)
    assert x.grad.tolist() == [5.0]


def test_item_requires_single_element():
    assert Tensor([4.0]).item() == 4.0
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_operations_are_deterministic():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    r1 = nx.softmax(nx.matmul(Tensor(a), Tensor(b))).data
    r2 = nx.softmax(nx.matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()
