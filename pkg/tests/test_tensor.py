import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_diff, grad_rel_error
from scatterdet import tensor as tn
from scatterdet.tensor import DimensionError, DomainError, Tensor


def check_grad(build, *shapes, rng, positive=False, tol=1e-5):
    """Compare backward() with central differences for every input of ``build``."""
    leaves = []
    for shape in shapes:
        data = rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape)
        leaves.append(tn.parameter(data))

    def f():
        return float(tn.sum(build(*leaves)).item())

    out = tn.sum(build(*leaves))
    out.backward()
    for leaf in leaves:
        numeric = central_diff(f, leaf.data)
        assert grad_rel_error(leaf.grad, numeric) < tol


# -- values -------------------------------------------------------------------
def test_matmul_identity_and_hand_value():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tn.matmul(np.eye(2), m).data, m)
    assert tn.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_activation_values():
    assert tn.sigmoid(0.0).item() == 0.5
    assert tn.elu(-1.0).item() == pytest.approx(math.exp(-1) - 1, abs=1e-12)
    assert tn.leaky_relu(-2.0, 0.2).item() == pytest.approx(-0.4)
    assert tn.prelu(np.array([-2.0, 3.0]), np.array(0.25)).data.tolist() == [-0.5, 3.0]


def test_reductions():
    assert tn.mean(np.array([1.0, 2.0, 3.0])).item() == 2.0
    assert tn.l2norm(np.array([3.0, 4.0])).item() == 5.0
    x = tn.parameter(np.arange(6.0).reshape(2, 3))
    tn.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_min_max_route_to_first_attaining_element():
    x = tn.parameter(np.array([3.0, 1.0, 3.0, 1.0]))
    tn.reduce("max", x).backward()
    assert x.grad.tolist() == [1.0, 0.0, 0.0, 0.0]
    x.zero_grad()
    tn.reduce("min", x).backward()
    assert x.grad.tolist() == [0.0, 1.0, 0.0, 0.0]


def test_reduce_rejects_bad_axis_and_op():
    with pytest.raises(DimensionError):
        tn.reduce("sum", np.ones((2, 2)), axis=2)
    with pytest.raises(ValueError):
        tn.reduce("median", np.ones(3))


def test_softmax_basic_and_masked():
    np.testing.assert_allclose(tn.softmax(np.zeros(2)).data, [0.5, 0.5])
    out = tn.softmax(np.array([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]]))
    assert out.data[0, 1] == 0.0
    assert out.data.sum() == pytest.approx(1.0)
    with pytest.raises(DomainError):
        tn.softmax(np.ones((1, 2)), mask=np.zeros((1, 2), dtype=bool))


@given(arrays(np.float64, 6, elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(tn.softmax(x + c).data, tn.softmax(x).data, atol=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        tn.log(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        tn.sqrt(np.array([-1.0]))
    with pytest.raises(DomainError):
        tn.div(1.0, np.array([0.0]))


def test_nonfinite_results_are_rejected():
    with pytest.raises(FloatingPointError):
        tn.exp(np.array([1000.0]))


# -- backward -----------------------------------------------------------------
def test_backward_scalar_examples():
    x = tn.parameter(3.0)
    tn.square(x).backward()
    assert x.grad == 6.0
    y = tn.parameter(0.0)
    tn.sigmoid(y).backward()
    assert y.grad == 0.25


def test_backward_needs_scalar():
    with pytest.raises(DimensionError):
        (tn.parameter(np.ones(3)) * 2.0).backward()


def test_grads_accumulate_until_zeroed():
    x = tn.parameter(2.0)
    (x * 3.0).backward()
    (x * 3.0).backward()
    assert x.grad == 6.0
    x.zero_grad()
    (x * 3.0).backward()
    assert x.grad == 3.0


def test_shared_subexpression_visited_once():
    x = tn.parameter(2.0)
    y = x * x
    (y + y).backward()
    assert x.grad == 8.0


def test_no_grad_builds_no_graph():
    x = tn.parameter(np.ones(3))
    with tn.no_grad():
        y = tn.sum(x * 2.0)
    assert not y.requires_grad
    assert tn.is_grad_enabled()


def test_detach_cuts_gradient():
    x = tn.parameter(np.ones(2))
    tn.sum(x.detach() * x).backward()
    np.testing.assert_array_equal(x.grad, np.ones(2))


@pytest.mark.parametrize(
    "build, shapes, positive",
    [
        (lambda a, b: a @ b, [(3, 3), (3, 3)], False),
        (lambda a, b: tn.matmul(a, b), [(2, 3, 4), (2, 4, 2)], False),
        (lambda a, b: a * b + a / b - b, [(2, 3), (2, 3)], True),
        (lambda a: tn.sqrt(a) + tn.log(a), [(4,)], True),
        (lambda a: tn.exp(a) * tn.sigmoid(a), [(5,)], False),
        (lambda a: tn.log_sigmoid(a) + tn.elu(a), [(5,)], False),
        (lambda a: tn.leaky_relu(a, 0.2), [(6,)], False),
        (lambda a, alpha: tn.prelu(a, alpha), [(6,), ()], False),
        (lambda a: tn.softmax(a, axis=-1) * np.arange(5.0), [(5,)], False),
        (lambda a: tn.log_softmax(a, axis=0) * np.arange(4.0)[:, None], [(4, 2)], False),
        (lambda a: tn.l2norm(a, axis=1), [(3, 4)], False),
        (lambda a: tn.reduce("max", a, axis=0) + tn.reduce("min", a, axis=1).sum(), [(3, 4)], False),
        (lambda a: tn.pad_left(a, 2, axis=0) * np.arange(5.0)[:, None], [(3, 2)], False),
        (lambda a, b: tn.concat([a, b], axis=1) * np.arange(5.0), [(2, 2), (2, 3)], False),
        (lambda a, b: tn.stack([a, b]) * np.arange(3.0), [(3,), (3,)], False),
        (lambda a: a[1:, [0, 0, 2]] * 2.0, [(3, 3)], False),
        (lambda a: a.transpose(1, 0).reshape(6) * np.arange(6.0), [(2, 3)], False),
        (lambda a, b: a + b, [(3, 1), (1, 4)], False),
    ],
)
def test_gradients_match_finite_differences(build, shapes, positive, rng):
    check_grad(build, *shapes, rng=rng, positive=positive)


@given(arrays(np.float64, 5, elements=st.floats(-3, 3)))
def test_prelu_alpha_gradient(x):
    alpha = tn.parameter(np.array(0.3))
    tn.sum(tn.prelu(x, alpha)).backward()
    numeric = central_diff(lambda: float(tn.sum(tn.prelu(x, alpha)).item()), alpha.data)
    assert alpha.grad == pytest.approx(float(numeric), abs=1e-7)


def test_softmax_jacobian(rng):
    x = rng.standard_normal(5)
    for k in range(5):
        leaf = tn.parameter(x.copy())
        tn.softmax(leaf)[k].backward()
        numeric = central_diff(lambda: float(tn.softmax(leaf).data[k]), leaf.data)
        np.testing.assert_allclose(leaf.grad, numeric, atol=1e-9)


@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), st.integers(0, 2**32 - 1))
def test_forward_is_deterministic(x, seed):
    w = np.random.default_rng(seed).standard_normal((4, 2))
    a = tn.softmax(tn.matmul(x, w), axis=-1).data
    b = tn.softmax(tn.matmul(x, w), axis=-1).data
    assert np.array_equal(a, b)


@given(arrays(np.float64, (2, 3), elements=st.floats(-20, 20)))
def test_finite_inputs_give_finite_grads(x):
    leaf = tn.parameter(x)
    loss = tn.sum(tn.log_sigmoid(leaf) + tn.elu(leaf) + tn.l2norm(leaf, axis=1, keepdims=True))
    loss.backward()
    assert np.all(np.isfinite(leaf.grad))


def test_tensor_rejects_nonfinite_data():
    with pytest.raises(FloatingPointError):
        Tensor([1.0, float("nan")])
