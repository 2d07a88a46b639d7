"""Autodiff engine: gradients, higher-order gradients, adjoint structure."""

from __future__ import annotations

import numpy as np
import pytest

from relmeta import tensor as T
from relmeta.tensor import NonFiniteError, ShapeError, Tensor, ensure_finite, grad, no_grad
from relmeta.verify import gradcheck, rel_err


def test_grad_of_constant_function_is_zero() -> None:
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = T.tsum(Tensor(np.array([3.0])))  # does not touch x
    (g,) = grad(out, [x])
    assert g.shape == (2,)
    assert np.all(g.data == 0.0)


def test_grad_requires_scalar_output() -> None:
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        grad(x * 2.0, [x])


def test_second_and_third_derivatives_of_cubic() -> None:
    x = Tensor(np.array(2.0), requires_grad=True)
    y = T.power(x, 3.0)
    (g1,) = grad(y, [x], create_graph=True)
    (g2,) = grad(g1, [x], create_graph=True)
    (g3,) = grad(g2, [x])
    assert g1.item() == pytest.approx(12.0)
    assert g2.item() == pytest.approx(12.0)
    assert g3.item() == pytest.approx(6.0)


def test_meta_gradient_quadratic_closed_form() -> None:
    # inner and outer loss theta^2/2, lr 0.1: after k inner steps the
    # gradient w.r.t. the start point is (1 - lr)^(2k) * theta
    alpha = 0.1
    th = Tensor(np.array(1.0), requires_grad=True)
    cur = th
    for _ in range(2):
        (g,) = grad(T.power(cur, 2.0) * 0.5, [cur], create_graph=True)
        cur = cur - alpha * g
    (meta,) = grad(T.power(cur, 2.0) * 0.5, [th])
    assert meta.item() == pytest.approx(0.6561, abs=1e-12)


def test_gradcheck_sweep_small() -> None:
    # seeded random instances per op; the full 100-case sweep runs in the
    # acceptance suite
    from relmeta.verify import check_gradients

    results = check_gradients(cases_per_op=3, seed=11)
    bad = [r.line() for r in results if not r.ok]
    assert not bad, "\n".join(bad)
    assert len(results) >= 25  # the sweep covers the whole op set


def test_no_grad_suppresses_taping() -> None:
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with no_grad():
        y = T.tsum(x * x)
    assert not y.requires_grad
    (g,) = grad(y, [x]) if y.requires_grad else (Tensor(np.zeros(2)),)
    assert np.all(g.data == 0.0)


def test_broadcast_gradients_reduce_correctly() -> None:
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    ga, gb = grad(T.tsum(a * b), [a, b])
    assert ga.shape == (3, 1)
    assert gb.shape == (1, 4)
    assert np.allclose(ga.data[:, 0], np.repeat(b.data.sum(), 3))
    assert np.allclose(gb.data[0, :], np.repeat(a.data.sum(), 4))


def test_fan_out_accumulates() -> None:
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x * 2.0  # x used three times
    (g,) = grad(y, [x])
    assert g.item() == pytest.approx(2 * 3.0 + 2.0)


def test_windows_overlap_add_adjoint_identity() -> None:
    # <windows(x), y> == <x, overlap_add(y)> for random x, y
    rng = np.random.default_rng(5)
    for _ in range(20):
        h, w = rng.integers(5, 10, size=2)
        k = int(rng.integers(2, 4))
        s = int(rng.integers(1, 3))
        x = rng.standard_normal((2, 2, h, w))
        wx = T.windows(Tensor(x), k, k, s)
        y = rng.standard_normal(wx.shape)
        lhs = float(np.sum(wx.data * y))
        rhs = float(np.sum(x * T.overlap_add(Tensor(y), (h, w), s).data))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_slice_unslice_adjoint_identity() -> None:
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3, 9, 9))
    sx = T.slice2d(Tensor(x), 1, 2, 2, 4, 3)
    y = rng.standard_normal(sx.shape)
    lhs = float(np.sum(sx.data * y))
    rhs = float(np.sum(x * T.unslice2d(Tensor(y), (9, 9), 1, 2, 2).data))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_max_last_ties_take_first_occurrence() -> None:
    t = Tensor(np.array([[1.0, 3.0, 3.0, 2.0]]), requires_grad=True)
    (g,) = grad(T.tsum(T.max_last(t)), [t])
    assert g.data.tolist() == [[0.0, 1.0, 0.0, 0.0]]


def test_maximum_ties_route_to_first_argument() -> None:
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 5.0]), requires_grad=True)
    ga, gb = grad(T.tsum(T.maximum(a, b)), [a, b])
    assert ga.data.tolist() == [1.0, 0.0]
    assert gb.data.tolist() == [0.0, 1.0]


def test_stop_gradient_blocks_flow() -> None:
    x = Tensor(np.array(2.0), requires_grad=True)
    y = T.stop_gradient(x * x) * x
    (g,) = grad(y, [x])
    assert g.item() == pytest.approx(4.0)  # only the outer factor


def test_matmul_shape_error_names_dims() -> None:
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(ShapeError):
        T.matmul(a, b)


def test_second_order_through_matmul_chain() -> None:
    # hessian-vector product vs finite differences of the gradient
    rng = np.random.default_rng(9)
    w = rng.standard_normal((3, 2))
    x = rng.standard_normal((4, 3))
    v = rng.standard_normal((3, 2))

    def loss(wt: Tensor) -> Tensor:
        return T.tmean(T.power(T.matmul(Tensor(x), wt), 4.0))

    wt = Tensor(w, requires_grad=True)
    (g,) = grad(loss(wt), [wt], create_graph=True)
    (hv,) = grad(T.tsum(g * T.constant(v)), [wt])
    h = 1e-5
    wp = Tensor(w + h * v, requires_grad=True)
    wm = Tensor(w - h * v, requires_grad=True)
    (gp,) = grad(loss(wp), [wp])
    (gm,) = grad(loss(wm), [wm])
    fd = (gp.data - gm.data) / (2 * h)
    assert rel_err(hv.data, fd) < 1e-6


def test_gradcheck_helper_rejects_wrong_gradient() -> None:
    # a deliberately broken objective caught by the harness itself
    def bad(t):
        return T.tsum(t[0] * t[0]) + float(np.sum(t[0].data))  # hidden np term

    with pytest.raises(AssertionError):
        gradcheck(bad, [np.array([1.0, 2.0])])


def test_ensure_finite_raises() -> None:
    with pytest.raises(NonFiniteError):
        ensure_finite(np.array([1.0, np.nan]), "loss")
    ensure_finite(np.array([1.0, 2.0]), "loss")
