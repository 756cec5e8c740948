import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from oracles import central_diff, cos, grad_rel_error, loss_contrast_loop, loss_time_loop
from scatterdet import tensor as tn
from scatterdet.detector import Adam
from scatterdet.graph import TemporalGraph, build_lookback
from scatterdet.objective import (
    EmaConfig,
    LossBreakdown,
    ScatterCenter,
    ema_update,
    infonce_mi_estimate,
    init_center,
    loss_contrast,
    loss_infonce,
    loss_scatter,
    loss_time,
    project_to_sphere,
    total_loss,
)

rows = arrays(np.float64, (5, 4), elements=st.floats(-10, 10)).filter(
    lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)
)


# -- projection -------------------------------------------------------------
def test_projection_examples():
    np.testing.assert_allclose(project_to_sphere(np.array([[3.0, 4.0]])).data, [[0.6, 0.8]])
    u = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(project_to_sphere(u).data, u)


@given(rows)
def test_projection_gives_unit_rows(z):
    np.testing.assert_allclose(np.linalg.norm(project_to_sphere(z).data, axis=1), 1.0, atol=1e-10)


def test_projection_gradient(rng):
    z = tn.parameter(rng.standard_normal((4, 3)))
    w = rng.standard_normal((4, 3))
    tn.sum(project_to_sphere(z) * w).backward()
    numeric = central_diff(lambda: float(np.sum(project_to_sphere(z).data * w)), z.data)
    assert grad_rel_error(z.grad, numeric) < 1e-5


def test_projection_of_zero_row_is_finite():
    assert np.all(project_to_sphere(np.zeros((2, 3))).data == 0.0)


# -- centers ----------------------------------------------------------------
def test_center_strategies():
    assert np.all(init_center("zero", 8).centers == 0.0)
    c = init_center("fixed_radius", 16, seed=3, radius=0.3)
    assert np.linalg.norm(c.centers[0]) == pytest.approx(0.3, abs=1e-12)
    multi = init_center("multi_center", 5, seed=1, num_centers=4)
    assert multi.centers.shape == (4, 5)
    assert np.all(np.linalg.norm(multi.centers, axis=1) < 1.0)


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
def test_fixed_radius_bounds(r):
    with pytest.raises(ValueError):
        init_center("fixed_radius", 4, radius=r)


def test_unknown_strategy_and_dimension():
    with pytest.raises(ValueError):
        init_center("cube", 4)
    with pytest.raises(ValueError):
        init_center("zero", 0)


def test_centers_are_frozen():
    c = init_center("random_in_ball", 4)
    with pytest.raises(ValueError):
        c.centers[0, 0] = 1.0


def test_random_in_ball_monte_carlo():
    """Norms strictly inside the unit ball; direction uniform across octants."""
    draws = np.array([init_center("random_in_ball", 3, seed=s).centers[0] for s in range(10_000)])
    norms = np.linalg.norm(draws, axis=1)
    assert np.all((norms > 0) & (norms < 1))
    octant = (draws > 0).astype(int) @ np.array([4, 2, 1])
    counts = np.bincount(octant, minlength=8)
    assert stats.chisquare(counts).pvalue > 0.01
    # the radius itself is uniform on (0, 1)
    assert stats.kstest(norms, "uniform").pvalue > 0.01


# -- time -----------------------------------------------------------------------
def test_time_loss_matches_loop(rng):
    z = rng.standard_normal((7, 3))
    assert loss_time(z).item() == pytest.approx(loss_time_loop(z), rel=1e-12)


def test_time_loss_batch_is_mean_of_windows(rng):
    z = rng.standard_normal((3, 6, 2))
    expected = np.mean([loss_time_loop(w) for w in z])
    assert loss_time(z).item() == pytest.approx(expected, rel=1e-12)


# quarter-step grid so squared differences cannot underflow to zero
@given(arrays(np.float64, (6, 3), elements=st.integers(-20, 20).map(lambda k: k / 4)))
def test_time_loss_nonnegative_and_zero_iff_constant(z):
    v = loss_time(z).item()
    assert v >= 0
    assert (v == 0) == bool(np.all(z == z[0]))


def test_time_loss_needs_two_steps():
    with pytest.raises(ValueError):
        loss_time(np.ones((1, 3)))


# -- scatter --------------------------------------------------------------------
def test_scatter_alignment_extremes():
    center = ScatterCenter(np.array([[0.5, 0.0]]))
    assert loss_scatter(np.array([[2.0, 0.0], [0.1, 0.0]]), center).item() == pytest.approx(-1.0)
    assert loss_scatter(np.array([[-1.0, 0.0]]), center).item() == pytest.approx(1.0)
    assert loss_scatter(np.array([[0.0, 3.0]]), center).item() == pytest.approx(0.0, abs=1e-15)


def test_scatter_zero_center_is_constant():
    assert loss_scatter(np.ones((4, 3)), init_center("zero", 3)).item() == 0.0


@given(rows, st.integers(0, 1000))
def test_scatter_in_range(z, seed):
    v = loss_scatter(z, init_center("random_in_ball", 4, seed=seed)).item()
    assert -1 - 1e-12 <= v <= 1 + 1e-12


@given(rows, st.integers(0, 1000))
@settings(max_examples=30)
def test_multi_center_brute_force(z, seed):
    center = init_center("multi_center", 4, seed=seed, num_centers=3)
    expected = -np.mean([max(cos(row, c) for c in center.centers) for row in z])
    assert loss_scatter(z, center).item() == pytest.approx(expected, abs=1e-12)


def test_scatter_gradient(rng):
    z = tn.parameter(rng.standard_normal((5, 4)))
    center = init_center("multi_center", 4, seed=2, num_centers=2)
    loss_scatter(z, center).backward()
    numeric = central_diff(lambda: loss_scatter(z.data, center).item(), z.data)
    assert grad_rel_error(z.grad, numeric) < 1e-5


# -- contrast -------------------------------------------------------------------
def test_contrast_matches_loop(rng):
    zo, zt = rng.standard_normal((2, 6, 3))
    g = build_lookback(6)
    assert loss_contrast(zo, zt, g).item() == pytest.approx(loss_contrast_loop(zo, zt, g.edges), rel=1e-12)


def test_contrast_per_window_graphs(rng):
    zo, zt = rng.standard_normal((2, 2, 5, 3))
    graphs = [build_lookback(5), TemporalGraph(5, ((0, 4), (1, 3)))]
    expected = np.mean([loss_contrast_loop(zo[i], zt[i], g.edges) for i, g in enumerate(graphs)])
    assert loss_contrast(zo, zt, graphs).item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        loss_contrast(zo, zt, graphs[:1])


@given(arrays(np.float64, (2, 5, 3), elements=st.floats(-5, 5)))
def test_contrast_bounds(z):
    v = loss_contrast(z[0], z[1], build_lookback(5)).item()
    lo, hi = -math.log(1 / (1 + math.exp(-1))), -math.log(1 / (1 + math.exp(1)))
    assert lo - 1e-12 <= v <= hi + 1e-12


def test_contrast_target_receives_no_gradient(rng):
    zo = tn.parameter(rng.standard_normal((5, 3)))
    zt = tn.parameter(rng.standard_normal((5, 3)))
    loss_contrast(zo, zt, build_lookback(5)).backward()
    assert zt.grad is None or np.all(zt.grad == 0.0)
    assert np.any(zo.grad != 0.0)


# -- InfoNCE --------------------------------------------------------------------
def test_infonce_uniform_scores_give_log_batch():
    g = build_lookback(6)
    v = loss_infonce(np.ones((6, 3)), np.ones((6, 3)), g).item()
    assert v == pytest.approx(math.log(g.num_edges), abs=1e-12)


@given(arrays(np.float64, (2, 6, 3), elements=st.floats(-5, 5)).filter(lambda a: np.all(np.abs(a).sum(-1) > 1e-3)))
def test_infonce_nonnegative(z):
    assert loss_infonce(z[0], z[1], build_lookback(6)).item() >= 0


def test_infonce_needs_two_edges_and_positive_temperature():
    with pytest.raises(ValueError):
        loss_infonce(np.ones((3, 2)), np.ones((3, 2)), TemporalGraph(3, ((0, 1),)))
    with pytest.raises(ValueError):
        loss_infonce(np.ones((4, 2)), np.ones((4, 2)), build_lookback(4), temperature=0.0)


def test_mi_estimate_identity():
    for b, loss in [(2, 0.0), (8, 1.3), (100, 4.0)]:
        assert infonce_mi_estimate(loss, b) == math.log(b - 1) - loss


def test_infonce_bound_rises_during_training():
    """Aligned toy pairs: the smoothed MI estimate is nondecreasing over 50 steps."""
    rng = np.random.default_rng(0)
    T, d = 12, 4
    target = rng.standard_normal((T, d))
    g = TemporalGraph(T, tuple((t, t + 1) for t in range(T - 1)))
    online = tn.parameter(rng.standard_normal((T, d)))
    predictor = tn.parameter(np.eye(d))
    opt = Adam({"z": online, "p": predictor}, lr=0.02)
    bounds = []
    for _ in range(50):
        online.zero_grad()
        predictor.zero_grad()
        loss = loss_infonce(online, target, g, predictor=predictor)
        loss.backward()
        opt.step()
        bounds.append(infonce_mi_estimate(loss.item(), g.num_edges))
    smooth = np.convolve(bounds, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) >= 0)
    assert bounds[-1] <= math.log(g.num_edges - 1)


# -- total and EMA --------------------------------------------------------------
def test_total_loss_examples():
    assert total_loss(0.0, -1.0, math.log(2)).item() == pytest.approx(math.log(2) - 1, abs=1e-15)
    assert total_loss(0.0, 0.0, 0.0).item() == 0.0
    assert LossBreakdown.of(0.5, -0.25, 1.0).total == 1.25


@given(st.floats(0, 10), st.floats(-1, 1), st.floats(0, 10))
def test_total_is_plain_sum(a, b, c):
    assert total_loss(a, b, c).item() == pytest.approx(a + b + c, abs=1e-12)


def test_ema_examples():
    tgt, onl = {"w": tn.parameter(1.0)}, {"w": tn.parameter(0.0)}
    ema_update(tgt, onl, 0.9)
    assert tgt["w"].data == pytest.approx(0.9)
    tgt = {"w": tn.parameter(np.array([2.0, -1.0]))}
    ema_update(tgt, {"w": tn.parameter(np.zeros(2))}, 1 - 1e-15)
    np.testing.assert_allclose(tgt["w"].data, [2.0, -1.0], rtol=1e-14)


def test_ema_geometric_series():
    v = np.array([3.0, -2.0, 0.5])
    tgt, onl = {"w": tn.parameter(np.zeros(3))}, {"w": tn.parameter(v)}
    for _ in range(10):
        ema_update(tgt, onl, 0.5)
    np.testing.assert_allclose(tgt["w"].data, 0.9990234375 * v, rtol=1e-15)


@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), arrays(np.float64, 4, elements=st.floats(-5, 5)),
       st.floats(0.01, 0.99))
def test_ema_contracts(a, b, m):
    tgt, onl = {"w": tn.parameter(a.copy())}, {"w": tn.parameter(b)}
    before = np.linalg.norm(a - b)
    ema_update(tgt, onl, m)
    assert np.linalg.norm(tgt["w"].data - b) <= m * before + 1e-12


def test_ema_shape_and_name_mismatch():
    with pytest.raises(tn.DimensionError):
        ema_update({"w": tn.parameter(np.ones(2))}, {"w": tn.parameter(np.ones(3))}, 0.5)
    with pytest.raises(ValueError):
        ema_update({"w": tn.parameter(1.0)}, {"v": tn.parameter(1.0)}, 0.5)


@pytest.mark.parametrize("kw", [dict(m=0.0), dict(m=1.0), dict(cadence="hourly")])
def test_ema_config_validation(kw):
    with pytest.raises(ValueError):
        EmaConfig(**kw)
