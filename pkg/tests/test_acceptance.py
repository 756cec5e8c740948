"""The twelve acceptance criteria, one test each; run with ``pytest tests/test_acceptance.py -v``.

Criteria 6-11 share one desk-scale training run (module fixture).
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from acceptance_report import verdict
from oracles import central_diff, grad_rel_error, pairwise_auc, point_adjust_loop
from scatterdet import experiments as ex
from scatterdet import tensor as tn
from scatterdet.data import windows
from scatterdet.detector import TrainConfig, compute_losses, delta_table, init_state, train, window_graphs
from scatterdet.graph import build_lookback
from scatterdet.metrics import affiliation, auc, point_adjust, range_auc, vus
from scatterdet.objective import (
    EmaConfig,
    ScatterCenter,
    ema_update,
    infonce_mi_estimate,
    loss_contrast,
    loss_infonce,
    loss_scatter,
    loss_time,
    total_loss,
)

pytestmark = pytest.mark.slow


# -- 1-5: exact properties -------------------------------------------------------
def test_c01_gradient_integrity():
    t0 = time.perf_counter()
    cfg = TrainConfig(window_T=6, batch_size=2, hidden_dim=8, num_heads=2, seed=3)
    state = init_state(cfg, 3)
    x = np.random.default_rng(0).standard_normal((2, 6, 3))
    graphs = window_graphs(windows(x.reshape(12, 3), 6), cfg.topology)
    total = compute_losses(state, x, graphs)["total"]
    total.backward()

    def f():
        return float(compute_losses(state, x, graphs)["total"].item())

    worst = max(grad_rel_error(p.grad, central_diff(f, p.data)) for p in state.online.params.values())
    target_zero = all(p.grad is None or not np.any(p.grad) for p in state.target.params.values())
    seconds = time.perf_counter() - t0
    ok = worst < 1e-4 and target_zero and seconds < 30
    verdict(1, ok, f"max rel err {worst:.2e} (< 1e-4), target grads zero: {target_zero}, {seconds:.1f}s (< 30s)")


def test_c02_loss_identities():
    const = loss_time(np.ones((5, 4)) * 0.7).item()
    center = ScatterCenter(np.array([[0.3, 0.0, 0.0]]))
    aligned = loss_scatter(np.tile([2.0, 0.0, 0.0], (5, 1)), center).item()
    g = build_lookback(5)
    zo, zt = np.tile([1.0, 0.0], (5, 1)), np.tile([0.0, 1.0], (5, 1))
    contrast = loss_contrast(zo, zt, g).item()
    rng = np.random.default_rng(0)
    parts = rng.uniform(-1, 3, (100, 3))
    sum_err = max(abs(total_loss(*p).item() - (p[0] + p[1] + p[2])) for p in parts)
    ok = const == 0.0 and abs(aligned + 1) < 1e-12 and abs(contrast - math.log(2)) < 1e-12 and sum_err <= 1e-12
    verdict(
        2, ok, f"time {const}, scatter {aligned:.12f}, contrast-log2 {contrast - math.log(2):.1e}, sum err {sum_err:.1e}"
    )


def test_c03_ema_correctness():
    v = np.array([1.5, -2.0, 0.25])
    errs = []
    for m, n in ((0.5, 10), (0.9, 25), (0.99, 7)):
        tgt, onl = {"w": tn.parameter(np.zeros(3))}, {"w": tn.parameter(v)}
        for _ in range(n):
            ema_update(tgt, onl, m)
        errs.append(np.max(np.abs(tgt["w"].data - v * (1 - m**n))))
    series = np.sin(np.arange(200.0))[:, None] * np.ones((1, 2))
    counts = {}
    for cadence in ("per_epoch", "per_step"):
        cfg = TrainConfig(window_T=10, batch_size=4, epochs=3, hidden_dim=4, num_heads=1,
                          ema=EmaConfig(m=0.9, cadence=cadence))
        fit = train(series, cfg)
        counts[cadence] = (fit.state.ema_updates, 3 if cadence == "per_epoch" else len(fit.log))
    ok = max(errs) <= 1e-12 and all(a == b for a, b in counts.values())
    verdict(3, ok, f"closed-form err {max(errs):.1e}, updates (got, expected) {counts}")


def test_c04_metric_oracle_equivalence():
    rng = np.random.default_rng(4)
    auc_err = red_err = 0.0
    pa_ok = True
    streams = 0
    while streams < 500:
        n = int(rng.integers(2, 65))
        y = (rng.random(n) < rng.uniform(0.1, 0.6)).astype(int)
        if y.sum() in (0, n):
            continue
        streams += 1
        s = rng.integers(0, 12, n).astype(float)  # coarse grid forces ties
        plain = auc(s, y)
        auc_err = max(auc_err, abs(plain - pairwise_auc(s, y)))
        pr = auc(s, y, "pr")
        red_err = max(
            red_err,
            *np.abs(np.array(range_auc(s, y, 0)) - (plain, pr)),
            *np.abs(np.array(vus(s, y, 0)) - (plain, pr)),
        )
        pred = rng.integers(0, 2, n)
        pa_ok &= point_adjust(pred, y).tolist() == point_adjust_loop(list(pred), list(y))
    ok = auc_err <= 1e-9 and red_err <= 1e-9 and pa_ok
    verdict(4, ok, f"{streams} streams: AUC err {auc_err:.1e}, reduction err {red_err:.1e}, PA exact: {pa_ok}")


def test_c05_affiliation_sanity():
    truth = np.zeros(500, dtype=int)
    truth[[20, 21, 22, 100, 300]] = 1
    truth[400:450] = 1
    perfect = affiliation(truth, truth)[2]
    streams = ex.sensitivity_streams(4000, seed=0)
    rows = {name: {r["shift"]: r["aff_f"] for r in ex.sensitivity_table(y, name, (0, 1))} for name, y in streams.items()}
    bursty, long = rows["bursty"][1], rows["long"][1]
    ok = abs(perfect - 1) <= 1e-9 and bursty < 0.5 and long > 0.95
    verdict(5, ok, f"perfect Aff-F {perfect:.12f}; Aff-F(dt=1) bursty {bursty:.3f} (< 0.5), long {long:.3f} (> 0.95)")


# -- 6-11: desk-scale detection -----------------------------------------------------
@pytest.fixture(scope="module")
def desk():
    ds = ex.desk_dataset(0)
    cfg = ex.desk_config()
    t0 = time.perf_counter()
    run = ex.detection_run(ds, cfg)
    return ds, cfg, run, time.perf_counter() - t0


def test_c06_end_to_end_detection(desk):
    ds, cfg, run, seconds = desk
    gap = run.auc_roc - run.untrained_auc
    ok = run.auc_roc >= 0.85 and gap >= 0.2 and seconds < 300
    verdict(
        6, ok,
        f"AUC-ROC {run.auc_roc:.4f} (>= 0.85), untrained {run.untrained_auc:.4f}, gap {gap:.4f} (>= 0.2), "
        f"{seconds:.0f}s (< 300s)",
    )


def test_c07_scattering_phenomenon(desk):
    ds, cfg, run, _ = desk
    reports = ex.scatter_sweep(run.state, ds, ex.NOISE_SIGMAS)
    ratios = {r.noise_sigma: round(r.separation_ratio, 3) for r in reports}
    print(ex.format_rows(ex.scatter_rows(reports)))
    ok = len(reports) == 4 and reports[0].noise_sigma == 0.0 and reports[0].separation_ratio > 1.1
    verdict(7, ok, f"separation ratio by sigma {ratios} (sigma=0 > 1.1)")


def test_c08_training_convergence(desk):
    _, _, run, _ = desk
    first, hundredth = run.history[0].total, run.history[99].total
    verdict(8, hundredth < first, f"total loss step 1 {first:.4f}, step 100 {hundredth:.4f}")


def test_c09_stability(desk):
    ds, cfg, run, _ = desk
    rows = [{"seed": cfg.seed, "aff_f": run.report.aff_f, "auc_roc": run.auc_roc}]
    rows += ex.stability(ds, cfg, [s for s in ex.STABILITY_SEEDS if s != cfg.seed])
    print(ex.format_rows(rows))
    summary = ex.summarize(rows)
    ok = len(rows) == 5 and summary["auc_roc_std"] <= 0.05
    verdict(
        9, ok,
        f"5 seeds AUC-ROC {summary['auc_roc_mean']:.4f} +/- {summary['auc_roc_std']:.4f} (std <= 0.05), "
        f"Aff-F {summary['aff_f_mean']:.4f} +/- {summary['aff_f_std']:.4f}",
    )


def test_c10_topology_harness(desk):
    ds, cfg, run, _ = desk
    rows = [ex.topology_row("lookback", run, cfg.batch_size)]
    for kind in ("random", "knn"):
        other = ex.detection_run(ds, ex.with_topology(cfg, kind), baseline=False)
        rows.append(ex.topology_row(kind, other, cfg.batch_size))
    print(ex.format_rows(rows))
    cols = {"topology", "aff_f", "auc_roc", "train_seconds", "train_windows_per_s", "infer_ms_per_window"}
    ok = [r["topology"] for r in rows] == ["lookback", "random", "knn"] and all(
        set(r) == cols and all(np.isfinite(v) for k, v in r.items() if k != "topology") for r in rows
    )
    summary = ", ".join(f"{r['topology']} AUC {r['auc_roc']:.3f} {r['train_windows_per_s']:.0f} win/s" for r in rows)
    verdict(10, ok, summary)


def test_c11_delta_sweep(desk):
    _, _, run, _ = desk
    rows = delta_table(run.result.scores, run.truth)
    table = [dataclasses.asdict(r) for r in rows]
    print(ex.format_rows(table))
    aff = np.array([r.aff_f for r in rows])
    schema = list(table[0]) == ["delta", "aff_f", "auc_roc"] and [r.delta for r in rows] == [0.2, 0.4, 0.6, 0.8, 1.0]
    constant = len({r.auc_roc for r in rows}) == 1
    smooth = bool(np.all((aff >= 0) & (aff <= 1))) and float(np.max(np.abs(np.diff(aff)))) <= 0.3
    verdict(
        11, schema and constant and smooth,
        f"schema ok: {schema}, AUC constant: {constant}, Aff-F {np.round(aff, 3).tolist()} (adjacent steps <= 0.3)",
    )


# -- 12 ---------------------------------------------------------------------------
def test_c12_infonce_bookkeeping():
    rng = np.random.default_rng(12)
    g = build_lookback(10)
    B = g.num_edges
    identity_ok, min_loss = True, math.inf
    for _ in range(50):
        zo, zt = rng.standard_normal((2, 10, 4))
        loss = loss_infonce(zo, zt, g, predictor=rng.standard_normal((4, 4))).item()
        min_loss = min(min_loss, loss)
        identity_ok &= infonce_mi_estimate(loss, B) == math.log(B - 1) - loss
    uniform = loss_infonce(np.ones((10, 4)), np.ones((10, 4)), g).item()
    ok = identity_ok and min_loss >= 0 and abs(uniform - math.log(B)) <= 1e-9
    verdict(
        12, ok, f"identity exact: {identity_ok}, min loss {min_loss:.4f} (>= 0), uniform - log|B| {uniform - math.log(B):.1e}"
    )
