"""Desk-scale experiment protocols shared by the CLI, scripts and acceptance suite."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    ScatterReport,
    SyntheticSpec,
    TimeSeriesDataset,
    bursty_labels,
    generate_synthetic,
    inject_noise,
    long_segment_labels,
    scattering_analysis,
)
from .detector import (
    ABLATIONS,
    ModelState,
    ScoreConfig,
    SeriesScores,
    TrainConfig,
    init_state,
    score_series,
    threshold,
    train,
)
from .graph import TOPOLOGIES
from .metrics import MetricReport, auc, evaluate, shift_sensitivity
from .objective import EmaConfig, LossBreakdown

NOISE_SIGMAS = (0.0, 0.5, 1.0, 2.0)
SHIFTS = (0, 1, 2, 5, 10)
STABILITY_SEEDS = (0, 1, 2, 3, 4)


def desk_config(**overrides) -> TrainConfig:
    """Single-core settings: T=64, d=32, 30 epochs, overlapping training windows.

    Per-epoch EMA with m=0.99 would move the target only 26% of the way over
    30 epochs, so the desk runs use m=0.9.
    """
    base = dict(
        window_T=64,
        batch_size=32,
        lr=1e-3,
        epochs=30,
        stride=8,
        hidden_dim=32,
        num_heads=4,
        gat_layers=2,
        ema=EmaConfig(m=0.9, cadence="per_epoch"),
    )
    base.update(overrides)
    return TrainConfig(**base)


def desk_dataset(seed: int = 0) -> TimeSeriesDataset:
    return generate_synthetic(SyntheticSpec(seed=seed))[0]


@dataclass
class DetectionRun:
    state: ModelState
    history: list[LossBreakdown]
    result: SeriesScores
    truth: np.ndarray
    report: MetricReport
    untrained_auc: float
    train_seconds: float

    @property
    def auc_roc(self) -> float:
        return self.report.auc_roc


def untrained_auc(ds: TimeSeriesDataset, cfg: TrainConfig, mode: str = "distance") -> float:
    state = init_state(cfg, ds.num_channels)
    state.online.training = False
    res = score_series(state, ds.test, mode)
    return auc(res.scores, ds.test_labels[: res.covered])


def detection_run(
    ds: TimeSeriesDataset, cfg: TrainConfig, score_cfg: ScoreConfig = ScoreConfig(), baseline: bool = True
) -> DetectionRun:
    base = untrained_auc(ds, cfg, score_cfg.score_mode) if baseline else float("nan")
    fit = train(ds, cfg)
    res = score_series(fit.state, ds.test, score_cfg.score_mode)
    truth = ds.test_labels[: res.covered]
    report = evaluate(res.scores, threshold(res.scores, score_cfg), truth)
    return DetectionRun(fit.state, fit.log, res, truth, report, base, fit.seconds)


def scatter_sweep(
    state: ModelState, ds: TimeSeriesDataset, sigmas: Sequence[float] = NOISE_SIGMAS, seed: int = 0
) -> list[ScatterReport]:
    """Scattering of online embeddings for the test stream under input noise of each sigma."""
    out = []
    for sigma in sigmas:
        noisy = inject_noise(ds.test, sigma, seed)
        res = score_series(state, noisy)
        out.append(scattering_analysis(res.embeddings, ds.test_labels[: res.covered], sigma, seed=seed))
    return out


def stability(ds: TimeSeriesDataset, cfg: TrainConfig, seeds: Sequence[int] = STABILITY_SEEDS) -> list[dict]:
    rows = []
    for s in seeds:
        run = detection_run(ds, dataclasses.replace(cfg, seed=s), baseline=False)
        rows.append({"seed": s, "aff_f": run.report.aff_f, "auc_roc": run.report.auc_roc})
    return rows


def summarize(rows: Sequence[dict], keys: Sequence[str] = ("aff_f", "auc_roc")) -> dict:
    out = {}
    for k in keys:
        v = np.array([r[k] for r in rows], dtype=np.float64)
        out[f"{k}_mean"] = float(v.mean())
        out[f"{k}_std"] = float(v.std())
    return out


def topology_row(kind: str, run: DetectionRun, batch_size: int) -> dict:
    """Quality and wall-clock throughput of one finished detection run."""
    n_train = len(run.history) * batch_size
    return {
        "topology": kind,
        "aff_f": run.report.aff_f,
        "auc_roc": run.report.auc_roc,
        "train_seconds": run.train_seconds,
        "train_windows_per_s": n_train / run.train_seconds if run.train_seconds else float("inf"),
        "infer_ms_per_window": 1000.0 * run.result.seconds / run.result.num_windows,
    }


def with_topology(cfg: TrainConfig, kind: str) -> TrainConfig:
    return dataclasses.replace(cfg, topology=dataclasses.replace(cfg.topology, kind=kind))


def topology_comparison(
    ds: TimeSeriesDataset, cfg: TrainConfig, kinds: Sequence[str] = TOPOLOGIES
) -> list[dict]:
    """Detection quality and wall-clock throughput per graph topology."""
    return [
        topology_row(kind, detection_run(ds, with_topology(cfg, kind), baseline=False), cfg.batch_size)
        for kind in kinds
    ]


def ablation(ds: TimeSeriesDataset, cfg: TrainConfig, arms: Sequence[str] = ABLATIONS) -> list[tuple[str, MetricReport]]:
    out = [("full", detection_run(ds, cfg, baseline=False).report)]
    for arm in arms:
        out.append((arm, detection_run(ds, cfg.ablate(arm), baseline=False).report))
    return out


def sensitivity_streams(length: int = 4000, seed: int = 0) -> dict[str, np.ndarray]:
    return {"bursty": bursty_labels(length, seed), "long": long_segment_labels(length, seed)}


def sensitivity_table(truth: np.ndarray, name: str, shifts: Sequence[int] = SHIFTS) -> list[dict]:
    return [{"stream": name, **row} for row in shift_sensitivity(truth, shifts)]


# -- tables -------------------------------------------------------------------
def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_rows(rows: Sequence[dict]) -> str:
    """Aligned plain-text table; columns follow the first row's keys."""
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[_cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def write_rows_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def scatter_rows(reports: Sequence[ScatterReport]) -> list[dict]:
    return [dataclasses.asdict(r) for r in reports]

