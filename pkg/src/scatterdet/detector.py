"""Training loop, anomaly scoring, thresholding and checkpoints."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .data import TimeSeriesDataset, WindowBatch, windows
from .encoders import Encoder, EncoderConfig, Neighborhoods
from .graph import TemporalGraph, TopologyConfig, build_graph, build_lookback
from .metrics import auc, affiliation
from .objective import (
    EmaConfig,
    LossBreakdown,
    ScatterCenter,
    center_cosines,
    ema_update,
    init_center,
    loss_contrast,
    loss_infonce,
    loss_scatter,
    loss_time,
    total_loss,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CONTRAST_MODES = ("sigmoid_edge", "infonce")
SCORE_MODES = ("distance", "reciprocal_similarity")
THRESHOLD_MODES = ("absolute_delta", "percentile")
ABLATIONS = ("no_time", "no_scatter", "no_contrast", "no_ema", "no_gat", "no_conv")
DEFAULT_DELTAS = (0.2, 0.4, 0.6, 0.8, 1.0)
RECIPROCAL_EPS = 1e-6


class NumericalError(FloatingPointError):
    """A loss term or update became non-finite."""


# -- configuration ---------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    window_T: int = 110
    batch_size: int = 128
    lr: float = 1e-4
    epochs: int = 10
    stride: int | None = None  # training window stride; None means window_T
    seed: int = 0
    hidden_dim: int = 32
    num_heads: int = 4
    gat_layers: int = 2
    kernel_sizes: tuple[int, ...] = (2, 4, 8)
    ema: EmaConfig = field(default_factory=EmaConfig)
    contrast_mode: str = "sigmoid_edge"
    temperature: float = 0.1
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    center_strategy: str = "random_in_ball"
    center_radius: float = 0.5
    num_centers: int = 3
    scatter_on: str = "online"
    use_time: bool = True
    use_scatter: bool = True
    use_contrast: bool = True
    use_ema: bool = True
    use_gat: bool = True
    use_conv: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        for name in ("window_T", "batch_size", "hidden_dim", "num_heads", "gat_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be positive")
        if self.window_T <= self.topology.tau:
            raise ValueError(f"window_T={self.window_T} must exceed tau={self.topology.tau}")
        if self.contrast_mode not in CONTRAST_MODES:
            raise ValueError(f"unknown contrast_mode {self.contrast_mode!r}; expected one of {CONTRAST_MODES}")
        if self.scatter_on not in ("online", "target"):
            raise ValueError("scatter_on must be 'online' or 'target'")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def encoder_config(self, in_dim: int) -> EncoderConfig:
        return EncoderConfig(
            in_dim=in_dim,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            kernel_sizes=self.kernel_sizes,
            gat_layers=self.gat_layers,
            use_conv=self.use_conv,
            use_gat=self.use_gat,
        )

    def ablate(self, arm: str) -> "TrainConfig":
        if arm not in ABLATIONS:
            raise ValueError(f"unknown ablation {arm!r}; expected one of {ABLATIONS}")
        return dataclasses.replace(self, **{"use_" + arm[3:]: False})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["ema"] = EmaConfig(**d.get("ema", {}))
        d["topology"] = TopologyConfig(**d.get("topology", {}))
        if "kernel_sizes" in d:
            d["kernel_sizes"] = tuple(d["kernel_sizes"])
        return cls(**d)


@dataclass(frozen=True)
class ScoreConfig:
    delta: float = 1.0
    score_mode: str = "distance"
    threshold_mode: str = "absolute_delta"
    percentile: float = 95.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"unknown score_mode {self.score_mode!r}; expected one of {SCORE_MODES}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}; expected one of {THRESHOLD_MODES}")
        if not 0.0 < self.percentile < 100.0:
            raise ValueError("percentile must lie in (0, 100)")


# -- optimizer -------------------------------------------------------------
class Adam:
    """Plain Adam, no weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -- model state ------------------------------------------------------------
@dataclass
class ModelState:
    online: Encoder
    target: Encoder
    center: ScatterCenter
    optimizer: Adam
    predictor: Tensor | None = None
    step: int = 0
    epoch: int = 0
    ema_updates: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)
    norm_mean: np.ndarray | None = None  # training normaliser, for raw inputs
    norm_std: np.ndarray | None = None

    def trainable(self) -> dict[str, Tensor]:
        out = dict(self.online.params)
        if self.predictor is not None:
            out["predictor"] = self.predictor
        return out


def init_state(cfg: TrainConfig, in_dim: int) -> ModelState:
    rng = np.random.default_rng(cfg.seed)
    online = Encoder(cfg.encoder_config(in_dim), rng)
    target = online.clone()
    center = init_center(
        cfg.center_strategy, cfg.hidden_dim, seed=cfg.seed, radius=cfg.center_radius, num_centers=cfg.num_centers
    )
    predictor = None
    if cfg.contrast_mode == "infonce":
        predictor = tn.parameter(np.eye(cfg.hidden_dim), name="predictor")
    state = ModelState(online, target, center, Adam({}, cfg.lr), predictor, config=cfg)
    state.optimizer = Adam(state.trainable(), cfg.lr)
    return state


# -- graphs -----------------------------------------------------------------
def window_graphs(wb: WindowBatch, topo: TopologyConfig, seed: int = 0) -> TemporalGraph | list[TemporalGraph]:
    """One shared look-back graph, or one dynamic graph per window."""
    T = wb.values.shape[1]
    if topo.kind == "lookback":
        return build_lookback(T, topo)
    rng = np.random.default_rng([topo.seed, seed])
    return [build_graph(T, w, topo, rng) for w in wb.values]


def _neighborhoods(graphs, batch: int) -> Neighborhoods:
    if isinstance(graphs, TemporalGraph):
        return Neighborhoods.from_mask(graphs.attention_mask(), batch)
    return Neighborhoods.from_mask(np.stack([g.attention_mask() for g in graphs]), batch)


def _select(graphs, idx):
    return graphs if isinstance(graphs, TemporalGraph) else [graphs[i] for i in idx]


# -- losses -----------------------------------------------------------------
def _checked(name: str, fn: Callable[[], Tensor], step: int) -> Tensor:
    try:
        value = fn()
    except FloatingPointError as exc:
        raise NumericalError(f"non-finite {name} loss at step {step}: {exc}") from exc
    if not np.all(np.isfinite(value.data)):
        raise NumericalError(f"non-finite {name} loss at step {step}")
    return value


def compute_losses(state: ModelState, x: np.ndarray, graphs) -> dict[str, Tensor]:
    """The three terms and their weighted total for one batch (online graph only)."""
    cfg = state.config
    nb = _neighborhoods(graphs, x.shape[0])
    step = state.step + 1
    z_on = _checked("encoder", lambda: state.online.encode(x, nb), step)
    with tn.no_grad():
        z_tg = _checked("target encoder", lambda: state.target.encode(x, nb), step)
    zero = Tensor(0.0)
    l_time = _checked("time", lambda: loss_time(z_on), step) if cfg.use_time else zero
    scatter_z = z_on if cfg.scatter_on == "online" else z_tg
    l_scatter = _checked("scatter", lambda: loss_scatter(scatter_z, state.center), step) if cfg.use_scatter else zero
    if not cfg.use_contrast:
        l_con = zero
    elif cfg.contrast_mode == "infonce":
        l_con = _checked(
            "contrast", lambda: loss_infonce(z_on, z_tg, graphs, cfg.temperature, state.predictor), step
        )
    else:
        l_con = _checked("contrast", lambda: loss_contrast(z_on, z_tg, graphs), step)
    total = _checked("total", lambda: total_loss(l_time, l_scatter, l_con), step)
    return {"time": l_time, "scatter": l_scatter, "contrast": l_con, "total": total}


def _ema(state: ModelState) -> None:
    if state.config.use_ema:
        ema_update(state.target.params, state.online.params, state.config.ema.m)
    else:
        for k, p in state.target.params.items():
            p.data = state.online.params[k].data.copy()
    state.ema_updates += 1


@dataclass
class TrainResult:
    state: ModelState
    log: list[LossBreakdown]
    seconds: float = 0.0


def train(
    dataset: TimeSeriesDataset | np.ndarray,
    cfg: TrainConfig,
    on_ema: Callable[[ModelState], None] | None = None,
    state: ModelState | None = None,
) -> TrainResult:
    """Fit the online encoder; the target follows by EMA (or hard copy when use_ema is off).

    ``on_ema`` is called just before every target update with the current state.
    """
    series = dataset.train if isinstance(dataset, TimeSeriesDataset) else np.asarray(dataset, dtype=np.float64)
    wb = windows(series, cfg.window_T, cfg.stride)
    state = state or init_state(cfg, series.shape[1])
    if isinstance(dataset, TimeSeriesDataset):
        state.norm_mean, state.norm_std = dataset.mean.copy(), dataset.std.copy()
    graphs = window_graphs(wb, cfg.topology, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    history: list[LossBreakdown] = []
    t0 = time.perf_counter()
    params = state.trainable()
    for epoch in range(cfg.epochs):
        state.online.training = state.target.training = True
        for batch_idx in _batch_indices(len(wb), cfg.batch_size, rng):
            terms = compute_losses(state, wb.values[batch_idx], _select(graphs, batch_idx))
            for p in params.values():
                p.grad = None
            terms["total"].backward()
            for name, p in params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericalError(f"non-finite gradient for {name} at step {state.step + 1}")
            state.optimizer.step()
            state.step += 1
            history.append(LossBreakdown(*(float(terms[k].item()) for k in ("time", "scatter", "contrast", "total"))))
            if cfg.ema.cadence == "per_step":
                if on_ema:
                    on_ema(state)
                _ema(state)
        if cfg.ema.cadence == "per_epoch":
            if on_ema:
                on_ema(state)
            _ema(state)
        state.epoch += 1
        log.info("epoch %d: total loss %.5f", epoch + 1, history[-1].total if history else float("nan"))
    state.online.training = state.target.training = False
    return TrainResult(state, history, time.perf_counter() - t0)


def _batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield np.sort(order[i : i + batch_size])


# -- scoring ------------------------------------------------------------------
@dataclass
class ScoreParts:
    scatter_dev: np.ndarray
    time_incons: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.scatter_dev + self.time_incons


def score_embeddings(z: np.ndarray, center: ScatterCenter, mode: str = "distance") -> ScoreParts:
    """Per-timestep scattering deviation and time inconsistency from embeddings (... x T x d)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2] < 2:
        raise ValueError("scoring needs at least two time steps")
    with tn.no_grad():
        cos = center_cosines(z, center).data  # ... x T x K
    if center.degenerate:
        cos = np.zeros_like(cos)
    if mode == "distance":
        dev = np.min(1.0 - cos, axis=-1)
    elif mode == "reciprocal_similarity":
        dev = np.clip(1.0 / np.maximum(RECIPROCAL_EPS, cos.min(axis=-1)), 0.0, 1.0 / RECIPROCAL_EPS)
    else:
        raise ValueError(f"unknown score_mode {mode!r}")
    step = np.sum(np.diff(z, axis=-2) ** 2, axis=-1) / z.shape[-1]
    incons = np.concatenate([step[..., :1], step], axis=-1)
    return ScoreParts(dev, incons)


def embed(state: ModelState, values: np.ndarray, graphs=None) -> np.ndarray:
    """Online-encoder embeddings (inference mode) for a B x T x N batch."""
    values = np.asarray(values, dtype=np.float64)
    if graphs is None:
        graphs = window_graphs(WindowBatch(values, np.arange(len(values))), state.config.topology)
    state.online.training = False
    with tn.no_grad():
        return state.online.encode(values, _neighborhoods(graphs, len(values))).data


def anomaly_score(state: ModelState, window: np.ndarray, mode: str = "distance", graphs=None) -> np.ndarray:
    """Score one T x N window (length T) or a B x T x N batch (B x T)."""
    window = np.asarray(window, dtype=np.float64)
    single = window.ndim == 2
    batch = window[None] if single else window
    scores = score_embeddings(embed(state, batch, graphs), state.center, mode).total
    return scores[0] if single else scores


@dataclass
class SeriesScores:
    scores: np.ndarray  # covered prefix
    embeddings: np.ndarray  # covered prefix x d
    covered: int
    seconds: float
    num_windows: int

    @property
    def windows_per_second(self) -> float:
        return self.num_windows / self.seconds if self.seconds > 0 else float("inf")


def score_series(state: ModelState, series: np.ndarray, mode: str = "distance", batch_size: int = 64) -> SeriesScores:
    """Stitch scores over non-overlapping windows; the uncovered tail is dropped."""
    T = state.config.window_T
    wb = windows(series, T)
    graphs = window_graphs(wb, state.config.topology, seed=state.config.seed + 1)
    t0 = time.perf_counter()
    zs = []
    for i in range(0, len(wb), batch_size):
        idx = np.arange(i, min(i + batch_size, len(wb)))
        zs.append(embed(state, wb.values[idx], _select(graphs, idx)))
    z = np.concatenate(zs)
    scores = score_embeddings(z, state.center, mode).total
    seconds = time.perf_counter() - t0
    return SeriesScores(scores.reshape(-1), z.reshape(-1, z.shape[-1]), wb.covered, seconds, len(wb))


def threshold(scores: np.ndarray, cfg: ScoreConfig = ScoreConfig()) -> np.ndarray:
    """Strict ``score > delta``; percentile mode takes delta as the nearest-rank percentile."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("scores must be finite")
    delta = cfg.delta
    if cfg.threshold_mode == "percentile":
        delta = nearest_rank(scores, cfg.percentile)
    return (scores > delta).astype(np.int64)


def nearest_rank(values: np.ndarray, p: float) -> float:
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


@dataclass
class DeltaRow:
    delta: float
    aff_f: float
    auc_roc: float


def delta_table(scores: np.ndarray, truth: np.ndarray, deltas: Sequence[float] = DEFAULT_DELTAS) -> list[DeltaRow]:
    roc = auc(scores, truth, "roc")
    rows = []
    for d in deltas:
        pred = threshold(scores, ScoreConfig(delta=d))
        rows.append(DeltaRow(float(d), affiliation(pred, truth)[2], roc))
    return rows


def delta_sweep(
    state: ModelState, dataset: TimeSeriesDataset, deltas: Sequence[float] = DEFAULT_DELTAS, mode: str = "distance"
) -> list[DeltaRow]:
    res = score_series(state, dataset.test, mode)
    return delta_table(res.scores, dataset.test_labels[: res.covered], deltas)


# -- IO -----------------------------------------------------------------------
def save_checkpoint(state: ModelState, path) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "in_dim": state.online.cfg.in_dim,
        "step": state.step,
        "epoch": state.epoch,
        "ema_updates": state.ema_updates,
        "adam_t": state.optimizer.t,
        "center_strategy": state.center.strategy,
    }
    arrays = {"meta": np.array(json.dumps(meta)), "center": state.center.centers}
    for prefix, enc in (("online", state.online), ("target", state.target)):
        arrays.update({f"{prefix}/{k}": v for k, v in enc.state_dict().items()})
    if state.predictor is not None:
        arrays["predictor"] = state.predictor.data
    if state.norm_mean is not None:
        arrays["norm_mean"], arrays["norm_std"] = state.norm_mean, state.norm_std
    arrays.update({f"adam_m/{k}": v for k, v in state.optimizer.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.optimizer.v.items()})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(Path(path), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(str(arrays["meta"]))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')!r}")
    cfg = TrainConfig.from_dict(meta["config"])
    state = init_state(cfg, meta["in_dim"])
    for prefix, enc in (("online", state.online), ("target", state.target)):
        enc.load_state_dict({k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + "/")})
    state.center = ScatterCenter(arrays["center"], meta["center_strategy"], cfg.seed)
    if state.predictor is not None:
        state.predictor.data = arrays["predictor"].copy()
    for k in state.optimizer.m:
        state.optimizer.m[k] = arrays[f"adam_m/{k}"].copy()
        state.optimizer.v[k] = arrays[f"adam_v/{k}"].copy()
    state.optimizer.t = meta["adam_t"]
    if "norm_mean" in arrays:
        state.norm_mean, state.norm_std = arrays["norm_mean"], arrays["norm_std"]
    state.step, state.epoch, state.ema_updates = meta["step"], meta["epoch"], meta["ema_updates"]
    state.online.training = state.target.training = False
    return state


def write_scores_csv(path, scores: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("index,score,label_pred\n")
        for i, (s, y) in enumerate(zip(scores, labels)):
            fh.write(f"{i},{float(s)!r},{int(y)}\n")


def write_loss_log(path, history: Sequence[LossBreakdown]) -> None:
    with open(path, "w") as fh:
        fh.write("step,time,scatter,contrast,total\n")
        for i, r in enumerate(history, start=1):
            fh.write(f"{i},{r.time!r},{r.scatter!r},{r.contrast!r},{r.total!r}\n")
