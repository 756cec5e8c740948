"""Training losses, hypersphere projection, scattering centers and the EMA update."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .graph import TemporalGraph
from .tensor import Tensor

NORM_EPS = 1e-12
CENTER_STRATEGIES = ("random_in_ball", "zero", "fixed_radius", "multi_center")
EMA_CADENCES = ("per_epoch", "per_step")


def _guarded_norm(x: Tensor, axis: int = -1) -> Tensor:
    n = tn.l2norm(x, axis=axis, keepdims=True)
    return n + np.where(n.data < NORM_EPS, NORM_EPS, 0.0)


def project_to_sphere(z) -> Tensor:
    """Divide each row (last axis) by its L2 norm."""
    z = tn.as_tensor(z)
    return z / _guarded_norm(z)


def cosine(a, b) -> Tensor:
    """Row-wise cosine similarity over the last axis."""
    a, b = tn.as_tensor(a), tn.as_tensor(b)
    return tn.sum(a * b, axis=-1) / (_guarded_norm(a)[..., 0] * _guarded_norm(b)[..., 0])


@dataclass
class ScatterCenter:
    centers: np.ndarray  # K x d, frozen after construction
    strategy: str = "random_in_ball"
    seed: int = 0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.centers.setflags(write=False)

    @property
    def num_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def degenerate(self) -> bool:
        return bool(np.all(np.linalg.norm(self.centers, axis=1) == 0))

    def unit(self) -> np.ndarray:
        norms = np.linalg.norm(self.centers, axis=1, keepdims=True)
        return self.centers / np.where(norms > 0, norms, 1.0)


def _random_in_ball(rng: np.random.Generator, d: int) -> np.ndarray:
    c = rng.standard_normal(d)
    while not np.any(c):
        c = rng.standard_normal(d)
    eps = rng.uniform(0.0, 1.0)
    while eps == 0.0:
        eps = rng.uniform(0.0, 1.0)
    return c / np.linalg.norm(c) * eps


def init_center(strategy: str, d: int, seed: int = 0, radius: float = 0.5, num_centers: int = 3) -> ScatterCenter:
    """Draw the fixed scattering center(s).

    random_in_ball: direction from a standard normal, norm uniform in (0, 1).
    zero: the origin.  fixed_radius: random direction scaled to ``radius``.
    multi_center: ``num_centers`` independent random_in_ball draws.
    """
    if d < 1:
        raise ValueError("center dimension must be >= 1")
    rng = np.random.default_rng(seed)
    if strategy == "random_in_ball":
        c = _random_in_ball(rng, d)[None]
    elif strategy == "zero":
        c = np.zeros((1, d))
    elif strategy == "fixed_radius":
        if not 0.0 < radius <= 1.0:
            raise ValueError(f"fixed_radius needs radius in (0, 1], got {radius}")
        v = rng.standard_normal(d)
        c = (v / np.linalg.norm(v) * radius)[None]
    elif strategy == "multi_center":
        if num_centers < 1:
            raise ValueError("multi_center needs at least one center")
        c = np.stack([_random_in_ball(rng, d) for _ in range(num_centers)])
    else:
        raise ValueError(f"unknown center strategy {strategy!r}; expected one of {CENTER_STRATEGIES}")
    return ScatterCenter(c, strategy, seed)


def _batched(z) -> Tensor:
    z = tn.as_tensor(z)
    return z.reshape((1,) + z.shape) if z.ndim == 2 else z


def loss_time(z_online) -> Tensor:
    """Mean squared step between consecutive node representations (batch-averaged)."""
    z = _batched(z_online)
    if z.shape[1] < 2:
        raise ValueError("time-consistency loss needs at least two time steps")
    step = z[:, 1:, :] - z[:, :-1, :]
    return tn.mean(tn.sum(tn.square(step), axis=-1))


def center_cosines(z, center: ScatterCenter) -> Tensor:
    """Cosine of every sphere-projected row with every center: ... x K."""
    zt = project_to_sphere(z)
    return zt @ center.unit().T


def loss_scatter(z_target, center: ScatterCenter) -> Tensor:
    """Negative mean cosine between projected rows and their most similar center.

    The zero center has no direction; the term is then identically 0.
    """
    z = _batched(z_target)
    if center.degenerate:
        return tn.Tensor(0.0)
    cos = center_cosines(z, center)
    best = cos[..., 0] if center.num_centers == 1 else tn.reduce("max", cos, axis=-1)
    return -tn.mean(best)


def _edge_lists(graph, batch: int) -> list[TemporalGraph]:
    if isinstance(graph, TemporalGraph):
        return [graph]
    graphs = list(graph)
    if len(graphs) != batch:
        raise ValueError(f"got {len(graphs)} graphs for a batch of {batch} windows")
    return graphs


def loss_contrast(z_online, z_target, graph) -> Tensor:
    """-mean over edges (s, d) of log sigmoid(cos(online[s], target[d])).

    ``graph`` is one TemporalGraph shared by the batch or one per window.
    The target side is detached.
    """
    zo, zt = _batched(z_online), _batched(z_target).detach()
    graphs = _edge_lists(graph, zo.shape[0])
    terms = []
    for i, g in enumerate(graphs):
        if g.num_edges == 0:
            raise ValueError("contrastive loss needs at least one edge")
        src, dst = g.edge_arrays()
        if len(graphs) == 1:
            cos = cosine(zo[:, src, :], zt[:, dst, :])
        else:
            cos = cosine(zo[i, src, :], zt[i, dst, :])
        terms.append(-tn.mean(tn.log_sigmoid(cos)))
    if len(terms) == 1:
        return terms[0]
    return tn.mean(tn.stack(terms))


def loss_infonce(z_online, z_target, graph, temperature: float = 0.1, predictor: Tensor | None = None) -> Tensor:
    """In-batch InfoNCE over the edge set.

    Row s of the score matrix holds cos(p(online[s]), target[d'])/temperature
    for every edge destination d'; the matching destination is the positive.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    zo, zt = _batched(z_online), _batched(z_target).detach()
    graphs = _edge_lists(graph, zo.shape[0])
    terms = []
    for i, g in enumerate(graphs):
        if g.num_edges < 2:
            raise ValueError("InfoNCE needs at least two edges in the batch")
        src, dst = g.edge_arrays()
        q = zo[:, src, :] if len(graphs) == 1 else zo[i : i + 1, src, :]
        k = zt[:, dst, :] if len(graphs) == 1 else zt[i : i + 1, dst, :]
        if predictor is not None:
            q = q @ predictor
        qn = project_to_sphere(q)
        kn = project_to_sphere(k)
        scores = (qn @ kn.transpose(0, 2, 1)) * (1.0 / temperature)
        logp = tn.log_softmax(scores, axis=-1)
        diag = np.arange(g.num_edges)
        terms.append(-tn.mean(logp[:, diag, diag]))
    if len(terms) == 1:
        return terms[0]
    return tn.mean(tn.stack(terms))


def infonce_mi_estimate(loss: float, batch_edges: int) -> float:
    """Lower-bound estimate log(|B| - 1) - loss."""
    return math.log(batch_edges - 1) - float(loss)


@dataclass
class LossBreakdown:
    time: float
    scatter: float
    contrast: float
    total: float

    @classmethod
    def of(cls, time: float, scatter: float, contrast: float) -> "LossBreakdown":
        return cls(time, scatter, contrast, time + scatter + contrast)


def total_loss(time, scatter, contrast, weights: Sequence[float] = (1.0, 1.0, 1.0)) -> Tensor:
    """Weighted sum of the three terms; unit weights give the plain sum."""
    wt, ws, wc = weights
    return tn.as_tensor(time) * wt + tn.as_tensor(scatter) * ws + tn.as_tensor(contrast) * wc


@dataclass(frozen=True)
class EmaConfig:
    m: float = 0.99
    cadence: str = "per_epoch"

    def __post_init__(self):
        if not 0.0 < self.m < 1.0:
            raise ValueError(f"EMA momentum must lie in (0, 1), got {self.m}")
        if self.cadence not in EMA_CADENCES:
            raise ValueError(f"unknown EMA cadence {self.cadence!r}; expected one of {EMA_CADENCES}")


def ema_update(target: dict[str, Tensor], online: dict[str, Tensor], m: float) -> None:
    """target <- m * target + (1 - m) * online, in place, name by name."""
    if target.keys() != online.keys():
        raise ValueError("target and online parameter sets differ")
    for name, p in target.items():
        q = online[name]
        if p.shape != q.shape:
            raise tn.DimensionError(f"{name}: target shape {p.shape} != online shape {q.shape}")
        p.data = m * p.data + (1.0 - m) * q.data
