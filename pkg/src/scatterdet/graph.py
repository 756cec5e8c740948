"""Directed temporal graphs whose vertices are the time steps of a window."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

TOPOLOGIES = ("lookback", "random", "knn")


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "lookback"
    tau: int = 2
    edge_prob: float = 0.3
    knn_k: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.kind!r}; expected one of {TOPOLOGIES}")
        if self.tau < 1:
            raise ValueError("tau must be a positive integer")
        if not 0.0 < self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in (0, 1]")
        if self.knn_k < 1:
            raise ValueError("knn_k must be a positive integer")


@dataclass(frozen=True)
class TemporalGraph:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    topology: str = "lookback"

    def __post_init__(self):
        seen = set()
        for s, d in self.edges:
            if not (0 <= s < self.num_nodes and 0 <= d < self.num_nodes):
                raise ValueError(f"edge ({s}, {d}) out of range for {self.num_nodes} nodes")
            if s == d:
                raise ValueError(f"self-loop at node {s}")
            if (s, d) in seen:
                raise ValueError(f"duplicate edge ({s}, {d})")
            seen.add((s, d))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.edges:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        arr = np.asarray(self.edges, dtype=int)
        return arr[:, 0], arr[:, 1]

    def attention_mask(self) -> np.ndarray:
        """Boolean T x T mask; entry [i, j] is True when node i attends to j.

        Node i attends to its in-neighbours (edges j -> i) and to itself.
        """
        mask = np.eye(self.num_nodes, dtype=bool)
        src, dst = self.edge_arrays()
        mask[dst, src] = True
        return mask

    def to_text(self) -> str:
        return "".join(f"{s} {d}\n" for s, d in self.edges)

    @classmethod
    def from_text(cls, text: str, num_nodes: int, topology: str = "lookback") -> "TemporalGraph":
        edges = []
        for line in text.splitlines():
            if line.strip():
                s, d = line.split()
                edges.append((int(s), int(d)))
        return cls(num_nodes, tuple(edges), topology)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def build_lookback(T: int, cfg: TopologyConfig = TopologyConfig()) -> TemporalGraph:
    """Edges (t - k) -> t for k in 1..tau and t in tau..T-1 (0-based)."""
    if T <= cfg.tau:
        raise ValueError(f"window length T={T} must exceed tau={cfg.tau}")
    edges = tuple((t - k, t) for t in range(cfg.tau, T) for k in range(cfg.tau, 0, -1))
    return TemporalGraph(T, edges, "lookback")


def build_random(T: int, window: np.ndarray | None, cfg: TopologyConfig, rng=None) -> TemporalGraph:
    """Forward edges i -> j (i < j) kept with probability ``edge_prob``; t -> t+1 always kept."""
    if T < 2:
        raise ValueError("random topology needs at least two nodes")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    draws = rng.random((T, T))
    edges = []
    for i in range(T):
        for j in range(i + 1, T):
            if j == i + 1 or draws[i, j] < cfg.edge_prob:
                edges.append((i, j))
    return TemporalGraph(T, tuple(edges), "random")


def knn_neighbors(window: np.ndarray, k: int) -> np.ndarray:
    """Indices (T x k) of each node's k nearest other nodes; ties go to the smaller index."""
    x = np.asarray(window, dtype=np.float64)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def build_knn(T: int, window: np.ndarray, cfg: TopologyConfig) -> TemporalGraph:
    """Edge j -> i for each of node i's ``knn_k`` nearest neighbours j."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[0] != T:
        raise ValueError(f"window has {window.shape[0]} rows, expected {T}")
    if T <= cfg.knn_k:
        raise ValueError(f"window length T={T} must exceed knn_k={cfg.knn_k}")
    nbrs = knn_neighbors(window, cfg.knn_k)
    edges = tuple((int(j), i) for i in range(T) for j in sorted(nbrs[i]))
    return TemporalGraph(T, edges, "knn")


def build_graph(T: int, window: np.ndarray | None, cfg: TopologyConfig, rng=None) -> TemporalGraph:
    if cfg.kind == "lookback":
        return build_lookback(T, cfg)
    if cfg.kind == "random":
        return build_random(T, window, cfg, rng)
    return build_knn(T, window, cfg)
