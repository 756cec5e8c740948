import numpy as np
import pytest
from hypothesis import given, strategies as st

from scatterdet.graph import (
    TemporalGraph,
    TopologyConfig,
    build_graph,
    build_knn,
    build_lookback,
    build_random,
    knn_neighbors,
)


def test_lookback_small_windows():
    g = build_lookback(5, TopologyConfig(tau=2))
    assert set(g.edges) == {(0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)}
    assert set(build_lookback(3).edges) == {(0, 2), (1, 2)}


@pytest.mark.parametrize("tau", [1, 2, 3, 4])
def test_lookback_matches_enumeration(tau):
    for T in range(max(3, tau + 1), 51):
        brute = {(s, d) for d in range(T) for s in range(T) if 1 <= d - s <= tau and d >= tau}
        g = build_lookback(T, TopologyConfig(tau=tau))
        assert set(g.edges) == brute
        assert g.num_edges == tau * (T - tau)
        assert min(d for _, d in g.edges) >= tau


def test_lookback_needs_window_longer_than_tau():
    with pytest.raises(ValueError, match="tau"):
        build_lookback(2, TopologyConfig(tau=2))


def test_graph_invariants_enforced():
    with pytest.raises(ValueError, match="self-loop"):
        TemporalGraph(3, ((1, 1),))
    with pytest.raises(ValueError, match="duplicate"):
        TemporalGraph(3, ((0, 1), (0, 1)))
    with pytest.raises(ValueError, match="out of range"):
        TemporalGraph(3, ((0, 3),))


def test_config_validation():
    for bad in (dict(kind="ring"), dict(tau=0), dict(edge_prob=0.0), dict(knn_k=0)):
        with pytest.raises(ValueError):
            TopologyConfig(**bad)


def test_attention_mask_orientation():
    g = build_lookback(4, TopologyConfig(tau=1))
    m = g.attention_mask()
    assert m[2, 1] and not m[1, 2]
    assert np.all(np.diag(m))


def test_text_round_trip(tmp_path):
    g = build_lookback(7)
    path = tmp_path / "g.txt"
    g.save(path)
    assert TemporalGraph.from_text(path.read_text(), 7) == g


def test_random_limits():
    T = 12
    full = build_random(T, None, TopologyConfig(kind="random", edge_prob=1.0))
    assert full.num_edges == T * (T - 1) // 2
    sparse = build_random(T, None, TopologyConfig(kind="random", edge_prob=1e-12))
    assert set(sparse.edges) == {(t, t + 1) for t in range(T - 1)}


def test_random_inclusion_rate():
    """Monte-Carlo: non-adjacent pairs appear with probability edge_prob."""
    T, draws = 6, 10_000
    cfg = TopologyConfig(kind="random", edge_prob=0.3)
    rng = np.random.default_rng(0)
    non_adjacent = [(i, j) for i in range(T) for j in range(i + 2, T)]
    hits = 0
    for _ in range(draws):
        edges = set(build_random(T, None, cfg, rng).edges)
        hits += sum(p in edges for p in non_adjacent)
    assert abs(hits / (draws * len(non_adjacent)) - 0.3) < 0.02


def test_knn_on_a_line():
    window = np.arange(6.0)[:, None]
    g = build_knn(6, window, TopologyConfig(kind="knn", knn_k=2))
    into_0 = sorted(s for s, d in g.edges if d == 0)
    assert into_0 == [1, 2]
    # node 2 is equidistant from 1 and 3: both kept, tie at distance 2 goes to node 0
    into_2 = sorted(s for s, d in g.edges if d == 2)
    assert into_2 == [1, 3]
    g3 = build_knn(6, window, TopologyConfig(kind="knn", knn_k=3))
    assert sorted(s for s, d in g3.edges if d == 2) == [0, 1, 3]


@given(st.integers(5, 20), st.integers(1, 4), st.integers(0, 1000))
def test_knn_neighbours_are_nearest(T, k, seed):
    x = np.random.default_rng(seed).standard_normal((T, 3))
    nbrs = knn_neighbors(x, k)
    for i in range(T):
        d = np.linalg.norm(x - x[i], axis=1)
        d[i] = np.inf
        assert np.max(d[nbrs[i]]) <= np.sort(d)[k - 1] + 1e-12
        assert i not in nbrs[i]


def test_knn_requires_k_below_T():
    with pytest.raises(ValueError):
        build_knn(3, np.zeros((3, 2)), TopologyConfig(kind="knn", knn_k=3))


def test_build_graph_dispatch():
    w = np.random.default_rng(0).standard_normal((8, 2))
    for kind in ("lookback", "random", "knn"):
        assert build_graph(8, w, TopologyConfig(kind=kind)).topology == kind
