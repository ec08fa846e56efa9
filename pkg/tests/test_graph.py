"""kNN graph construction: exhaustive small oracle, degrees, tie-breaks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocircuit.errors import DataError
from neurocircuit.graph import BrainGraph, drop_edges, knn_graph
from neurocircuit.rng import RngStream

seed = 909


def test_k1_exhaustive_oracle():
    w = np.array([
        [0.0, 0.9, -0.2, 0.1],
        [0.9, 0.0, 0.5, -0.95],
        [-0.2, 0.5, 0.0, 0.3],
        [0.1, -0.95, 0.3, 0.0]])
    g = knn_graph(w, 1)
    # per row: largest |w|, excluding self
    expected = {(0, 1), (1, 3), (2, 1), (3, 1)}
    assert set(map(tuple, g.edges)) == expected


def test_k_ge_n_minus_1_complete_digraph():
    rs = np.random.default_rng(seed)
    w = rs.normal(size=(5, 5))
    g = knn_graph(w, 10)
    assert len(g.edges) == 5 * 4
    assert np.all(g.out_degrees() == 4)
    assert not any(s == d for s, d in g.edges)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(3, 10))
def test_out_degree_exactly_min_k(s, k, n):
    w = np.random.default_rng(s).normal(size=(n, n))
    g = knn_graph(w, k)
    assert np.all(g.out_degrees() == min(k, n - 1))


def test_tie_break_prefers_lower_index():
    w = np.zeros((4, 4))
    w[0] = [0.0, 0.5, 0.5, 0.5]
    g = knn_graph(w, 1)
    first = [d for s, d in g.edges if s == 0]
    assert first == [1]


def test_negative_weights_use_magnitude():
    w = np.array([[0.0, -0.9, 0.1], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    g = knn_graph(w, 1)
    assert (0, 1) in set(map(tuple, g.edges))


def test_invalid_inputs():
    with pytest.raises(DataError, match="square"):
        knn_graph(np.zeros((2, 3)), 1)
    with pytest.raises(DataError, match="k must be"):
        knn_graph(np.zeros((3, 3)), 0)


def test_neighbor_mask_shape():
    g = knn_graph(np.eye(4) + 0.1, 2)
    m = g.neighbor_mask()
    assert m.shape == (4, 4)
    assert m.sum() == len(g.edges)


def test_drop_edges_zero_and_eval():
    g = knn_graph(np.random.default_rng(seed).normal(size=(6, 6)), 3)
    assert drop_edges(g, 0.0, RngStream(seed, "e")) is g
    with pytest.raises(DataError):
        drop_edges(g, 1.0, RngStream(seed, "e"))


def test_drop_edges_binomial_rate():
    g = BrainGraph(n_nodes=2, edges=np.tile([[0, 1]], (10_000, 1)))
    kept = drop_edges(g, 0.3, RngStream(seed, "edrop"))
    frac = len(kept.edges) / 10_000
    assert abs(frac - 0.7) < 0.02


def test_drop_edges_deterministic_replay():
    g = knn_graph(np.random.default_rng(seed).normal(size=(8, 8)), 4)
    a = drop_edges(g, 0.4, RngStream(seed, "same"))
    b = drop_edges(g, 0.4, RngStream(seed, "same"))
    assert np.array_equal(a.edges, b.edges)
