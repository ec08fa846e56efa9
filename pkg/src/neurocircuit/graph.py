"""k-nearest-neighbor brain graphs from FC weight matrices.

Edges are directed: node i keeps out-edges to the k neighbors with the
largest absolute weight (ties broken toward the lower region index).  Each
node's neighborhood is exactly min(k, n-1), so k >= n-1 yields the complete
digraph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class BrainGraph:
    n_nodes: int
    edges: np.ndarray  # (E, 2) int array of (source, neighbor)

    def neighbor_mask(self) -> np.ndarray:
        """Boolean (n, n): mask[i, j] iff j is a retained neighbor of i."""
        m = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        if len(self.edges):
            m[self.edges[:, 0], self.edges[:, 1]] = True
        return m

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0], 1)
        return deg


def knn_graph(weights: np.ndarray, k: int) -> BrainGraph:
    """Directed kNN graph on |weights|; self-edges are never created."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DataError(f"weight matrix must be square, got shape {w.shape}")
    n = w.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    k_eff = min(k, n - 1)
    score = np.abs(w).astype(np.float64)
    np.fill_diagonal(score, -np.inf)
    edges = []
    for i in range(n):
        # stable sort on (-score, index) implements the low-index tie-break
        order = np.lexsort((np.arange(n), -score[i]))
        for j in order[:k_eff]:
            edges.append((i, int(j)))
    return BrainGraph(n_nodes=n, edges=np.array(edges, dtype=int).reshape(-1, 2))


def drop_edges(graph: BrainGraph, p: float, rng) -> BrainGraph:
    """Random edge dropout for training-time augmentation (p in [0, 1))."""
    if not 0.0 <= p < 1.0:
        raise DataError(f"edge dropout rate must be in [0, 1), got {p}")
    if p == 0.0 or len(graph.edges) == 0:
        return graph
    keep = rng.uniform(len(graph.edges)) >= p
    return BrainGraph(n_nodes=graph.n_nodes, edges=graph.edges[keep].reshape(-1, 2))
