"""Social graph, its normalised propagation matrix, graph dropout, and k-hop census."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import EdgeList
from .numerics import RandomStream, SparseMatrix


@dataclass(frozen=True)
class SocialGraph:
    n_users: int
    adjacency: SparseMatrix
    degree: np.ndarray
    edges: np.ndarray  # (E, 2), i < j

    def neighbors(self, i: int) -> np.ndarray:
        return self.adjacency.row(i)[0]


@dataclass(frozen=True)
class NeighborCensus:
    k: int
    counts: np.ndarray  # per user, reachable within <= k hops, self excluded

    @property
    def avg_neighbors(self) -> float:
        return float(self.counts.mean()) if len(self.counts) else 0.0

    @property
    def density(self) -> float:
        n = len(self.counts)
        return self.avg_neighbors / (n - 1) if n > 1 else 0.0


def _from_edge_array(n_users: int, e: np.ndarray) -> SocialGraph:
    e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
    r = np.concatenate([e[:, 0], e[:, 1]])
    c = np.concatenate([e[:, 1], e[:, 0]])
    adj = SparseMatrix.from_coo(n_users, n_users, r, c, np.ones(len(r)))
    return SocialGraph(n_users, adj, adj.row_nnz().astype(np.int64), e)


def build_graph(edges: EdgeList, n_users: int | None = None) -> SocialGraph:
    n = edges.n_users if n_users is None else n_users
    if len(edges) and edges.edges.max() >= n:
        raise ValueError(f"edge endpoint {int(edges.edges.max())} out of range for {n} users")
    return _from_edge_array(n, edges.edges)


def propagation_matrix(g: SocialGraph) -> SparseMatrix:
    """Symmetric D^-1/2 (A + I) D^-1/2 with self-inclusive degrees d_i = |A_i| + 1.

    Each entry is computed as 1 / sqrt(d_i * d_j), so (i, j) and (j, i) hold the
    same float.
    """
    n = g.n_users
    d = (g.degree + 1).astype(np.float64)
    row_of = np.repeat(np.arange(n), g.adjacency.row_nnz())
    r = np.concatenate([row_of, np.arange(n)])
    c = np.concatenate([g.adjacency.indices, np.arange(n)])
    order = np.lexsort((c, r))
    r, c = r[order], c[order]
    vals = 1.0 / np.sqrt(d[r] * d[c])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return SparseMatrix(n, n, indptr, c.astype(np.int64), vals)


def graph_dropout(g: SocialGraph, p2: float, rng: RandomStream) -> SocialGraph:
    """Keep each undirected tie with probability 1 - p2; both directions go together."""
    if not 0.0 <= p2 < 1.0:
        raise ValueError("p2 must lie in [0, 1)")
    if p2 == 0.0 or len(g.edges) == 0:
        return g
    keep = rng.random(len(g.edges)) >= p2
    return _from_edge_array(g.n_users, g.edges[keep])


def korder_neighbors(g: SocialGraph, k: int) -> NeighborCensus:
    """Breadth-first count of users within k hops of each user."""
    if k < 1:
        raise ValueError("k must be >= 1")
    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    counts = np.zeros(g.n_users, dtype=np.int64)
    seen = np.zeros(g.n_users, dtype=bool)
    for src in range(g.n_users):
        seen[:] = False
        seen[src] = True
        frontier = np.array([src])
        total = 0
        for _ in range(k):
            if len(frontier) == 0:
                break
            nxt = np.concatenate([indices[indptr[v]:indptr[v + 1]] for v in frontier])
            nxt = np.unique(nxt)
            nxt = nxt[~seen[nxt]]
            seen[nxt] = True
            total += len(nxt)
            frontier = nxt
        counts[src] = total
    return NeighborCensus(k, counts)


def write_census_csv(g: SocialGraph, max_k: int, path):
    """Table of (order, density, avg_neighbors) for orders 1..max_k."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["order", "density", "avg_neighbors"])
        for k in range(1, max_k + 1):
            c = korder_neighbors(g, k)
            w.writerow([k, repr(c.density), repr(c.avg_neighbors)])
