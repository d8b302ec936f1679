"""
clustering.py
Codeword clustering for the compressed protocol.

distance matrix -> threshold graph (edge iff d_ij <= gamma) -> repeatedly take
the maximum clique out of the graph until no vertex is left. Each clique
becomes one cluster; all observations of a cluster share one codeword.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import pandas as pd

from codebook import Codebook, CodewordAssignment, materialize_codebook, pre_params_from_codebook
from mathkit import UsageError

EXACT_LIMIT = 64
DEFAULT_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def distance_matrix(C):
    """d_ij = ||c_i - c_j||_2 over the columns of C (complex)."""
    C = C.matrix if isinstance(C, Codebook) else np.asarray(C, dtype=complex)
    diff = C[:, :, None] - C[:, None, :]
    D = np.sqrt(np.sum(np.abs(diff) ** 2, axis=0))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass(frozen=True)
class ThresholdGraph:
    adjacency: np.ndarray = field(repr=False)
    gamma: float = 0.0

    @property
    def size(self):
        return self.adjacency.shape[0]

    def neighbors(self):
        return [set(np.nonzero(self.adjacency[v])[0].tolist()) for v in range(self.size)]

    def edge_count(self):
        return int(self.adjacency.sum()) // 2

    def is_clique(self, vertices):
        vs = sorted(vertices)
        return all(self.adjacency[i, j] for a, i in enumerate(vs) for j in vs[a + 1:])


def threshold_graph(D, gamma):
    """Undirected graph with an edge between i != j whenever d_ij <= gamma (inclusive)."""
    if gamma < 0:
        raise UsageError(f"gamma must be >= 0, got {gamma}")
    D = np.asarray(D, dtype=np.float64)
    adjacency = D <= gamma
    np.fill_diagonal(adjacency, False)
    return ThresholdGraph(adjacency, float(gamma))


def _better(candidate, best):
    """Larger first, then the lexicographically smaller sorted vertex list."""
    if best is None or len(candidate) > len(best):
        return True
    return len(candidate) == len(best) and candidate < best


def max_clique(graph, vertices=None):
    """
    A maximum clique of the subgraph induced by `vertices` (default: all).

    Bron-Kerbosch with pivoting plus a size bound. Branches that cannot reach
    the current best size are cut; branches that can only tie are kept so the
    lexicographically smallest maximum clique wins.

    Returns:
        sorted tuple of vertex indices; () for an empty vertex set
    """
    if graph.size > EXACT_LIMIT:
        raise UsageError(f"exact clique search supports at most {EXACT_LIMIT} vertices, got {graph.size}")
    nbrs = graph.neighbors()
    P = set(range(graph.size)) if vertices is None else set(vertices)
    if not P:
        return ()
    nbrs = [n & P for n in nbrs]
    best = None

    def expand(R, P, X):
        nonlocal best
        if best is not None and len(R) + len(P) < len(best):
            return
        if not P and not X:
            candidate = tuple(sorted(R))
            if _better(candidate, best):
                best = candidate
            return
        if not P:
            return
        # pivot: most neighbours inside P, smallest index on ties
        u = min(P | X, key=lambda v: (-len(P & nbrs[v]), v))
        for v in sorted(P - nbrs[u]):
            expand(R | {v}, P & nbrs[v], X & nbrs[v])
            P = P - {v}
            X = X | {v}

    expand(set(), P, set())
    return best


@dataclass(frozen=True)
class ClusterPartition:
    clusters: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        clusters = tuple(tuple(sorted(int(v) for v in c)) for c in self.clusters)
        flat = [v for c in clusters for v in c]
        if any(len(c) == 0 for c in clusters):
            raise UsageError("clusters must be non-empty")
        if sorted(flat) != list(range(len(flat))):
            raise UsageError("clusters must be a disjoint cover of 0..M-1")
        object.__setattr__(self, "clusters", clusters)

    @property
    def M(self):
        return sum(len(c) for c in self.clusters)

    @property
    def M_prime(self):
        return len(self.clusters)

    def mapping(self):
        a = np.empty(self.M, dtype=np.int64)
        for j, c in enumerate(self.clusters):
            a[list(c)] = j
        return a

    def as_lists(self):
        return [list(c) for c in self.clusters]


def cluster_codewords(C, gamma):
    """Extract maximum cliques of the threshold graph until every codeword is assigned."""
    graph = threshold_graph(distance_matrix(C), gamma)
    remaining = set(range(graph.size))
    clusters: List[Tuple[int, ...]] = []
    while remaining:
        clique = max_clique(graph, remaining)
        clusters.append(clique)
        remaining -= set(clique)
    return ClusterPartition(tuple(clusters))


def assignment_from_clusters(partition, codebook):
    """
    One compressed codeword per cluster, initialized at the mean of the
    cluster's codewords and mapped back to pre-parameters (clipped atanh).
    """
    if partition.M != codebook.M:
        raise UsageError(f"partition covers {partition.M} codewords, codebook has {codebook.M}")
    means = np.stack([codebook.matrix[:, list(c)].mean(axis=1) for c in partition.clusters], axis=1)
    params = pre_params_from_codebook(means, codebook.energy)
    return CodewordAssignment(partition.mapping(), materialize_codebook(params), params)


def gamma_candidates(D, quantiles=DEFAULT_QUANTILES):
    """Distinct quantiles of the off-diagonal distances, ascending."""
    D = np.asarray(D, dtype=np.float64)
    if D.shape[0] < 2:
        return [0.0]
    upper = D[np.triu_indices(D.shape[0], k=1)]
    return sorted(set(float(g) for g in np.quantile(upper, quantiles)))


def cluster_report(partition, gamma):
    """
    Human-readable report plus a table with one row per cluster.

    Returns:
        (text, DataFrame with columns cluster, size, members, gamma, m_prime)
    """
    lines = [f"gamma = {gamma:.6g}", f"M' = {partition.M_prime} (M = {partition.M})"]
    rows = []
    for j, c in enumerate(partition.clusters):
        members = " ".join(str(v) for v in c)
        lines.append(f"  cluster {j}: size {len(c)} -> [{members}]")
        rows.append({"cluster": j, "size": len(c), "members": members, "gamma": gamma, "m_prime": partition.M_prime})
    return "\n".join(lines), pd.DataFrame(rows, columns=["cluster", "size", "members", "gamma", "m_prime"])
