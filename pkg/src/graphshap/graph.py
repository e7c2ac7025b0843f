"""Feature graphs: construction, binarization, neighborhoods, communities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from graphshap import subsets


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureGraph:
    """Symmetric weight matrix over features.

    The diagonal is stored as 1 and ignored by thresholding, neighborhoods
    and modularity.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise GraphError(f"weight matrix must be square and non-empty, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise GraphError("weight matrix contains non-finite entries")
        if not np.array_equal(w, w.T):
            if not np.allclose(w, w.T, rtol=0, atol=1e-12):
                raise GraphError("weight matrix is not symmetric")
            w = (w + w.T) / 2
        np.fill_diagonal(w, 1.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def off_diagonal(self) -> np.ndarray:
        return self.weights[~np.eye(self.n, dtype=bool)]


@dataclass(frozen=True, eq=False)
class BinaryAdjacency:
    bits: np.ndarray
    threshold_used: float = math.nan

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {b.shape}")
        if not np.array_equal(b, b.T):
            raise GraphError("adjacency is not symmetric")
        np.fill_diagonal(b, False)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def complete(cls, n: int) -> "BinaryAdjacency":
        return cls(np.ones((n, n), dtype=bool), -math.inf)

    @classmethod
    def empty(cls, n: int) -> "BinaryAdjacency":
        return cls(np.zeros((n, n), dtype=bool), math.inf)


@dataclass(frozen=True, eq=False)
class CommunityPartition:
    """Disjoint, covering, non-empty communities.

    Communities are ordered by their smallest member and ``labels[i]`` is
    the position of node ``i``'s community. ``q_trace`` holds the modularity
    after each greedy merge, starting from the singleton partition, when the
    partition came from :func:`detect_communities`, and ``merges`` lists the
    merged pairs, each community named by its lowest original node.
    """

    labels: np.ndarray
    q_trace: tuple = field(default=())
    merges: tuple = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise GraphError("partition needs at least one node")
        # relabel by first appearance of each community's smallest member
        order = {}
        for lab in labels.tolist():
            order.setdefault(lab, len(order))
        canon = np.array([order[lab] for lab in labels.tolist()], dtype=np.int64)
        canon.setflags(write=False)
        object.__setattr__(self, "labels", canon)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def communities(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(int(self.labels.max()) + 1)]
        for i, c in enumerate(self.labels.tolist()):
            out[c].append(i)
        return out

    def masks(self) -> list[int]:
        return [subsets.to_mask(c) for c in self.communities]

    @classmethod
    def from_communities(cls, communities: Sequence[Sequence[int]], n: Optional[int] = None):
        seen = [i for c in communities for i in c]
        n = len(seen) if n is None else n
        if any(len(c) == 0 for c in communities):
            raise GraphError("empty community")
        if sorted(seen) != list(range(n)):
            raise GraphError("communities must be disjoint and cover 0..n-1")
        labels = np.empty(n, dtype=np.int64)
        for k, c in enumerate(communities):
            labels[list(c)] = k
        return cls(labels)


def correlation_graph(data: np.ndarray) -> FeatureGraph:
    """Pearson correlation between feature columns of ``data``."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise GraphError("need a 2-D dataset with at least 2 instances")
    x = x - x.mean(axis=0)
    norm = np.sqrt((x * x).sum(axis=0))
    flat = norm == 0
    if flat.any():
        warnings.warn(
            f"zero-variance feature columns {np.flatnonzero(flat).tolist()} get correlation 0",
            stacklevel=2,
        )
    safe = np.where(flat, 1.0, norm)
    z = x / safe
    w = z.T @ z
    w[flat, :] = 0.0
    w[:, flat] = 0.0
    w = np.clip((w + w.T) / 2, -1.0, 1.0)
    return FeatureGraph(w)


def distance_graph(centroids: Sequence[Sequence[float]]) -> FeatureGraph:
    """``exp(-d_ij / 2)`` for Euclidean distances between centroids."""
    c = np.asarray(centroids, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] < 1 or not np.all(np.isfinite(c)):
        raise GraphError("need at least one finite centroid")
    d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
    return FeatureGraph(np.exp(-d / 2))


def average_graphs(graphs: Sequence[FeatureGraph]) -> FeatureGraph:
    if not graphs:
        raise GraphError("no graphs to average")
    if len({g.n for g in graphs}) != 1:
        raise GraphError("graphs differ in size")
    return FeatureGraph(np.mean([g.weights for g in graphs], axis=0))


def mean_threshold(graph: FeatureGraph) -> float:
    off = graph.off_diagonal()
    if off.size == 0:
        return 0.0
    lo, hi = float(off.min()), float(off.max())
    if lo == hi:
        return lo  # a rounded mean could land just below a constant weight
    return min(max(math.fsum(off.tolist()) / off.size, lo), hi)


def binarize(graph: FeatureGraph, threshold: Optional[float] = None) -> BinaryAdjacency:
    """Edge where weight strictly exceeds ``threshold`` (default: mean off-diagonal weight)."""
    th = mean_threshold(graph) if threshold is None else float(threshold)
    return BinaryAdjacency(graph.weights > th, th)


def neighborhood(adj: BinaryAdjacency, r: int) -> int:
    """Neighbors of ``r`` plus ``r`` itself, as a mask."""
    if not 0 <= r < adj.n:
        raise GraphError(f"node {r} out of range 0..{adj.n - 1}")
    return subsets.to_mask(np.flatnonzero(adj.bits[r])) | (1 << r)


def _modularity_weights(graph: Union[FeatureGraph, BinaryAdjacency]) -> np.ndarray:
    if isinstance(graph, BinaryAdjacency):
        w = graph.bits.astype(float)
    else:
        # negative correlations have no place in the degree null model
        w = np.clip(graph.weights, 0.0, None)
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    return w


def modularity(graph: Union[FeatureGraph, BinaryAdjacency], partition: CommunityPartition) -> float:
    """Newman-Girvan modularity ``sum_c (e_cc - a_c^2)``."""
    w = _modularity_weights(graph)
    if partition.n != w.shape[0]:
        raise GraphError(f"partition covers {partition.n} nodes, graph has {w.shape[0]}")
    total = w.sum()
    if total == 0:
        return 0.0
    q = 0.0
    for c in partition.communities:
        e_cc = w[np.ix_(c, c)].sum() / total
        a_c = w[c].sum() / total
        q += e_cc - a_c * a_c
    return float(q)


def detect_communities(
    graph: Union[FeatureGraph, BinaryAdjacency], tie_tol: float = 1e-12
) -> CommunityPartition:
    """Greedy agglomerative modularity maximization.

    Starts from singletons and merges the pair with the largest modularity
    gain until no merge gains. Gains within ``tie_tol`` of the best are
    ties, resolved toward the lowest community-id pair.
    """
    w = _modularity_weights(graph)
    n = w.shape[0]
    total = w.sum()
    if total == 0:
        if n > 1:
            warnings.warn("graph has no positive-weight edges; returning singletons", stacklevel=2)
        return CommunityPartition(np.arange(n))

    e = w / total
    a = e.sum(axis=1)
    q = float(-(a * a).sum())
    trace = [q]
    alive = list(range(n))
    members = {i: [i] for i in range(n)}
    merges = []
    while len(alive) > 1:
        ids = np.array(alive)
        sub = e[np.ix_(ids, ids)]
        gain = 2 * (sub - np.outer(a[ids], a[ids]))
        iu = np.triu_indices(len(ids), 1)
        g = gain[iu]
        best = g.max()
        if best <= 0:
            break
        k = int(np.flatnonzero(g >= best - tie_tol)[0])
        ci, cj = int(ids[iu[0][k]]), int(ids[iu[1][k]])
        e[ci, :] += e[cj, :]
        e[:, ci] += e[:, cj]
        a[ci] += a[cj]
        members[ci].extend(members.pop(cj))
        merges.append((ci, cj))
        alive.remove(cj)
        q += float(g[k])
        trace.append(q)
    labels = np.empty(n, dtype=np.int64)
    for cid, nodes in members.items():
        labels[nodes] = cid
    return CommunityPartition(labels, tuple(trace), tuple(merges))
