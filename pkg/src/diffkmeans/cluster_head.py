"""Learnable cluster means and the hard-assignment k-means loss.

The head holds K mean vectors as ordinary parameters. ``kmeans_loss`` is half
the mean squared distance of each point to its nearest mean, and
``kmeans_backward`` returns its exact gradient with respect to both the means
and the points, treating the argmin as locally constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffmath import DimensionError, as_matrix


class InitError(ValueError):
    pass


@dataclass
class ClusterHead:
    weights: np.ndarray  # (K, D)
    grad_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = as_matrix(self.weights)
        if self.weights.shape[0] < 2:
            raise ValueError(f"need K >= 2 clusters, got {self.weights.shape[0]}")
        self.grad_weights = np.zeros_like(self.weights)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def D(self) -> int:
        return self.weights.shape[1]

    def zero_grad(self):
        self.grad_weights.fill(0.0)


@dataclass
class Assignment:
    cluster_of: np.ndarray  # (N,) int
    counts: np.ndarray  # (K,) int

    @classmethod
    def from_labels(cls, cluster_of, K: int) -> "Assignment":
        cluster_of = np.asarray(cluster_of, dtype=np.int64)
        return cls(cluster_of, np.bincount(cluster_of, minlength=K).astype(np.int64))

    @property
    def N(self) -> int:
        return int(self.cluster_of.shape[0])

    @property
    def K(self) -> int:
        return int(self.counts.shape[0])


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(N, K) squared Euclidean distances, computed by explicit differences."""
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _check_points(x: np.ndarray, head: ClusterHead):
    if x.ndim != 2 or x.shape[1] != head.D:
        raise DimensionError(f"points {x.shape} incompatible with cluster weights {head.weights.shape}")


def assign(x: np.ndarray, head: ClusterHead) -> Assignment:
    _check_points(x, head)
    if x.shape[0] == 0:
        raise ValueError("cannot assign an empty set of points")
    # np.argmin returns the first minimum, which is the lowest-index tie-break
    return Assignment.from_labels(np.argmin(sq_distances(x, head.weights), axis=1), head.K)


def kmeans_loss(x: np.ndarray, head: ClusterHead) -> tuple[float, Assignment]:
    _check_points(x, head)
    n = x.shape[0]
    if n == 0:
        raise ValueError("k-means loss is undefined on an empty foreground set")
    d2 = sq_distances(x, head.weights)
    cluster_of = np.argmin(d2, axis=1)
    loss = float(d2[np.arange(n), cluster_of].sum() / (2.0 * n))
    return loss, Assignment.from_labels(cluster_of, head.K)


def kmeans_backward(x: np.ndarray, head: ClusterHead, assignment: Assignment) -> np.ndarray:
    """Accumulate d(L_k)/dw into ``head.grad_weights``; return d(L_k)/dx."""
    _check_points(x, head)
    n = x.shape[0]
    if assignment.N != n or assignment.K != head.K:
        raise ValueError(
            f"assignment for N={assignment.N}, K={assignment.K} does not match "
            f"points N={n}, K={head.K}"
        )
    resid = (x - head.weights[assignment.cluster_of]) / n
    # d/dw_k = (1/N) sum_{n in k} (w_k - x_n)
    np.subtract.at(head.grad_weights, assignment.cluster_of, resid)
    return resid


def l2_reg(head: ClusterHead) -> tuple[float, np.ndarray]:
    """Sum of squared cluster-weight entries and its gradient (unscaled)."""
    return float(np.sum(head.weights * head.weights)), 2.0 * head.weights


def balance_metric(assignment: Assignment, N: int) -> float:
    counts = assignment.counts.astype(np.float64)
    K = counts.shape[0]
    if N < 1 or int(assignment.counts.sum()) != N:
        raise ValueError(f"counts sum to {int(assignment.counts.sum())}, expected N={N}")
    pair = np.abs(counts[:, None] - counts[None, :])
    return float(np.triu(pair).sum() / (N * K))


def kmeanspp_rows(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Pick K distinct rows of ``points`` by greedy k-means++ seeding.

    Each pick draws ``2 + ln K`` candidates with probability proportional to the
    squared distance to the rows chosen so far and keeps the one that most
    reduces the total squared distance. ``points`` must have >= K distinct rows.
    """
    n = points.shape[0]
    trials = 2 + int(np.log(K))
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(points, points[chosen])[:, 0]
    for _ in range(K - 1):
        total = d2.sum()
        if total <= 0:
            raise InitError(f"fewer than {K} distinct points")
        cand = rng.choice(n, size=trials, p=d2 / total)
        cand_d2 = np.minimum(d2[None, :], sq_distances(points[cand], points).reshape(trials, n))
        best = int(np.argmin(cand_d2.sum(axis=1)))
        chosen.append(int(cand[best]))
        d2 = cand_d2[best]
    return points[chosen]


def init_clusters(
    D: int,
    K: int,
    seed: int,
    scheme: str = "random_normal",
    points: np.ndarray | None = None,
) -> ClusterHead:
    """Seeded cluster-weight initialisation.

    ``random_normal`` draws from N(0, 0.1^2). ``sample_points`` copies K distinct
    rows of ``points`` chosen by :func:`kmeanspp_rows`.
    """
    if K < 2:
        raise InitError(f"need K >= 2, got {K}")
    rng = np.random.default_rng(seed)
    if scheme == "random_normal":
        w = rng.normal(0.0, 0.1, size=(K, D))
    elif scheme == "sample_points":
        if points is None:
            raise InitError("sample_points initialisation needs points")
        points = as_matrix(points)
        if points.shape[1] != D:
            raise DimensionError(f"points {points.shape} do not have dimension {D}")
        uniq = np.unique(points, axis=0)
        if uniq.shape[0] < K:
            raise InitError(f"only {uniq.shape[0]} distinct points for K={K} clusters")
        w = kmeanspp_rows(uniq, K, rng).copy()
    else:
        raise InitError(f"unknown cluster init scheme {scheme!r}")
    head = ClusterHead(w)
    d = sq_distances(head.weights, head.weights)
    d[np.diag_indices(K)] = np.inf
    if np.sqrt(d.min()) <= 1e-6:
        raise InitError("initial cluster weights are not pairwise distinct")
    return head
