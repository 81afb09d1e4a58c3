"""Label-aware evaluation of cluster assignments and the post-hoc Lloyd baseline."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cluster_head import Assignment, ClusterHead, assign, kmeanspp_rows, sq_distances
from .data import Dataset


@dataclass
class ConfusionReport:
    counts: np.ndarray  # (K, C) int
    class_ids: np.ndarray  # (C,) true class id of each column
    per_class_pct: np.ndarray = field(init=False)
    purity: float = field(init=False)
    majority_map: np.ndarray = field(init=False)
    matched_accuracy: float = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        col = self.counts.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.per_class_pct = np.where(col > 0, self.counts / np.maximum(col, 1), 0.0)
        total = int(self.counts.sum())
        if total:
            self.purity = float(self.counts.max(axis=1).sum() / total)
            # one-to-one cluster<->class matching; rectangular is fine
            r, c = linear_sum_assignment(-self.counts)
            self.matched_accuracy = float(self.counts[r, c].sum() / total)
        else:
            self.purity = self.matched_accuracy = float("nan")
        # argmax picks the smallest class column on ties
        self.majority_map = self.class_ids[np.argmax(self.counts, axis=1)] if self.counts.size else np.zeros(0, np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def majority_share(self, class_id: int) -> tuple[int, float]:
        """(cluster holding most of ``class_id``, fraction of that class it holds)."""
        j = int(np.flatnonzero(self.class_ids == class_id)[0])
        k = int(np.argmax(self.counts[:, j]))
        return k, float(self.per_class_pct[k, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        head = "cluster," + ",".join(f"class_{c}" for c in self.class_ids) + "\n"
        buf.write("# counts\n" + head)
        for k, row in enumerate(self.counts):
            buf.write(f"{k}," + ",".join(str(int(v)) for v in row) + "\n")
        buf.write("# per_class_pct\n" + head)
        for k, row in enumerate(self.per_class_pct):
            buf.write(f"{k}," + ",".join(f"{v:.6f}" for v in row) + "\n")
        return buf.getvalue()

    def summary(self, title: str = "clustering") -> str:
        lines = [
            f"[{title}]",
            f"clusters: {self.counts.shape[0]}",
            f"classes: {' '.join(str(c) for c in self.class_ids)}",
            f"samples: {self.total}",
            f"purity: {self.purity:.6f}",
            f"matched_accuracy: {self.matched_accuracy:.6f}",
            f"majority_map: {' '.join(str(int(c)) for c in self.majority_map)}",
        ]
        return "\n".join(lines) + "\n"


def confusion_from_counts(counts, class_ids=None) -> ConfusionReport:
    counts = np.asarray(counts)
    if class_ids is None:
        class_ids = np.arange(counts.shape[1])
    return ConfusionReport(counts, class_ids)


def confusion(assignment: Assignment, hidden_classes, K: int | None = None) -> ConfusionReport:
    hidden_classes = np.asarray(hidden_classes, dtype=np.int64)
    if hidden_classes.shape[0] != assignment.N:
        raise ValueError(f"{assignment.N} assignments but {hidden_classes.shape[0]} class labels")
    if assignment.N == 0:
        raise ValueError("confusion needs at least one sample")
    K = assignment.K if K is None else K
    class_ids, col = np.unique(hidden_classes, return_inverse=True)
    counts = np.zeros((K, class_ids.size), dtype=np.int64)
    np.add.at(counts, (assignment.cluster_of, col), 1)
    return ConfusionReport(counts, class_ids)


class LloydResult(NamedTuple):
    centers: np.ndarray
    assignment: Assignment
    objectives: list  # sum of squared distances after each assignment step


def lloyd_kmeans(x: np.ndarray, K: int, seed: int, max_iter: int = 300, tol: float = 1e-8) -> LloydResult:
    """Standard Lloyd iterations from K distinct sample points (greedy k-means++).

    An empty cluster is re-seeded to the point farthest from its currently
    assigned center. Stops when no center moves more than ``tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if K < 1 or n < K:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={n}")
    rng = np.random.default_rng(seed)
    uniq = np.unique(x, axis=0)
    if uniq.shape[0] >= K:
        centers = kmeanspp_rows(uniq[rng.permutation(uniq.shape[0])], K, rng).copy()
    else:
        centers = x[rng.choice(n, size=K, replace=False)].copy()
    objectives = []
    for _ in range(max_iter):
        d2 = sq_distances(x, centers)
        labels = np.argmin(d2, axis=1)
        nearest = d2[np.arange(n), labels]
        objectives.append(float(nearest.sum()))
        new = centers.copy()
        counts = np.bincount(labels, minlength=K)
        for k in range(K):
            if counts[k]:
                new[k] = x[labels == k].mean(axis=0)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(nearest))
            new[k] = x[far]
            nearest[far] = 0.0
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    d2 = sq_distances(x, centers)
    labels = np.argmin(d2, axis=1)
    objectives.append(float(d2[np.arange(n), labels].sum()))
    return LloydResult(centers, Assignment.from_labels(labels, K), objectives)


@dataclass
class EvalResult:
    report: ConfusionReport | None
    fg_accuracy: float
    n_foreground: int
    empty_foreground: bool = False

    def summary(self, title: str = "trained head") -> str:
        text = f"fg_bg_accuracy: {self.fg_accuracy:.6f}\nforeground_samples: {self.n_foreground}\n"
        if self.report is None:
            return text + "confusion: empty (no foreground test samples)\n"
        return self.report.summary(title) + text


def evaluate_model(net, head: ClusterHead, test: Dataset) -> EvalResult:
    if len(test) == 0:
        raise ValueError("evaluation needs a nonempty test set")
    emb, logits, _ = net.forward(test.features)
    acc = float(np.mean(np.argmax(logits, axis=1) == test.fg_flags))
    fg = test.fg_flags == 1
    if not fg.any():
        return EvalResult(None, acc, 0, empty_foreground=True)
    asg = assign(emb[fg], head)
    return EvalResult(confusion(asg, test.hidden_class[fg], head.K), acc, int(fg.sum()))


def baseline_report(net, test: Dataset, K: int, seed: int) -> tuple[ConfusionReport, LloydResult]:
    """Lloyd's k-means on the frozen embedding of the foreground test samples."""
    fg = test.foreground()
    if K > len(fg):
        raise ValueError(f"K={K} exceeds the {len(fg)} foreground samples")
    res = lloyd_kmeans(net.embed(fg.features), K, seed)
    return confusion(res.assignment, fg.hidden_class, K), res
