import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffkmeans.cluster_head import Assignment, ClusterHead
from diffkmeans.data import Dataset, Standardizer, gen_blobs, split
from diffkmeans.evalkit import (
    baseline_report,
    confusion,
    confusion_from_counts,
    evaluate_model,
    lloyd_kmeans,
)
from diffkmeans.trainer import EmbeddingNet, TrainConfig, train

# published 3-cluster confusion counts: rows = classes, columns = clusters
PUBLISHED_COUNTS = np.array([
    [151, 4315, 17],
    [258, 551, 7],
    [5195, 950, 180],
    [89, 39, 5],
    [127, 20, 5],
    [25, 9, 1],
    [127, 76, 4],
    [1128, 541, 450],
])


def labels_from_counts(counts):
    """Expand a (K, C) count table into per-sample (cluster, class) arrays."""
    clusters, classes = [], []
    for k, c in itertools.product(range(counts.shape[0]), range(counts.shape[1])):
        clusters += [k] * int(counts[k, c])
        classes += [c] * int(counts[k, c])
    return np.array(clusters), np.array(classes)


def test_published_counts_purity():
    counts = PUBLISHED_COUNTS.T
    cl, cs = labels_from_counts(counts)
    rep = confusion(Assignment.from_labels(cl, 3), cs)
    assert np.array_equal(rep.counts, counts)
    assert rep.total == 14270
    assert rep.purity == pytest.approx(9960 / 14270, abs=1e-15)
    assert abs(rep.purity - 0.698) <= 0.005


def test_two_class_column_percentages():
    # equal class sizes of 1000 reproduce the printed percentages exactly
    counts = np.array([[685, 179], [315, 821]])
    rep = confusion_from_counts(counts)
    assert np.allclose(rep.per_class_pct[:, 0], [0.685, 0.315])
    assert np.allclose(rep.per_class_pct[:, 1], [0.179, 0.821])
    assert np.allclose(rep.per_class_pct.sum(axis=0), 1)
    assert rep.majority_share(0) == (0, pytest.approx(0.685))
    assert rep.majority_share(1) == (1, pytest.approx(0.821))


def test_confusion_diagonal_and_errors():
    rep = confusion(Assignment.from_labels([0, 1, 2, 2], 3), [4, 7, 9, 9])
    assert rep.purity == 1.0 and rep.majority_map.tolist() == [4, 7, 9]
    assert rep.class_ids.tolist() == [4, 7, 9]
    with pytest.raises(ValueError):
        confusion(Assignment.from_labels([0, 1], 2), [0])
    with pytest.raises(ValueError):
        confusion(Assignment.from_labels(np.zeros(0, int), 2), [])


def test_majority_tie_goes_to_smallest_class():
    rep = confusion_from_counts(np.array([[3, 3], [0, 1]]), [5, 2])
    assert rep.majority_map[0] == 5  # column order, first maximal column wins


def brute_matched(counts):
    k, c = counts.shape
    best = 0
    if k <= c:
        for cols in itertools.permutations(range(c), k):
            best = max(best, sum(counts[i, j] for i, j in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(k), c):
            best = max(best, sum(counts[i, j] for j, i in enumerate(rows)))
    return best / counts.sum()


@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=60)
def test_matched_accuracy_matches_exhaustive_search(seed, k, c):
    counts = np.random.default_rng(seed).integers(0, 20, size=(k, c))
    counts[0, 0] += 1
    assert confusion_from_counts(counts).matched_accuracy == pytest.approx(brute_matched(counts), abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5), st.integers(5, 60))
@settings(max_examples=60)
def test_purity_invariants(seed, k, c, n):
    rng = np.random.default_rng(seed)
    cl, cs = rng.integers(0, k, size=n), rng.integers(0, c, size=n)
    rep = confusion(Assignment.from_labels(cl, k), cs)
    assert rep.total == n
    assert 0 <= rep.purity <= 1
    pk, pc = rng.permutation(k), rng.permutation(c)
    rep2 = confusion(Assignment.from_labels(pk[cl], k), pc[cs])
    assert rep2.purity == pytest.approx(rep.purity, abs=1e-15)
    single = confusion(Assignment.from_labels(np.zeros(n, int), 1), cs)
    assert single.purity == pytest.approx(np.bincount(cs).max() / n, abs=1e-15)


def test_lloyd_two_points():
    x = np.array([[0.0, 1.0], [3.0, -2.0]])
    res = lloyd_kmeans(x, 2, seed=0)
    assert sorted(map(tuple, res.centers)) == sorted(map(tuple, x))
    assert sorted(res.assignment.cluster_of.tolist()) == [0, 1]
    with pytest.raises(ValueError):
        lloyd_kmeans(x, 3, seed=0)


@pytest.mark.parametrize("seed", range(4))
def test_lloyd_recovers_true_centers(seed):
    ds = gen_blobs(8, 4, 0, 80, 10.0, 0.5, seed)
    res = lloyd_kmeans(ds.features, 4, seed=seed)
    d = np.sqrt(((res.centers[:, None] - ds.centers[None]) ** 2).sum(-1))
    assert np.all(d.min(axis=1) < 0.5)
    assert sorted(d.argmin(axis=1).tolist()) == [0, 1, 2, 3]


@given(st.integers(0, 2**32 - 1), st.integers(6, 40), st.integers(1, 4), st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_lloyd_objective_non_increasing(seed, n, d, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    obj = np.array(lloyd_kmeans(x, k, seed=seed).objectives)
    assert np.all(np.diff(obj) <= 1e-9 * (1 + obj[:-1]))


def test_lloyd_reseeds_empty_cluster():
    # duplicate-heavy data with more clusters than natural groups
    x = np.array([[0.0]] * 5 + [[10.0]] * 5 + [[10.5]])
    res = lloyd_kmeans(x, 3, seed=0)
    assert res.assignment.counts.min() >= 1


@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 4))
def test_lloyd_k1_is_global_mean(seed, n, d):
    x = np.random.default_rng(seed).normal(size=(n, d))
    assert np.allclose(lloyd_kmeans(x, 1, seed=0).centers[0], x.mean(axis=0), rtol=0, atol=1e-12)


def _blob_splits(classes=2, seed=0):
    ds = gen_blobs(8, classes, 200, 100, 10.0, 0.5, seed)
    tr, te = split(ds, 0.7, seed)
    std = Standardizer.fit(tr.features)
    return std(tr), std(te)


def test_evaluate_model_after_training():
    # alpha_r = 0: the default regulariser collapses the clusters (see test_trainer)
    tr, te = _blob_splits()
    net, head, _ = train(tr.to_batch(), TrainConfig(K=2, seed=0, alpha_r=0.0))
    res = evaluate_model(net, head, te)
    assert res.report.purity >= 0.95
    assert res.fg_accuracy > 0.9
    assert res.report.total == res.n_foreground == int(te.fg_flags.sum())


def test_evaluate_model_untrained_and_empty_foreground():
    tr, te = _blob_splits()
    rng = np.random.default_rng(0)
    net = EmbeddingNet.init(tr.dim, (16, 8), rng)
    head = ClusterHead(rng.normal(size=(2, 8)))
    res = evaluate_model(net, head, te)
    assert 0 <= res.report.purity <= 1
    bg_only = te.subset(te.fg_flags == 0)
    res = evaluate_model(net, head, bg_only)
    assert res.empty_foreground and res.report is None and "empty" in res.summary()
    with pytest.raises(ValueError):
        evaluate_model(net, head, te.subset(np.zeros(len(te), bool)))


def test_baseline_report_k_bounds():
    _, te = _blob_splits()
    net = EmbeddingNet.init(te.dim, (16, 8), np.random.default_rng(0))
    rep, res = baseline_report(net, te, 1, seed=0)
    fg = te.foreground()
    assert rep.purity == pytest.approx(np.bincount(fg.hidden_class).max() / len(fg))
    with pytest.raises(ValueError):
        baseline_report(net, te, len(fg) + 1, seed=0)


def test_report_text_formats():
    rep = confusion_from_counts(np.array([[685, 179], [315, 821]]), [1, 5])
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[:3] == ["# counts", "cluster,class_1,class_5", "0,685,179"]
    assert "0,0.685000,0.179000" in csv_text
    assert "purity: 0.753000" in rep.summary()
