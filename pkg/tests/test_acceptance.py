"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are repeated in the
"acceptance criteria" section of the terminal summary.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from diffkmeans import cli
from diffkmeans.checks import run_suite
from diffkmeans.cluster_head import Assignment, ClusterHead, balance_metric, kmeans_loss
from diffkmeans.data import Standardizer, gen_blobs, split
from diffkmeans.evalkit import baseline_report, confusion, evaluate_model
from diffkmeans.trainer import TrainConfig, train

# published 3-cluster confusion counts: rows = 8 classes, columns = 3 clusters
PUBLISHED_COUNTS = [
    [151, 4315, 17], [258, 551, 7], [5195, 950, 180], [89, 39, 5],
    [127, 20, 5], [25, 9, 1], [127, 76, 4], [1128, 541, 450],
]


def test_criterion_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    res = run_suite(seed=0, instances=20)
    dt = time.perf_counter() - t0
    err = res.worst.max_rel_error
    verdict(1, "full-objective gradient vs finite differences", res.checked == 20 and err < 1e-4 and dt < 10,
            f"{res.checked} instances, {len(res.skipped)} degenerate draws skipped, max rel. error {err:.2e} "
            f"(tol 1e-4), {dt:.2f}s (limit 10s)")


def _loop_loss(x, w):
    total = 0.0
    for n in range(x.shape[0]):
        best = None
        for k in range(w.shape[0]):
            d = 0.0
            for j in range(x.shape[1]):
                d += (x[n, j] - w[k, j]) ** 2
            best = d if best is None or d < best else best
        total += best
    return total / (2 * x.shape[0])


def _loop_balance(cluster_of, K):
    counts = [0] * K
    for s in cluster_of:
        counts[s] += 1
    acc = 0.0
    for k in range(K):
        for j in range(k, K):
            acc += abs(counts[k] - counts[j])
    return acc / (len(cluster_of) * K)


def test_criterion_2_loss_oracle(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_loss = worst_bal = 0.0
    for _ in range(100):
        n, d, k = int(rng.integers(1, 20)), int(rng.integers(1, 6)), int(rng.integers(2, 6))
        x = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        w = rng.normal(size=(k, d)) * rng.uniform(0.1, 10)
        loss, asg = kmeans_loss(x, ClusterHead(w))
        worst_loss = max(worst_loss, abs(loss - _loop_loss(x, w)))
        worst_bal = max(worst_bal, abs(balance_metric(asg, n) - _loop_balance(asg.cluster_of, k)))
    dt = time.perf_counter() - t0
    verdict(2, "kmeans_loss / balance_metric vs loop oracle",
            worst_loss <= 1e-12 and worst_bal <= 1e-12 and dt < 5,
            f"100 instances, max |loss diff| {worst_loss:.1e}, max |M_C diff| {worst_bal:.1e} (tol 1e-12), "
            f"{dt:.2f}s (limit 5s)")


def test_criterion_3_published_counts_purity(verdict):
    t0 = time.perf_counter()
    counts = np.array(PUBLISHED_COUNTS).T  # clusters x classes
    cl = np.repeat(np.repeat(np.arange(3), 8), counts.ravel())
    cs = np.repeat(np.tile(np.arange(8), 3), counts.ravel())
    rep = confusion(Assignment.from_labels(cl, 3), cs)
    dt = time.perf_counter() - t0
    verdict(3, "published 3-cluster confusion purity replay", abs(rep.purity - 0.698) <= 0.005 and dt < 1,
            f"purity {rep.purity:.5f} ({int(rep.counts.max(axis=1).sum())}/{rep.total}), "
            f"target 0.698 +- 0.005, {dt:.3f}s")


def _criterion4_split(seed):
    # 3 classes x 100 = 300 foreground, 300 background
    ds = gen_blobs(16, 3, 300, 100, 10.0, 0.5, seed)
    tr, te = split(ds, 0.7, seed)
    std = Standardizer.fit(tr.features)
    return std(tr), std(te)


def test_criterion_4_synthetic_end_to_end(verdict):
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        tr, te = _criterion4_split(seed)
        net, head, _ = train(tr.to_batch(), TrainConfig(K=3, seed=seed))
        res = evaluate_model(net, head, te)
        rows.append((res.report.purity, res.fg_accuracy))
    dt = time.perf_counter() - t0
    ok_seeds = sum(p >= 0.95 and a >= 0.95 for p, a in rows)
    detail = ", ".join(f"s{i}: purity {p:.3f} acc {a:.3f}" for i, (p, a) in enumerate(rows))
    verdict(4, "synthetic end-to-end, default TrainConfig, K=3", ok_seeds == 5 and dt < 120,
            f"{ok_seeds}/5 seeds meet purity>=0.95 and acc>=0.95 [{detail}], {dt:.1f}s (limit 120s)")


def _cifar_dir():
    for cand in (os.environ.get("CIFAR10_DIR"), "data/cifar-10-batches-bin"):
        if cand and (Path(cand) / "data_batch_1.bin").is_file() and (Path(cand) / "test_batch.bin").is_file():
            return Path(cand)
    return None


@pytest.mark.slow
def test_criterion_5_cifar_trend(verdict, tmp_path):
    root = _cifar_dir()
    if root is None:
        verdict(5, "CIFAR-10 automobile/dog trend", None,
                "CIFAR-10 binary batches not found (set CIFAR10_DIR); skipped")
    train_files = ", ".join(str(p) for p in sorted(root.glob("data_batch_*.bin")))
    rc = cli.parse_config(f"dataset = cifar\ncifar_train = {train_files}\ncifar_test = {root / 'test_batch.bin'}\n"
                          "fg_classes = automobile, dog\nK = 2\n")
    t0 = time.perf_counter()
    tr, te = cli.raw_dataset(rc)
    std = Standardizer.fit(tr.features)
    net, head, _ = train(std(tr).to_batch(), rc.train)
    res = evaluate_model(net, head, std(te))
    dt = time.perf_counter() - t0
    (k_car, share_car), (k_dog, share_dog) = res.report.majority_share(1), res.report.majority_share(5)
    ok = res.fg_accuracy >= 0.80 and k_car != k_dog and min(share_car, share_dog) >= 0.60 and dt <= 1800
    verdict(5, "CIFAR-10 automobile/dog trend", ok,
            f"fg/bg acc {res.fg_accuracy:.3f} (>=0.80), automobile -> cluster {k_car} ({share_car:.1%}), "
            f"dog -> cluster {k_dog} ({share_dog:.1%}) (distinct, >=60%), {dt:.0f}s")


def test_criterion_6_balance_properties(verdict):
    a = balance_metric(Assignment.from_labels([0, 0, 0, 0], 2), 4)
    b = balance_metric(Assignment.from_labels([0, 0, 0, 1, 1, 2], 3), 6)
    rng = np.random.default_rng(6)
    iff_ok = True
    for _ in range(300):
        k = int(rng.integers(2, 6))
        if rng.random() < 0.5:
            labels = np.repeat(np.arange(k), int(rng.integers(1, 6)))
        else:
            labels = rng.integers(0, k, size=int(rng.integers(1, 30)))
        asg = Assignment.from_labels(labels, k)
        equal = len(set(asg.counts.tolist())) == 1
        iff_ok &= (balance_metric(asg, len(labels)) == 0) == equal
    ok = abs(a - 0.5) <= 1e-12 and abs(b - 2 / 9) <= 1e-12 and iff_ok
    verdict(6, "balance metric properties", ok,
            f"[4,0] -> {a:.12f} (0.5), [3,2,1] -> {b:.12f} (0.2222), M_C=0 iff equal counts on 300 draws: {iff_ok}")


CRIT_CONFIG = """\
run_id = crit
K = 3
"""


def test_criterion_7_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CRIT_CONFIG)
    blobs = []
    for name in ("a", "b"):
        code = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "3"])
        run = tmp_path / name / "crit"
        blobs.append((code, (run / "crit.history.csv").read_bytes(), (run / "crit.ckpt").read_bytes()))
    (c1, h1, k1), (c2, h2, k2) = blobs
    ok = c1 == c2 == 0 and h1 == h2 and k1 == k2
    verdict(7, "cmd_train determinism", ok,
            f"exit codes {c1}/{c2}, history identical: {h1 == h2} ({len(h1)} B), "
            f"checkpoint identical: {k1 == k2} ({len(k1)} B)")


def test_criterion_8_lloyd_baseline(verdict, tmp_path):
    # criterion-4 data through the CLI: default synthetic source is D=16, 3 x 100 fg, 300 bg
    cfg = tmp_path / "run.cfg"
    cfg.write_text("run_id = crit8\nK = 3\n")
    out = str(tmp_path)
    codes = [cli.main(["train", "--config", str(cfg), "--out", out]),
             cli.main(["baseline", "--config", str(cfg), "--out", out])]
    run = tmp_path / "crit8"
    emitted = (run / "crit8.confusion.csv").is_file() and (run / "crit8.baseline.confusion.csv").is_file()

    net, head, test_ds = cli._load_run(cli.load_config(cfg, out=out), None)
    report, res = baseline_report(net, test_ds, 3, seed=0)
    obj = np.array(res.objectives)
    monotone = bool(np.all(np.diff(obj) <= 1e-12 * (1 + np.abs(obj[:-1]))))
    trained = evaluate_model(net, head, test_ds).report
    ok = codes == [0, 0] and emitted and monotone
    verdict(8, "post-hoc Lloyd baseline on the trained embedding", ok,
            f"exit codes {codes}, both confusion CSVs emitted: {emitted}, {len(obj) - 1} Lloyd iterations, "
            f"objective non-increasing: {monotone}; purity Lloyd {report.purity:.3f} vs trained head "
            f"{trained.purity:.3f} (reported, not asserted)")
