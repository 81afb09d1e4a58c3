"""Finite-difference verification of the full training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster_head import ClusterHead, sq_distances
from .data import SampleBatch
from .diffmath import AffineLayer, GradCheckReport, grad_check
from .trainer import EmbeddingNet, TrainConfig, named_parameters, total_loss

RELU_MARGIN = 1e-2
TIE_MARGIN = 1e-3


@dataclass
class Instance:
    batch: SampleBatch
    net: EmbeddingNet
    head: ClusterHead


def random_instance(rng: np.random.Generator, n: int, d: int, k: int, d_in: int | None = None) -> Instance:
    d_in = d_in or int(rng.integers(2, 7))
    hidden = int(rng.integers(2, 7))
    dims = [d_in, hidden, d]
    # moderate scales keep the softmax away from saturation, where gradients fall below FD resolution
    layers = [AffineLayer(rng.normal(scale=0.7, size=(a, b)), rng.normal(scale=0.5, size=b)) for a, b in zip(dims[:-1], dims[1:])]
    net = EmbeddingNet(layers, AffineLayer(rng.normal(scale=0.5, size=(d, 2)), rng.normal(scale=0.2, size=2)))
    flags = np.r_[1, 0, rng.integers(0, 2, size=n - 2)]
    rng.shuffle(flags)
    x = rng.normal(size=(n, d_in))
    emb = net.embed(x)
    head = ClusterHead(emb[rng.choice(n, size=k, replace=False)] + rng.normal(scale=0.3, size=(k, d)))
    return Instance(SampleBatch(x, flags), net, head)


def degeneracy(inst: Instance) -> str | None:
    """Why finite differences would straddle a kink, or None if the point is smooth."""
    emb, _, cache = inst.net.forward(inst.batch.features)
    fg = inst.batch.fg_flags == 1
    if fg.any():
        d2 = np.sort(sq_distances(emb[fg], inst.head.weights), axis=1)
        if (d2[:, 1] - d2[:, 0]).min() <= TIE_MARGIN:
            return "tie"
    for _, z in cache:
        if np.abs(z).min() <= RELU_MARGIN:
            return "relu kink"
    return None


def check_instance(inst: Instance, cfg: TrainConfig, epsilon: float = 1e-4, corrupt: bool = False):
    """Grad-check every parameter of net and head; returns {name: GradCheckReport}."""
    reports: dict[str, GradCheckReport] = {}
    for name, param, grad in named_parameters(inst.net, inst.head):
        shape = param.shape

        def f(w, param=param, grad=grad, shape=shape):
            saved = param.copy()
            param[...] = w.reshape(shape)
            value, _ = total_loss(inst.batch, inst.net, inst.head, cfg)
            g = grad.copy()
            param[...] = saved
            if corrupt:
                g = g * 1.01 + 1e-3
            return value, g.reshape(w.shape)

        reports[name] = grad_check(f, np.atleast_2d(param), epsilon)
    return reports


@dataclass
class SuiteResult:
    checked: int
    skipped: list
    worst_name: str
    worst: GradCheckReport | None

    def passed(self, tol: float) -> bool:
        return self.worst is not None and self.worst.max_rel_error < tol


def run_suite(
    seed: int = 0,
    instances: int = 20,
    sizes: tuple[int, int, int] | None = None,
    cfg: TrainConfig | None = None,
    corrupt: bool = False,
    force_tie: bool = False,
    log=None,
) -> SuiteResult:
    """Check ``instances`` random smooth points; degenerate draws are skipped and redrawn.

    Without ``sizes`` each instance draws N <= 8, D <= 6 and K in {2, 3}.
    """
    cfg = cfg or TrainConfig(K=2, alpha_r=0.25, alpha_c=1.0)
    rng = np.random.default_rng(seed)
    skipped, checked = [], 0
    worst_name, worst = "", None
    attempts = 0
    while checked < instances:
        attempts += 1
        if attempts > 100 * instances:
            raise RuntimeError("could not draw enough non-degenerate instances")
        if sizes is None:
            k = int(rng.choice([2, 3]))
            n, d = int(rng.integers(k + 2, 9)), int(rng.integers(2, 7))
        else:
            n, d, k = sizes
        inst = random_instance(rng, n, d, k)
        if force_tie and attempts == 1:
            inst.head.weights[1] = inst.head.weights[0]
        why = degeneracy(inst)
        if why is not None:
            msg = f"instance {attempts}: {why} skipped"
            skipped.append(msg)
            if log:
                log(msg)
            continue
        checked += 1
        for name, rep in check_instance(inst, cfg, corrupt=corrupt).items():
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                worst_name, worst = name, rep
        if log:
            log(f"instance {attempts}: N={n} D={d} K={k} ok (running worst {worst.max_rel_error:.3e})")
    return SuiteResult(checked, skipped, worst_name, worst)
