"""Dense float64 forward/backward primitives and a central-difference gradient checker.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


@dataclass
class AffineLayer:
    weight: np.ndarray  # (D_in, D_out)
    bias: np.ndarray  # (D_out,)
    grad_weight: np.ndarray = field(init=False, repr=False)
    grad_bias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[1]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} does not match weight {self.weight.shape}"
            )
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, scale: float = 0.1):
        return cls(rng.normal(0.0, scale, size=(d_in, d_out)), np.zeros(d_out))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def zero_grad(self):
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)


def affine_forward(x: np.ndarray, layer: AffineLayer) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.weight.shape[0]:
        raise DimensionError(f"input {x.shape} incompatible with weight {layer.weight.shape}")
    return x @ layer.weight + layer.bias


def affine_backward(x: np.ndarray, layer: AffineLayer, grad_out: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients into ``layer`` and return d(loss)/dx."""
    n, d_in = x.shape
    d_out = layer.weight.shape[1]
    if d_in != layer.weight.shape[0] or grad_out.shape != (n, d_out):
        raise DimensionError(
            f"input {x.shape}, weight {layer.weight.shape} and grad_out {grad_out.shape} disagree"
        )
    layer.grad_weight += x.T @ grad_out
    layer.grad_bias += grad_out.sum(axis=0)
    return grad_out @ layer.weight.T


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if x.shape != grad_out.shape:
        raise DimensionError(f"relu input {x.shape} vs grad_out {grad_out.shape}")
    return np.where(x > 0.0, grad_out, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("softmax_xent needs a nonempty batch")
    if labels.shape[0] != n:
        raise DimensionError(f"{n} logit rows but {labels.shape[0]} labels")
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise ValueError("labels out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, int]
    analytic: float
    numeric: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def numeric_gradient(f: Callable[[np.ndarray], float], at: np.ndarray, epsilon: float = 1e-4):
    w = as_matrix(at).copy()
    num = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        orig = w[idx]
        w[idx] = orig + epsilon
        fp = f(w)
        w[idx] = orig - epsilon
        fm = f(w)
        w[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while perturbing entry {idx}")
        num[idx] = (fp - fm) / (2.0 * epsilon)
    return num


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    at: np.ndarray,
    epsilon: float = 1e-4,
) -> GradCheckReport:
    """Compare the analytic gradient returned by ``f`` with central differences.

    ``f(w)`` must return ``(value, gradient)`` with ``gradient`` shaped like ``w``.
    Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w = as_matrix(at)
    value, analytic = f(w.copy())
    if not np.isfinite(value):
        raise NumericError("function value is not finite at the check point")
    analytic = np.asarray(analytic, dtype=np.float64).reshape(w.shape)
    numeric = numeric_gradient(lambda p: f(p)[0], w, epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return GradCheckReport(
        max_rel_error=float(rel[worst]),
        worst_index=(int(worst[0]), int(worst[1])),
        analytic=float(analytic[worst]),
        numeric=float(numeric[worst]),
    )
