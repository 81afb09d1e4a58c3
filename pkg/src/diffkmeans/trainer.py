"""Embedding network, combined objective, RMSProp and the seeded training loop.

Objective per batch::

    L = L_k(foreground embeddings) + alpha_r * sum(w^2) + alpha_c * xent(all samples)

The clustered embedding is the (post-ReLU) output of the last hidden layer,
i.e. the layer feeding the 2-way fg/bg classifier.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import cluster_head as ch
from .data import SampleBatch
from .diffmath import (
    AffineLayer,
    DimensionError,
    affine_backward,
    affine_forward,
    relu_backward,
    relu_forward,
    softmax_xent,
)

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "L", "L_k", "L_C", "M_C", "fg_accuracy")
CKPT_MAGIC = b"DKMEANS\x00"
CKPT_VERSION = 1


class NonFiniteLossError(ArithmeticError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    K: int = 2
    alpha_r: float = 0.25
    alpha_c: float = 1.0
    learning_rate: float = 0.045
    rms_decay: float = 0.9
    momentum: float = 0.9
    epsilon: float = 1.0
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    hidden_dims: tuple[int, ...] = (128, 64)
    cluster_init: str = "sample_points"
    weight_decay: float = 0.0
    freeze_net: bool = False

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        errors = []
        if self.learning_rate <= 0:
            errors.append("learning_rate must be > 0")
        if not 0 <= self.rms_decay < 1:
            errors.append("rms_decay must be in [0, 1)")
        if self.epsilon <= 0:
            errors.append("epsilon must be > 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.K < 2:
            errors.append("K must be >= 2")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            errors.append("hidden_dims must be a nonempty list of positive sizes")
        if self.cluster_init not in ("random_normal", "sample_points"):
            errors.append("cluster_init must be random_normal or sample_points")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def embed_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass
class EmbeddingNet:
    layers: list[AffineLayer]  # each followed by ReLU
    classifier: AffineLayer  # embed_dim -> 2

    @classmethod
    def init(cls, d_in: int, hidden_dims, rng: np.random.Generator) -> "EmbeddingNet":
        dims = [d_in, *hidden_dims]
        layers = [AffineLayer.init(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        return cls(layers, AffineLayer.init(dims[-1], 2, rng))

    @property
    def embed_dim(self) -> int:
        return self.classifier.weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    def forward(self, x: np.ndarray):
        """Return (embedding, logits, cache) where cache holds every layer input and pre-activation."""
        cache = []
        h = x
        for layer in self.layers:
            z = affine_forward(h, layer)
            cache.append((h, z))
            h = relu_forward(z)
        return h, affine_forward(h, self.classifier), cache

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def predict_fg(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(x)[1], axis=1)

    def backward(self, cache, embedding: np.ndarray, grad_logits: np.ndarray, grad_embed: np.ndarray):
        g = affine_backward(embedding, self.classifier, grad_logits) + grad_embed
        for layer, (h_in, z) in zip(reversed(self.layers), reversed(cache)):
            g = affine_backward(h_in, layer, relu_backward(z, g))
        return g

    def zero_grad(self):
        for layer in self.all_layers():
            layer.zero_grad()

    def all_layers(self) -> list[AffineLayer]:
        return [*self.layers, self.classifier]

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}", layer
        yield "classifier", self.classifier


def named_parameters(net: EmbeddingNet, head: ch.ClusterHead):
    """(name, parameter, gradient buffer) triples in a fixed order."""
    out = []
    for name, layer in net.named_layers():
        out.append((f"{name}.weight", layer.weight, layer.grad_weight))
        out.append((f"{name}.bias", layer.bias, layer.grad_bias))
    out.append(("clusters.weight", head.weights, head.grad_weights))
    return out


def total_loss(
    batch: SampleBatch,
    net: EmbeddingNet,
    head: ch.ClusterHead,
    cfg: TrainConfig,
    backward: bool = True,
) -> tuple[float, dict]:
    """Combined objective on one batch; with ``backward`` fills every gradient buffer.

    The k-means term sees only foreground rows; a batch without foreground rows
    contributes L_k = 0. Gradient buffers are zeroed first.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("total_loss needs a nonempty batch")
    net.zero_grad()
    head.zero_grad()
    emb, logits, cache = net.forward(batch.features)
    l_c, g_logits = softmax_xent(logits, batch.fg_flags)
    fg = np.flatnonzero(batch.fg_flags == 1)
    g_emb = np.zeros_like(emb)
    if fg.size:
        l_k, asg = ch.kmeans_loss(emb[fg], head)
        if backward:
            g_emb[fg] = ch.kmeans_backward(emb[fg], head, asg)
        m_c = ch.balance_metric(asg, fg.size)
    else:
        l_k, m_c = 0.0, float("nan")
    l_2, g_l2 = ch.l2_reg(head)
    total = l_k + cfg.alpha_r * l_2 + cfg.alpha_c * l_c
    if backward:
        head.grad_weights += cfg.alpha_r * g_l2
        net.backward(cache, emb, cfg.alpha_c * g_logits, g_emb)
    return total, {"L_k": l_k, "L_2": l_2, "L_C": l_c, "M_C": m_c, "n_fg": int(fg.size)}


@dataclass
class RmsState:
    mean_square: list[np.ndarray] = field(default_factory=list)
    momentum: list[np.ndarray] = field(default_factory=list)


def rmsprop_step(params, grads, state: RmsState, cfg: TrainConfig):
    """In-place non-centred RMSProp with momentum on the scaled update:

    ms <- decay*ms + (1-decay)*g^2;  mom <- momentum*mom + lr*g/sqrt(ms+eps);  p <- p - mom
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.mean_square:
        state.mean_square = [np.zeros_like(p) for p in params]
        state.momentum = [np.zeros_like(p) for p in params]
    for p, g, ms, mom in zip(params, grads, state.mean_square, state.momentum):
        if p.shape != g.shape or p.shape != ms.shape:
            raise DimensionError(f"parameter {p.shape}, gradient {g.shape}, state {ms.shape}")
        ms *= cfg.rms_decay
        ms += (1.0 - cfg.rms_decay) * g * g
        mom *= cfg.momentum
        mom += cfg.learning_rate * g / np.sqrt(ms + cfg.epsilon)
        p -= mom
    return params


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(HISTORY_FIELDS) + "\n")
        for r in self.rows:
            buf.write(",".join(str(r["epoch"]) if k == "epoch" else repr(float(r[k])) for k in HISTORY_FIELDS))
            buf.write("\n")
        return buf.getvalue()


def epoch_metrics(data: SampleBatch, net: EmbeddingNet, head: ch.ClusterHead, cfg: TrainConfig) -> dict:
    """Whole-dataset monitoring values (no gradients)."""
    total, comp = total_loss(data, net, head, cfg, backward=False)
    _, logits, _ = net.forward(data.features)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.fg_flags))
    return {"L": total, "L_k": comp["L_k"], "L_C": comp["L_C"], "M_C": comp["M_C"], "fg_accuracy": acc}


def train(data: SampleBatch, cfg: TrainConfig):
    """Seeded mini-batch RMSProp training. Returns (net, head, history)."""
    if hasattr(data, "to_batch"):
        data = data.to_batch()
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    history = History()
    n_fg = int(data.fg_flags.sum())
    if n_fg == 0 or n_fg == n:
        msg = f"degenerate dataset: {n_fg} foreground of {n} samples"
        log.warning(msg)
        history.warnings.append(msg)

    rng = np.random.default_rng(cfg.seed)
    net = EmbeddingNet.init(data.features.shape[1], cfg.hidden_dims, rng)
    init_seed = int(rng.integers(2**31))
    fg_emb = net.embed(data.features[data.fg_flags == 1])
    if cfg.cluster_init == "sample_points" and len(np.unique(fg_emb, axis=0)) >= cfg.K:
        head = ch.init_clusters(cfg.embed_dim, cfg.K, init_seed, "sample_points", fg_emb)
    else:
        if cfg.cluster_init == "sample_points":
            msg = "too few distinct foreground embeddings for sample_points; using random_normal"
            log.warning(msg)
            history.warnings.append(msg)
        head = ch.init_clusters(cfg.embed_dim, cfg.K, init_seed, "random_normal")

    history.rows.append({"epoch": 0, **epoch_metrics(data, net, head, cfg)})
    named = named_parameters(net, head)
    if cfg.freeze_net:
        named = [t for t in named if t[0] == "clusters.weight"]
    params = [p for _, p, _ in named]
    grads = [g for _, _, g in named]
    decay_mask = [cfg.weight_decay > 0 and name.endswith(".weight") and name != "clusters.weight"
                  for name, _, _ in named]
    state = RmsState()

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            _run_epoch(epoch, rng.permutation(n), data, net, head, cfg, params, grads, decay_mask, state)
            row = epoch_metrics(data, net, head, cfg)
            if not np.isfinite(row["L"]):
                raise NonFiniteLossError(epoch)
            history.rows.append({"epoch": epoch, **row})
            log.info("epoch %d  L=%.5f  L_k=%.5f  L_C=%.5f  M_C=%.4f  acc=%.4f", epoch,
                     row["L"], row["L_k"], row["L_C"], row["M_C"], row["fg_accuracy"])
    return net, head, history


def _run_epoch(epoch, order, data, net, head, cfg, params, grads, decay_mask, state):
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        loss, _ = total_loss(SampleBatch(data.features[idx], data.fg_flags[idx]), net, head, cfg)
        if not np.isfinite(loss):
            raise NonFiniteLossError(epoch)
        for p, g, wd in zip(params, grads, decay_mask):
            if wd:
                g += 2.0 * cfg.weight_decay * p
        rmsprop_step(params, grads, state, cfg)


def save_checkpoint(path, net: EmbeddingNet, head: ch.ClusterHead, extra: dict | None = None) -> None:
    """Binary layout (little-endian): magic, u32 version, u32 affine-layer count,
    then per parameter: u32 name length, utf-8 name, u32 rows, u32 cols, rows*cols f64.

    ``extra`` holds additional named arrays (e.g. input standardisation).
    """
    entries = [(name, p) for name, p, _ in named_parameters(net, head)]
    entries += sorted((extra or {}).items())
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(net.all_layers())))
        for name, arr in entries:
            arr = np.asarray(arr, dtype=np.float64)
            mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<II", *mat.shape))
            fh.write(np.ascontiguousarray(mat).astype("<f8").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[EmbeddingNet, ch.ClusterHead, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    pos = len(CKPT_MAGIC)
    version, n_layers = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    arrays = {}
    try:
        while pos < len(blob):
            (ln,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4:pos + 4 + ln].decode()
            pos += 4 + ln
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            nbytes = 8 * rows * cols
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated parameter {name!r}")
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc

    def layer(prefix):
        try:
            return AffineLayer(arrays.pop(f"{prefix}.weight"), arrays.pop(f"{prefix}.bias").reshape(-1))
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing parameter {exc}") from None

    layers = [layer(f"layers.{i}") for i in range(n_layers - 1)]
    net = EmbeddingNet(layers, layer("classifier"))
    if "clusters.weight" not in arrays:
        raise CheckpointError(f"{path}: missing parameter 'clusters.weight'")
    head = ch.ClusterHead(arrays.pop("clusters.weight"))
    return net, head, arrays
