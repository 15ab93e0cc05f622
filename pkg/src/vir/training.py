"""Trainable tail, the two training modes, evaluation and checkpoints.

Model layout for a batch of images::

    patches (B, T, P*P*C) --E--> u (B, T, D) --reservoir stack--> per-step features
    features --pool over steps--> f (R, B, F)       R = readouts (parallel branches)
    y_r  = mean_r( standardize_r(f_r) @ LL_r )      (B, D)
    y_c  = FF(LN1(y_r)) + y_r,  FF(h) = GELU(h W1 + b1) W2 + b2
    logits = LN2(y_c) @ H + h_b

Because the readout is linear, pooling features before LL equals pooling the
per-step readout outputs. In ridge mode the tail is bypassed: logits are
``concat_r(f_r) @ W_out`` with E frozen.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import ConfigError, FormatError, NumericError, ShapeError
from .numerics import DTYPE, RngStream, ridge_solve, ridge_solve_normal
from .patches import ImageBatch, extract_patches
from .reservoir import (
    DeepConfig,
    ReservoirStack,
    _pool_weights,
    backward_batch,
    build_stack,
    forward_batch,
    pool_source,
    pool_source_backward,
    pooled_features,
    readout_sources,
)
from .topology import ReservoirMatrices, ReservoirSpec

log = logging.getLogger(__name__)

LN_EPS = 1e-5
PARAM_NAMES = (
    "E",
    "LL",
    "ln1_g",
    "ln1_b",
    "ff_w1",
    "ff_b1",
    "ff_w2",
    "ff_b2",
    "ln2_g",
    "ln2_b",
    "head_w",
    "head_b",
)
#: tensors that receive weight decay; gains and biases do not
DECAYED = ("E", "LL", "ff_w1", "ff_w2", "head_w")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    deep: DeepConfig = field(default_factory=DeepConfig)
    patch: int = 4
    image_shape: tuple[int, int, int] = (28, 28, 1)
    ff_dim: int = 1024
    classes: int = 10
    embed_scale: float = 0.2
    washout: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        h, w, _ = self.image_shape
        if self.patch < 1 or h % self.patch or w % self.patch:
            raise ConfigError(f"patch size {self.patch} does not divide the {h}x{w} image")
        if self.ff_dim < 1 or self.classes < 2:
            raise ConfigError("ff_dim must be >= 1 and classes >= 2")
        if not self.embed_scale > 0:
            raise ConfigError("embed_scale must be > 0")
        if not 0 <= self.washout < self.steps:
            raise ConfigError(f"washout must be in [0, {self.steps})")

    @property
    def embed_dim(self) -> int:
        return self.deep.specs[0].input_dim

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.image_shape[2]

    @property
    def steps(self) -> int:
        h, w, _ = self.image_shape
        return (h // self.patch) * (w // self.patch)

    def to_dict(self) -> dict:
        return {
            "mode": self.deep.mode,
            "reservoirs": [s.to_dict() for s in self.deep.specs],
            "patch": self.patch,
            "image_shape": list(self.image_shape),
            "ff_dim": self.ff_dim,
            "classes": self.classes,
            "embed_scale": self.embed_scale,
            "washout": self.washout,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        deep = DeepConfig(d.pop("mode"), tuple(ReservoirSpec.from_dict(s) for s in d.pop("reservoirs")))
        d["image_shape"] = tuple(d["image_shape"])
        return cls(deep=deep, **d)

    def shape_hash(self) -> str:
        """Digest of everything that fixes tensor shapes and the frozen matrices."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ridge"
    ridge_k: float = 1e-6
    pooling: str = "mean_over_steps"
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 128
    weight_decay: float = 1e-4
    momentum: float = 0.9
    clip_norm: float = 0.0
    embed_lr_scale: float = 1.0
    standardize: bool = True
    standardize_samples: int = 2000
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ridge", "gradient"):
            raise ConfigError(f"train mode must be 'ridge' or 'gradient', got {self.mode!r}")
        if self.pooling not in ("mean_over_steps", "last_step"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.ridge_k < 0:
            raise ConfigError("ridge_k must be >= 0")
        if self.mode == "gradient":
            if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
                raise ConfigError("gradient mode needs lr >= 0, epochs >= 1 and batch_size >= 1")
            if self.weight_decay < 0 or not 0 <= self.momentum < 1 or self.clip_norm < 0:
                raise ConfigError("weight_decay and clip_norm must be >= 0, momentum in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


# -- parameters --------------------------------------------------------------


@dataclass
class TailNetwork:
    E: np.ndarray
    LL: np.ndarray  # (R, F, D)
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ff_w1: np.ndarray
    ff_b1: np.ndarray
    ff_w2: np.ndarray
    ff_b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    # fixed per-feature affine map applied before LL; not trained
    feat_shift: np.ndarray | None = None
    feat_scale: np.ndarray | None = None

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> TailNetwork:
        kw = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name).copy()) for f in fields(self)}
        return TailNetwork(**kw)

    @property
    def readouts(self) -> int:
        return self.LL.shape[0]


def init_tail(config: ModelConfig, readouts: int, feature_dim: int, seed: int) -> TailNetwork:
    d, dff, q = config.embed_dim, config.ff_dim, config.classes
    root = RngStream(seed, "tail")

    def gauss(label, shape, std):
        return root.child(label).generator().normal(0.0, std, shape)

    return TailNetwork(
        E=gauss("E", (config.patch_dim, d), config.embed_scale / math.sqrt(config.patch_dim)),
        LL=gauss("LL", (readouts, feature_dim, d), 1.0 / math.sqrt(feature_dim)),
        ln1_g=np.ones(d),
        ln1_b=np.zeros(d),
        ff_w1=gauss("ff_w1", (d, dff), 1.0 / math.sqrt(d)),
        ff_b1=np.zeros(dff),
        ff_w2=gauss("ff_w2", (dff, d), 1.0 / math.sqrt(dff)),
        ff_b2=np.zeros(d),
        ln2_g=np.ones(d),
        ln2_b=np.zeros(d),
        head_w=gauss("head_w", (d, q), 1.0 / math.sqrt(d)),
        head_b=np.zeros(q),
    )


@dataclass
class ViRModel:
    config: ModelConfig
    stack: ReservoirStack
    tail: TailNetwork
    # ridge-mode readout over concatenated branch features, (R*F, Q)
    readout: np.ndarray | None = None

    @property
    def trained_mode(self) -> str:
        return "ridge" if self.readout is not None else "gradient"


def build_model(config: ModelConfig, seed: int = 0) -> ViRModel:
    stack = build_stack(config.deep, config.activation)
    if stack.input_dim != config.embed_dim:
        raise ConfigError("embedding width must equal the first reservoir's input_dim")
    tail = init_tail(config, stack.readouts, stack.feature_dim, seed)
    return ViRModel(config, stack, tail)


def count_parameters(model: ViRModel) -> dict[str, int]:
    """Trainable tensor sizes per component; the frozen reservoir matrices are excluded."""
    if model.readout is not None:
        counts = {"readout": int(model.readout.size)}
    else:
        t = model.tail
        counts = {
            "embedding": t.E.size,
            "readout": t.LL.size,
            "layernorm": t.ln1_g.size + t.ln1_b.size + t.ln2_g.size + t.ln2_b.size,
            "feedforward": t.ff_w1.size + t.ff_b1.size + t.ff_w2.size + t.ff_b2.size,
            "head": t.head_w.size + t.head_b.size,
        }
        counts = {k: int(v) for k, v in counts.items()}
    counts["total"] = sum(counts.values())
    return counts


# -- tail forward / backward -------------------------------------------------


def layer_norm(z, g, b):
    mu = z.mean(axis=-1, keepdims=True)
    zc = z - mu
    inv = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
    zh = zc * inv
    return zh * g + b, (zh, inv)


def layer_norm_backward(gout, g, cache):
    zh, inv = cache
    gzh = gout * g
    gz = inv * (gzh - gzh.mean(axis=-1, keepdims=True) - zh * (gzh * zh).mean(axis=-1, keepdims=True))
    return gz, (gout * zh).sum(axis=0), gout.sum(axis=0)


def gelu(a):
    return 0.5 * a * (1.0 + erf(a / math.sqrt(2.0)))


def gelu_grad(a):
    cdf = 0.5 * (1.0 + erf(a / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    return cdf + a * pdf


def _standardized(tail: TailNetwork, feats: np.ndarray) -> np.ndarray:
    if tail.feat_shift is None:
        return feats
    return (feats - tail.feat_shift[:, None, :]) * tail.feat_scale[:, None, :]


def forward_tail(tail: TailNetwork, feats) -> tuple[np.ndarray, dict]:
    """Pooled features ``(R, B, F)`` to logits ``(B, Q)``."""
    feats = np.asarray(feats, dtype=DTYPE)
    if feats.ndim != 3 or feats.shape[0] != tail.LL.shape[0] or feats.shape[2] != tail.LL.shape[1]:
        raise ShapeError(f"features of shape {feats.shape} do not fit readout {tail.LL.shape}")
    R = feats.shape[0]
    fs = _standardized(tail, feats)
    y_r = sum(fs[r] @ tail.LL[r] for r in range(R)) / R
    h1, ln1 = layer_norm(y_r, tail.ln1_g, tail.ln1_b)
    a = h1 @ tail.ff_w1 + tail.ff_b1
    act = gelu(a)
    y_c = act @ tail.ff_w2 + tail.ff_b2 + y_r
    h2, ln2 = layer_norm(y_c, tail.ln2_g, tail.ln2_b)
    logits = h2 @ tail.head_w + tail.head_b
    return logits, {"fs": fs, "h1": h1, "ln1": ln1, "a": a, "act": act, "h2": h2, "ln2": ln2}


def backward_tail(tail: TailNetwork, cache: dict, g_logits) -> tuple[dict, np.ndarray]:
    """Returns (grads of every tail tensor except E, dL/dfeatures ``(R, B, F)``)."""
    R = tail.LL.shape[0]
    g = {}
    g["head_w"] = cache["h2"].T @ g_logits
    g["head_b"] = g_logits.sum(axis=0)
    g_h2 = g_logits @ tail.head_w.T
    g_yc, g["ln2_g"], g["ln2_b"] = layer_norm_backward(g_h2, tail.ln2_g, cache["ln2"])
    g["ff_w2"] = cache["act"].T @ g_yc
    g["ff_b2"] = g_yc.sum(axis=0)
    g_a = (g_yc @ tail.ff_w2.T) * gelu_grad(cache["a"])
    g["ff_w1"] = cache["h1"].T @ g_a
    g["ff_b1"] = g_a.sum(axis=0)
    g_h1 = g_a @ tail.ff_w1.T
    g_yr1, g["ln1_g"], g["ln1_b"] = layer_norm_backward(g_h1, tail.ln1_g, cache["ln1"])
    g_yr = (g_yc + g_yr1) / R
    g["LL"] = np.stack([cache["fs"][r].T @ g_yr for r in range(R)])
    g_fs = np.stack([g_yr @ tail.LL[r].T for r in range(R)])
    if tail.feat_scale is not None:
        g_fs = g_fs * tail.feat_scale[:, None, :]
    return g, g_fs


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = logits.shape[0]
    loss = -float(logp[np.arange(B), labels].mean())
    g = np.exp(logp)
    g[np.arange(B), labels] -= 1.0
    return loss, g / B


# -- full model --------------------------------------------------------------


def embed(tail: TailNetwork, patches: np.ndarray) -> np.ndarray:
    return patches @ tail.E


def features(model: ViRModel, patches, pooling: str = "mean_over_steps", chunk: int = 256) -> np.ndarray:
    """Pooled features ``(R, B, F)`` for a ``(B, T, P*P*C)`` patch batch."""
    u = embed(model.tail, np.asarray(patches, dtype=DTYPE))
    return pooled_features(model.stack, u, model.config.washout, pooling, chunk)


def loss_and_grad(model: ViRModel, patches, labels, pooling: str = "mean_over_steps", batch_index: int = 0):
    """Mean cross-entropy over the batch and gradients for every tail tensor, E included.

    E's gradient flows back through the frozen recurrence (full unroll).
    """
    patches = np.asarray(patches, dtype=DTYPE)
    labels = np.asarray(labels)
    if patches.ndim != 3 or patches.shape[0] == 0:
        raise ShapeError(f"need a non-empty (B, T, P*P*C) batch, got {patches.shape}")
    tail, stack = model.tail, model.stack
    u = embed(tail, patches)
    cache = forward_batch(stack, u)
    weights = _pool_weights(u.shape[1], model.config.washout, pooling)
    sources = readout_sources(stack, cache)
    feats = np.stack([pool_source(inp, x, weights) for inp, x in sources])
    logits, tcache = forward_tail(tail, feats)
    loss, g_logits = softmax_cross_entropy(logits, labels)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} in batch {batch_index}")
    grads, g_feats = backward_tail(tail, tcache, g_logits)
    src_grads = [pool_source_backward(inp, x, weights, g_feats[r]) for r, (inp, x) in enumerate(sources)]
    g_u = backward_batch(stack, cache, src_grads)
    pd = patches.shape[2]
    grads["E"] = patches.reshape(-1, pd).T @ g_u.reshape(-1, g_u.shape[2])
    return loss, grads, logits


def predict_logits(model: ViRModel, patches, pooling: str = "mean_over_steps", chunk: int = 256) -> np.ndarray:
    feats = features(model, patches, pooling, chunk)
    if model.readout is not None:
        return _concat(feats) @ model.readout
    return forward_tail(model.tail, feats)[0]


def _concat(feats: np.ndarray) -> np.ndarray:
    """(R, B, F) -> (B, R*F)."""
    return feats.transpose(1, 0, 2).reshape(feats.shape[1], -1)


def evaluate(model: ViRModel, data: ImageBatch, pooling: str = "mean_over_steps", chunk: int = 500) -> float:
    """Top-1 accuracy."""
    correct = 0
    for s in range(0, len(data), chunk):
        part = data.subset(slice(s, s + chunk))
        p = extract_patches(part.images, model.config.patch)
        correct += int((predict_logits(model, p, pooling).argmax(axis=1) == part.labels).sum())
    return correct / len(data)


# -- ridge mode ----------------------------------------------------------------


def fit_ridge(X, Y, k: float) -> np.ndarray:
    """Closed-form readout (kI + X^T X)^-1 X^T Y."""
    return ridge_solve(X, Y, k)


def one_hot(labels, q: int) -> np.ndarray:
    out = np.zeros((len(labels), q))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _fit_ridge_streaming(model: ViRModel, data: ImageBatch, cfg: TrainConfig, chunk: int = 500):
    q = model.config.classes
    gram = xty = None
    for s in range(0, len(data), chunk):
        part = data.subset(slice(s, s + chunk))
        X = _concat(features(model, extract_patches(part.images, model.config.patch), cfg.pooling))
        Y = one_hot(part.labels, q)
        if gram is None:
            gram = np.zeros((X.shape[1], X.shape[1]))
            xty = np.zeros((X.shape[1], q))
        gram += X.T @ X
        xty += X.T @ Y
    W = ridge_solve_normal(gram, xty, cfg.ridge_k)
    return W


# -- gradient mode -------------------------------------------------------------


def fit_standardizer(model: ViRModel, data: ImageBatch, cfg: TrainConfig) -> None:
    """Freeze a per-feature shift and scale measured on a training sample at the initial E.

    Features are centred and scaled to variance 1/F, so the whole feature
    vector has unit expected norm; LL is rescaled by sqrt(F) to keep its
    output at the same magnitude. With this parametrization one SGD step on
    LL moves y_r by O(lr) regardless of the feature width.
    """
    n = min(cfg.standardize_samples, len(data))
    idx = np.sort(RngStream(cfg.seed, "standardize").generator().permutation(len(data))[:n])
    part = data.subset(idx)
    feats = features(model, extract_patches(part.images, model.config.patch), cfg.pooling)
    width = feats.shape[2]
    mean = feats.mean(axis=1)
    std = feats.std(axis=1)
    floor = 1e-3 * np.median(std, axis=1, keepdims=True) + 1e-12
    model.tail.feat_shift = mean
    model.tail.feat_scale = 1.0 / (np.maximum(std, floor) * math.sqrt(width))
    model.tail.LL *= math.sqrt(width)


class SGD:
    """Momentum SGD with L2 weight decay on :data:`DECAYED` tensors and cosine decay."""

    def __init__(self, tail: TailNetwork, cfg: TrainConfig, total_steps: int):
        self.cfg = cfg
        self.total = max(total_steps, 1)
        self.t = 0
        self.velocity = {k: np.zeros_like(v) for k, v in tail.params().items()}

    def lr(self) -> float:
        return self.cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(self.t, self.total) / self.total))

    def step(self, tail: TailNetwork, grads: dict) -> None:
        cfg = self.cfg
        if cfg.clip_norm > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
        lr = self.lr()
        for name in PARAM_NAMES:
            p = getattr(tail, name)
            g = grads[name]
            if name in DECAYED and cfg.weight_decay:
                g = g + cfg.weight_decay * p
            v = self.velocity[name]
            v *= cfg.momentum
            v += g
            p -= (lr * cfg.embed_lr_scale if name == "E" else lr) * v
        self.t += 1


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    seconds: float


def write_log(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_acc", "test_acc", "seconds"])
        for r in records:
            w.writerow([r.epoch, repr(r.loss), repr(r.train_acc), "" if math.isnan(r.test_acc) else repr(r.test_acc), f"{r.seconds:.3f}"])


def train(model: ViRModel, train_set: ImageBatch, cfg: TrainConfig, test_set: ImageBatch | None = None, progress=None):
    """Train in place; returns the list of :class:`EpochRecord`."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if progress is None:
        progress = lambda rec: log.info("epoch %d loss %.4f train %.4f test %.4f (%.1fs)", rec.epoch, rec.loss, rec.train_acc, rec.test_acc, rec.seconds)  # noqa: E731
    if cfg.mode == "ridge":
        t0 = time.perf_counter()
        model.readout = _fit_ridge_streaming(model, train_set, cfg)
        train_acc = evaluate(model, train_set, cfg.pooling)
        test_acc = evaluate(model, test_set, cfg.pooling) if test_set is not None else float("nan")
        rec = EpochRecord(1, float("nan"), train_acc, test_acc, time.perf_counter() - t0)
        progress(rec)
        return [rec]

    model.readout = None
    if cfg.standardize and model.tail.feat_shift is None:
        fit_standardizer(model, train_set, cfg)
    n = len(train_set)
    steps_per_epoch = -(-n // cfg.batch_size)
    opt = SGD(model.tail, cfg, steps_per_epoch * cfg.epochs)
    patches_all = extract_patches(train_set.images, model.config.patch)
    records = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = RngStream(cfg.seed, "shuffle").child(epoch).generator().permutation(n)
        total_loss = 0.0
        correct = 0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            loss, grads, logits = loss_and_grad(model, patches_all[idx], train_set.labels[idx], cfg.pooling, b)
            opt.step(model.tail, grads)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == train_set.labels[idx]).sum())
        test_acc = float("nan")
        if test_set is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            test_acc = evaluate(model, test_set, cfg.pooling)
        rec = EpochRecord(epoch, total_loss / n, correct / n, test_acc, time.perf_counter() - t0)
        progress(rec)
        records.append(rec)
    return records


# -- checkpoints ---------------------------------------------------------------
#
# layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header, then the
# tensors back to back as float64 LE row-major. The header lists each tensor's
# name, shape and byte offset relative to the start of the payload.

CHECKPOINT_MAGIC = b"VIRCKPT1"


def _tensors(model: ViRModel) -> dict[str, np.ndarray]:
    out = {}
    for l, m in enumerate(model.stack.layers):
        out[f"layer{l}/W"] = m.W
        out[f"layer{l}/V"] = m.V
    for l, u in enumerate(model.stack.inter):
        out[f"inter{l}/U"] = u
    for name, p in model.tail.params().items():
        out[f"tail/{name}"] = p
    if model.tail.feat_shift is not None:
        out["tail/feat_shift"] = model.tail.feat_shift
        out["tail/feat_scale"] = model.tail.feat_scale
    if model.readout is not None:
        out["readout"] = model.readout
    return out


def save_checkpoint(model: ViRModel, path, extra: dict | None = None) -> None:
    tensors = _tensors(model)
    index, offset = [], 0
    for name, a in tensors.items():
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "model": model.config.to_dict(),
        "shape_hash": model.config.shape_hash(),
        "rho": [m.rho for m in model.stack.layers],
        "disconnected_pairs": [list(m.disconnected_pair) for m in model.stack.layers],
        "tensors": index,
        "extra": extra or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in tensors.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> tuple[dict, bytes, int]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)", offset=0)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})", offset=16) from None
    return header, raw, 16 + hlen


def load_checkpoint(path) -> tuple[ViRModel, dict]:
    header, raw, base = read_checkpoint_header(path)
    config = ModelConfig.from_dict(header["model"])
    arrays = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if start + 8 * count > len(raw):
            raise FormatError(f"{path}: tensor {entry['name']} runs past the end of the file", offset=start)
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).astype(DTYPE).reshape(entry["shape"])
    layers = []
    for l, spec in enumerate(config.deep.specs):
        layers.append(
            ReservoirMatrices(
                arrays[f"layer{l}/W"],
                arrays[f"layer{l}/V"],
                float(header["rho"][l]),
                tuple(header["disconnected_pairs"][l]),
                spec,
            )
        )
    inter = tuple(arrays[f"inter{l}/U"] for l in range(len(layers) - 1)) if config.deep.mode == "series" else ()
    stack = ReservoirStack(config.deep, tuple(layers), inter, config.activation)
    tail = TailNetwork(
        **{name: arrays[f"tail/{name}"] for name in PARAM_NAMES},
        feat_shift=arrays.get("tail/feat_shift"),
        feat_scale=arrays.get("tail/feat_scale"),
    )
    return ViRModel(config, stack, tail, arrays.get("readout")), header
