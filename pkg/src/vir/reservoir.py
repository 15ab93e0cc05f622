"""Reservoir dynamics, feature harvesting and deep (series / parallel) stacks.

Two code paths share the same equations:

* per-sequence functions (:func:`step`, :func:`run_sequence`, :func:`harvest`,
  :func:`run_series`, :func:`run_parallel`) operate on one ``(T, K)`` sequence
  and are written for clarity;
* batch functions (:func:`forward_batch`, :func:`backward_batch`,
  :func:`pooled_features`) process ``(B, T, K)`` arrays through the kernels in
  :mod:`vir.kernels` and are what training uses.

A harvested feature vector is laid out as ``[u; x; y_prev; u**2; x**2; y_prev**2]``
with the ``y_prev`` blocks present only when feedback is supplied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .numerics import DTYPE, RngStream
from .topology import ReservoirMatrices, ReservoirSpec, build_reservoir

ACTIVATIONS = ("tanh", "identity")
POOLINGS = ("mean_over_steps", "last_step")


def _check_activation(activation: str) -> bool:
    """Return True for the linear (identity) activation."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
    return activation == "identity"


def _apply(z: np.ndarray, linear: bool) -> np.ndarray:
    return z if linear else np.tanh(z)


# -- single sequences -------------------------------------------------------


def step(
    matrices: ReservoirMatrices,
    x,
    u,
    noise_amp: float = 0.0,
    stream: RngStream | None = None,
    activation: str = "tanh",
) -> np.ndarray:
    """One update x' = f(V u + W x + b), b ~ U(-noise_amp, noise_amp)."""
    linear = _check_activation(activation)
    x = np.asarray(x, dtype=DTYPE)
    u = np.asarray(u, dtype=DTYPE)
    if x.shape != (matrices.n,):
        raise ShapeError(f"state has shape {x.shape}, reservoir has {matrices.n} neurons")
    if u.shape != (matrices.input_dim,):
        raise ShapeError(f"input has shape {u.shape}, reservoir expects {matrices.input_dim}")
    z = matrices.V @ u + matrices.W @ x
    if noise_amp > 0:
        if stream is None:
            raise ValueError("noise_amp > 0 needs an RngStream")
        z = z + stream.generator().uniform(-noise_amp, noise_amp, z.shape)
    return _apply(z, linear)


@dataclass(frozen=True)
class StateTrace:
    """Inputs ``(T, K)`` and states ``(T, N)``; the first ``washout`` steps are not harvested."""

    inputs: np.ndarray
    states: np.ndarray
    washout: int = 0

    def __post_init__(self):
        if self.inputs.shape[0] != self.states.shape[0]:
            raise ShapeError("inputs and states disagree on the number of steps")
        if not 0 <= self.washout < self.steps:
            raise ValueError(f"washout {self.washout} must be in [0, {self.steps})")

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    def to_csv(self, path) -> None:
        k, n = self.inputs.shape[1], self.states.shape[1]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "harvested"] + [f"u{i}" for i in range(k)] + [f"x{i}" for i in range(n)])
            for t in range(self.steps):
                row = [t, int(t >= self.washout)]
                row += [repr(float(v)) for v in self.inputs[t]]
                row += [repr(float(v)) for v in self.states[t]]
                w.writerow(row)


def run_sequence(
    matrices: ReservoirMatrices,
    seq,
    x0=None,
    washout: int = 0,
    noise_amp: float = 0.0,
    stream: RngStream | None = None,
    activation: str = "tanh",
) -> StateTrace:
    seq = np.asarray(seq, dtype=DTYPE)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError(f"need a non-empty (T, K) sequence, got shape {seq.shape}")
    if not 0 <= washout < seq.shape[0]:
        raise ValueError(f"washout {washout} must be in [0, {seq.shape[0]})")
    x = np.zeros(matrices.n) if x0 is None else np.asarray(x0, dtype=DTYPE)
    states = np.empty((seq.shape[0], matrices.n))
    for t, u in enumerate(seq):
        sub = stream.child(t) if (stream is not None and noise_amp > 0) else None
        x = step(matrices, x, u, noise_amp, sub, activation)
        states[t] = x
    return StateTrace(seq.copy(), states, washout)


def feature_dim(k: int, m: int, q: int = 0) -> int:
    return 2 * (k + m + q)


def harvest(trace: StateTrace, feedback=None) -> np.ndarray:
    """Feature rows for the harvested steps, shape ``(T - washout, 2(K + M + Q))``.

    ``feedback`` holds y(t-1) per step, shape ``(T, Q)``.
    """
    blocks = [trace.inputs, trace.states]
    if feedback is not None:
        fb = np.asarray(feedback, dtype=DTYPE)
        if fb.ndim != 2 or fb.shape[0] != trace.steps:
            raise ShapeError(f"feedback must be ({trace.steps}, Q), got {fb.shape}")
        blocks.append(fb)
    lin = np.concatenate(blocks, axis=1)[trace.washout :]
    return np.concatenate([lin, lin * lin], axis=1)


# -- deep stacks -------------------------------------------------------------


@dataclass(frozen=True)
class DeepConfig:
    mode: str = "parallel"
    specs: tuple[ReservoirSpec, ...] = field(default_factory=lambda: (ReservoirSpec(),))

    def __post_init__(self):
        if self.mode not in ("series", "parallel"):
            raise ConfigError(f"deep mode must be 'series' or 'parallel', got {self.mode!r}")
        if len(self.specs) < 1:
            raise ConfigError("a deep configuration needs at least one layer")
        if self.mode == "parallel" and len({s.input_dim for s in self.specs}) != 1:
            raise ConfigError("parallel branches must share the input dimension")

    @property
    def layers(self) -> int:
        return len(self.specs)

    @classmethod
    def uniform(cls, mode: str, layers: int, spec: ReservoirSpec | None = None) -> DeepConfig:
        """``layers`` copies of one spec with seeds spec.seed, spec.seed + 1, ..."""
        spec = spec or ReservoirSpec()
        return cls(mode, tuple(spec.replace(seed=spec.seed + i) for i in range(layers)))


def inter_weights(spec: ReservoirSpec, out_dim: int, stream: RngStream) -> np.ndarray:
    """Fixed map U from ``[y(t-1); x(t); y(t-1)**2; x(t)**2]`` to the next layer's input.

    Drawn like V (sparse, uniform in (-1, 1), times the input scaling) and
    divided by sqrt(expected nonzeros per row) so that outputs stay O(1).
    """
    cols = 2 * (out_dim + spec.n)
    mask = stream.child("mask").generator().random((out_dim, cols)) < spec.input_sparsity
    values = stream.child("values").generator().uniform(-1.0, 1.0, (out_dim, cols))
    scale = spec.input_scaling / np.sqrt(spec.input_sparsity * cols)
    return np.where(mask, values * scale, 0.0)


@dataclass(frozen=True)
class ReservoirStack:
    """Fixed part of a (possibly deep) model: reservoirs plus series inter-weights."""

    config: DeepConfig
    layers: tuple[ReservoirMatrices, ...]
    inter: tuple[np.ndarray, ...] = ()
    activation: str = "tanh"

    def __post_init__(self):
        _check_activation(self.activation)
        if len(self.layers) != self.config.layers:
            raise ConfigError("layer count disagrees with the configuration")
        if self.config.mode == "series":
            if len(self.inter) != len(self.layers) - 1:
                raise ConfigError(f"series stack needs {len(self.layers) - 1} inter-weight matrices")
            for l, u in enumerate(self.inter):
                k_next = self.layers[l + 1].input_dim
                want = (k_next, 2 * (k_next + self.layers[l].n))
                if u.shape != want:
                    raise ConfigError(f"inter-weights {l + 1} have shape {u.shape}, expected {want}")

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def readouts(self) -> int:
        """Number of trainable readouts: one per branch in parallel, one in series."""
        return len(self.layers) if self.mode == "parallel" else 1

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def feature_dim(self) -> int:
        last = self.layers[-1]
        return feature_dim(last.input_dim, last.n)

    @property
    def linear(self) -> bool:
        return self.activation == "identity"


def build_stack(config: DeepConfig, activation: str = "tanh") -> ReservoirStack:
    layers = tuple(build_reservoir(s) for s in config.specs)
    inter = ()
    if config.mode == "series":
        inter = tuple(
            inter_weights(config.specs[l], config.specs[l + 1].input_dim, RngStream(config.specs[l].seed, "inter-weights"))
            for l in range(config.layers - 1)
        )
    return ReservoirStack(config, layers, inter, activation)


def single_stack(matrices: ReservoirMatrices, activation: str = "tanh") -> ReservoirStack:
    return ReservoirStack(DeepConfig("parallel", (matrices.spec,)), (matrices,), (), activation)


def series_outputs(U: np.ndarray, states: np.ndarray) -> np.ndarray:
    """y(t) = U [y(t-1); x(t); y(t-1)**2; x(t)**2] from y(-1) = 0, for states ``(T, N)``."""
    k = U.shape[0]
    y = np.zeros(k)
    out = np.empty((states.shape[0], k))
    for t, x in enumerate(states):
        y = U @ np.concatenate([y, x, y * y, x * x])
        out[t] = y
    return out


def run_series(stack: ReservoirStack, seq, washout: int = 0, inter=None) -> StateTrace:
    """Feed the sequence through the stack; returns the last layer's trace.

    The returned trace's inputs are that layer's own inputs (y of the previous
    layer, or u for a one-layer stack), so ``harvest`` of it gives the features
    read by the trainable readout.
    """
    if stack.mode != "series" and stack.config.layers > 1:
        raise ConfigError("run_series needs a series stack")
    inter = stack.inter if inter is None else tuple(inter)
    cur = np.asarray(seq, dtype=DTYPE)
    trace = None
    for l, m in enumerate(stack.layers):
        if cur.shape[1] != m.input_dim:
            raise ConfigError(f"layer {l + 1} expects inputs of width {m.input_dim}, got {cur.shape[1]}")
        trace = run_sequence(m, cur, washout=washout if l == len(stack.layers) - 1 else 0, activation=stack.activation)
        if l < len(stack.layers) - 1:
            cur = series_outputs(inter[l], trace.states)
    return trace


def run_parallel(stack: ReservoirStack, seq, washout: int = 0) -> list[StateTrace]:
    """One trace per branch, all driven by the same sequence."""
    return [run_sequence(m, seq, washout=washout, activation=stack.activation) for m in stack.layers]


def mean_combiner(outputs) -> np.ndarray:
    """Arithmetic mean of branch outputs (any array shape, stacked on axis 0)."""
    outs = [np.asarray(o, dtype=DTYPE) for o in outputs]
    if not outs:
        raise ValueError("nothing to combine")
    return np.sum(outs, axis=0) / len(outs)


# -- batched path ------------------------------------------------------------


@dataclass
class BatchCache:
    """Everything :func:`backward_batch` needs. Arrays are time-major ``(T, B, ...)``."""

    inputs: list  # per layer, (T, B, K_l)
    states: list  # per layer, (T, B, N_l)


def _time_major(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=DTYPE)
    if u.ndim != 3:
        raise ShapeError(f"expected a (B, T, K) batch, got shape {u.shape}")
    return np.ascontiguousarray(u.transpose(1, 0, 2))


def _drive(m: ReservoirMatrices, inp: np.ndarray) -> np.ndarray:
    if inp.shape[2] != m.input_dim:
        raise ShapeError(f"reservoir expects inputs of width {m.input_dim}, got {inp.shape[2]}")
    return np.ascontiguousarray(inp @ m.V.T)


def _series_outputs_batch(U: np.ndarray, states: np.ndarray) -> np.ndarray:
    T, B, _ = states.shape
    k = U.shape[0]
    Uy, Ux, Uy2, Ux2 = np.split(U, [k, k + states.shape[2], 2 * k + states.shape[2]], axis=1)
    ys = np.empty((T, B, k))
    y = np.zeros((B, k))
    for t in range(T):
        x = states[t]
        y = y @ Uy.T + x @ Ux.T + (y * y) @ Uy2.T + (x * x) @ Ux2.T
        ys[t] = y
    return ys


def forward_batch(stack: ReservoirStack, u) -> BatchCache:
    """Run a ``(B, T, K)`` batch, keeping every state for backpropagation.

    Readout r reads ``cache.inputs[i]`` and ``cache.states[i]`` where i = r for
    a parallel stack and i = L - 1 for a series stack.
    """
    cur = _time_major(u)
    inputs, states = [], []
    for l, m in enumerate(stack.layers):
        x = kernels.scan_states(m.W, _drive(m, cur), stack.linear)
        inputs.append(cur)
        states.append(x)
        if stack.mode == "series" and l < len(stack.layers) - 1:
            cur = _series_outputs_batch(stack.inter[l], x)
    return BatchCache(inputs, states)


def readout_sources(stack: ReservoirStack, cache: BatchCache) -> list[tuple[np.ndarray, np.ndarray]]:
    if stack.mode == "series":
        return [(cache.inputs[-1], cache.states[-1])]
    return list(zip(cache.inputs, cache.states))


def _series_outputs_backward(U, states, ys, g_ys):
    """Backprop through :func:`_series_outputs_batch`; returns dL/dstates."""
    T, B, n = states.shape
    k = U.shape[0]
    Uy, Ux, Uy2, Ux2 = np.split(U, [k, k + n, 2 * k + n], axis=1)
    g_states = np.empty_like(states)
    carry = np.zeros((B, k))
    for t in range(T - 1, -1, -1):
        g = g_ys[t] + carry
        x = states[t]
        g_states[t] = g @ Ux + 2.0 * x * (g @ Ux2)
        if t > 0:
            y_prev = ys[t - 1]
            carry = g @ Uy + 2.0 * y_prev * (g @ Uy2)
    return g_states


def backward_batch(stack: ReservoirStack, cache: BatchCache, grads) -> np.ndarray:
    """Gradient w.r.t. the ``(B, T, K)`` input batch.

    ``grads`` has one ``(g_inputs, g_states)`` pair per readout, both
    time-major and shaped like the corresponding readout source.
    """
    linear = stack.linear
    if stack.mode == "parallel":
        g_u = None
        for m, x, (g_in, g_x) in zip(stack.layers, cache.states, grads):
            g_drive = kernels.scan_backward(m.W, x, np.ascontiguousarray(g_x), linear)
            g = g_in + g_drive @ m.V
            g_u = g if g_u is None else g_u + g
        return g_u.transpose(1, 0, 2)
    (g_in, g_x), = grads
    for l in range(len(stack.layers) - 1, -1, -1):
        m = stack.layers[l]
        g_drive = kernels.scan_backward(m.W, cache.states[l], np.ascontiguousarray(g_x), linear)
        g_in = g_in + g_drive @ m.V
        if l == 0:
            break
        # g_in is dL/dy of layer l-1; push it through that layer's output map
        g_x = _series_outputs_backward(stack.inter[l - 1], cache.states[l - 1], cache.inputs[l], g_in)
        g_in = np.zeros_like(cache.inputs[l - 1])
    return g_in.transpose(1, 0, 2)


def _pool_weights(T: int, washout: int, pooling: str) -> np.ndarray:
    if pooling not in POOLINGS:
        raise ValueError(f"unknown pooling {pooling!r}; choose from {POOLINGS}")
    if not 0 <= washout < T:
        raise ValueError(f"washout {washout} must be in [0, {T})")
    w = np.zeros(T)
    if pooling == "last_step":
        w[-1] = 1.0
    else:
        w[washout:] = 1.0 / (T - washout)
    return w


def pool_source(inp: np.ndarray, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Pooled ``[u; x; u**2; x**2]`` features ``(B, F)`` from time-major arrays."""
    mu = np.tensordot(weights, inp, axes=1)
    mx = np.tensordot(weights, x, axes=1)
    mu2 = np.tensordot(weights, inp * inp, axes=1)
    mx2 = np.tensordot(weights, x * x, axes=1)
    return np.concatenate([mu, mx, mu2, mx2], axis=1)


def pool_source_backward(inp, x, weights, g_f):
    """Split dL/dfeatures into time-major dL/dinputs and dL/dstates."""
    k = inp.shape[2]
    n = x.shape[2]
    gu, gx, gu2, gx2 = np.split(g_f, [k, k + n, 2 * k + n], axis=1)
    w = weights[:, None, None]
    g_inp = w * (gu[None] + 2.0 * inp * gu2[None])
    g_x = w * (gx[None] + 2.0 * x * gx2[None])
    return g_inp, g_x


def pooled_features(
    stack: ReservoirStack,
    u,
    washout: int = 0,
    pooling: str = "mean_over_steps",
    chunk: int = 256,
) -> np.ndarray:
    """Pooled features ``(R, B, F)`` for a ``(B, T, K)`` batch, processed in chunks.

    Mean pooling over single or parallel reservoirs streams through
    ``scan_pooled`` and never stores the full state history.
    """
    u = np.asarray(u, dtype=DTYPE)
    if u.ndim != 3:
        raise ShapeError(f"expected a (B, T, K) batch, got shape {u.shape}")
    B, T, _ = u.shape
    weights = _pool_weights(T, washout, pooling)
    out = np.empty((stack.readouts, B, stack.feature_dim))
    for s in range(0, B, chunk):
        part = u[s : s + chunk]
        if stack.mode == "parallel" and pooling == "mean_over_steps":
            inp = _time_major(part)
            h = inp[washout:]
            mu, mu2 = h.mean(axis=0), (h * h).mean(axis=0)
            for r, m in enumerate(stack.layers):
                sx, sx2, _ = kernels.scan_pooled(m.W, _drive(m, inp), washout, stack.linear)
                out[r, s : s + chunk] = np.concatenate([mu, sx / (T - washout), mu2, sx2 / (T - washout)], axis=1)
        else:
            cache = forward_batch(stack, part)
            for r, (inp, x) in enumerate(readout_sources(stack, cache)):
                out[r, s : s + chunk] = pool_source(inp, x, weights)
    return out


__all__ = [
    "ACTIVATIONS",
    "POOLINGS",
    "BatchCache",
    "DeepConfig",
    "ReservoirStack",
    "StateTrace",
    "backward_batch",
    "build_stack",
    "feature_dim",
    "forward_batch",
    "harvest",
    "inter_weights",
    "mean_combiner",
    "pool_source",
    "pool_source_backward",
    "pooled_features",
    "readout_sources",
    "run_parallel",
    "run_sequence",
    "run_series",
    "series_outputs",
    "single_stack",
    "step",
]
