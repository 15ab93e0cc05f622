"""Graph, dynamical and robustness diagnostics.

Graphs are boolean adjacency matrices (``numpy`` arrays, symmetric). The
dynamical measures accept either a :class:`~vir.topology.ReservoirMatrices`
or a plain ``(W, V)`` pair, so hand-made systems (a 1-neuron contraction, a
shift register) can be measured without going through the topology builder.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConnectivityError, DegenerateError, ShapeError
from .numerics import DTYPE, RngStream, ridge_solve
from .patches import CORRUPTIONS, CorruptionKind, ImageBatch, corrupt
from .topology import ReservoirMatrices, ReservoirSpec, build_reservoir, with_input_scaling, with_radius

# -- graphs ------------------------------------------------------------------


def _graph(adj) -> np.ndarray:
    a = np.asarray(adj).astype(bool)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    a = a | a.T
    np.fill_diagonal(a, False)
    return a


def bfs_distances(adj) -> np.ndarray:
    """All-pairs hop distances (``inf`` when unreachable).

    Level-synchronous BFS from every source at once: each level is one
    boolean matrix product, which is cheap for the dense, small-diameter
    graphs a reservoir produces.
    """
    a = _graph(adj)
    n = a.shape[0]
    af = a.astype(DTYPE)
    dist = np.full((n, n), np.inf)
    reached = np.eye(n, dtype=bool)
    frontier = reached.copy()
    d = 0
    while frontier.any():
        dist[frontier] = d
        d += 1
        frontier = ((frontier.astype(DTYPE) @ af) > 0) & ~reached
        reached |= frontier
    return dist


def average_path_length(adj, include_self: bool = False) -> float:
    """Mean geodesic distance over vertex pairs.

    ``include_self`` adds the M zero-length pairs (i, i), normalizing by
    M(M+1)/2 instead of M(M-1)/2.
    """
    dist = bfs_distances(adj)
    n = dist.shape[0]
    if not np.isfinite(dist).all():
        i, j = map(int, np.argwhere(~np.isfinite(dist))[0])
        raise ConnectivityError("graph is disconnected", (i, j))
    total = dist[np.triu_indices(n, 1)].sum()
    pairs = n * (n + 1) / 2 if include_self else n * (n - 1) / 2
    return float(total / pairs)


def clustering_coefficient(adj) -> tuple[np.ndarray, float]:
    """Local clustering C_i = 2 e_i / (k_i (k_i - 1)) and its mean; C_i = 0 when k_i < 2."""
    a = _graph(adj).astype(DTYPE)
    k = a.sum(axis=1)
    links = ((a @ a) * a).sum(axis=1) / 2.0
    denom = k * (k - 1)
    c = np.divide(2.0 * links, denom, out=np.zeros_like(links), where=denom > 0)
    return c, float(c.mean())


def edge_count(adj) -> int:
    return int(_graph(adj).sum() // 2)


def ring_lattice(n: int, degree: int) -> np.ndarray:
    """Each vertex joined to its ``degree // 2`` nearest neighbours on either side."""
    if degree < 0 or degree % 2 or degree >= n:
        raise ValueError(f"ring lattice degree must be even and in [0, n), got {degree} for n={n}")
    a = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    for s in range(1, degree // 2 + 1):
        a[idx, (idx + s) % n] = True
        a[(idx + s) % n, idx] = True
    return a


def regular_baseline(adj) -> np.ndarray:
    """Ring lattice with the largest even degree not above the graph's mean degree."""
    a = _graph(adj)
    n = a.shape[0]
    mean_degree = 2.0 * edge_count(a) / n
    degree = min(2 * int(mean_degree // 2), n - 1 - (n - 1) % 2)
    return ring_lattice(n, degree)


def random_graph(n: int, edges: int, stream: RngStream) -> np.ndarray:
    """Uniform random simple graph with exactly ``edges`` edges."""
    total = n * (n - 1) // 2
    if not 0 <= edges <= total:
        raise ValueError(f"cannot place {edges} edges among {n} vertices")
    iu = np.triu_indices(n, 1)
    pick = stream.generator().choice(total, size=edges, replace=False)
    a = np.zeros((n, n), dtype=bool)
    a[iu[0][pick], iu[1][pick]] = True
    return a | a.T


@dataclass(frozen=True)
class SmallWorldRow:
    name: str
    path_length: float
    clustering: float
    path_ratio: float  # l / l_0
    clustering_ratio: float  # C / C_0
    delta: float


@dataclass(frozen=True)
class SmallWorldReport:
    l_G: float
    C_bar: float
    l_0: float
    C_0: float
    delta: float
    baseline: str
    rows: tuple[SmallWorldRow, ...] = field(default=())

    def row(self, name: str) -> SmallWorldRow:
        return next(r for r in self.rows if r.name == name)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_markdown(self) -> str:
        lines = [
            "| network | C/C0 | l/l0 | delta |",
            "|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(f"| {r.name} | {r.clustering_ratio:.4f} | {r.path_ratio:.4f} | {r.delta:.4f} |")
        lines.append("")
        lines.append(f"baseline: {self.baseline}")
        return "\n".join(lines)


def small_worldness(adj, regular=None, random=None, stream: RngStream | None = None) -> SmallWorldReport:
    """delta = (C / C_0) / (l / l_0) against a ring-lattice baseline.

    Rows cover the graph itself, the regular baseline (delta = 1 by
    construction) and a uniform random graph with the same edge count, each
    measured against the same baseline.
    """
    g = _graph(adj)
    reg = regular_baseline(g) if regular is None else _graph(regular)
    if random is None:
        random = random_graph(g.shape[0], edge_count(g), stream or RngStream(0, "random-graph"))
    rnd = _graph(random)
    l0 = average_path_length(reg)
    c0 = clustering_coefficient(reg)[1]

    def measure(name, a):
        l = average_path_length(a)
        c = clustering_coefficient(a)[1]
        return SmallWorldRow(name, l, c, l / l0, c / c0, (c / c0) / (l / l0))

    rows = (measure("ours", g), measure("regular", reg), measure("random", rnd))
    ours = rows[0]
    degree = int(reg[0].sum())
    return SmallWorldReport(
        l_G=ours.path_length,
        C_bar=ours.clustering,
        l_0=l0,
        C_0=c0,
        delta=ours.delta,
        baseline=f"ring lattice, n={g.shape[0]}, degree={degree} (largest even degree <= mean degree)",
        rows=rows,
    )


# -- dynamics ----------------------------------------------------------------


def _wv(system) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(system, ReservoirMatrices):
        return system.W, system.V
    W, V = system
    W = np.ascontiguousarray(W, dtype=DTYPE)
    V = np.asarray(V, dtype=DTYPE)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or V.ndim != 2 or V.shape[0] != W.shape[0]:
        raise ShapeError(f"incompatible W {W.shape} and V {V.shape}")
    return W, V


@dataclass(frozen=True)
class LyapunovEstimate:
    lam: float
    steps: int
    gamma0: float


def lyapunov_exponent(
    system,
    steps: int = 5000,
    gamma0: float = 1e-8,
    washout: int = 100,
    stream: RngStream | None = None,
    activation: str = "tanh",
    inputs=None,
) -> LyapunovEstimate:
    """Largest Lyapunov exponent by two-trajectory renormalization.

    Both trajectories see the same N(0, 1) input stream; after every measured
    step the offset is rescaled back to ``gamma0``. The result is the mean
    log growth per step.
    """
    W, V = _wv(system)
    if steps < 1 or washout < 0:
        raise ValueError("need steps >= 1 and washout >= 0")
    if not gamma0 > 0:
        raise ValueError("gamma0 must be > 0")
    T = washout + steps
    if inputs is None:
        stream = stream or RngStream(0, "lyapunov-input")
        inputs = stream.generator().normal(0.0, 1.0, (T, V.shape[1]))
    drive = np.ascontiguousarray(np.asarray(inputs, dtype=DTYPE) @ V.T)
    total, measured, collapsed = kernels.lyapunov_run(W, drive, gamma0, washout, activation == "identity")
    if collapsed:
        raise DegenerateError(f"perturbation underflowed to zero after {measured} measured steps")
    return LyapunovEstimate(total / measured, measured, gamma0)


@dataclass(frozen=True)
class MemoryCapacityCurve:
    values: np.ndarray  # MC_tau for tau = 1..T_max

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def t_max(self) -> int:
        return len(self.values)


def _squared_correlation(a: np.ndarray, b: np.ndarray) -> float:
    va, vb = a.var(), b.var()
    if va == 0 or vb == 0:
        return 0.0
    cov = ((a - a.mean()) * (b - b.mean())).mean()
    return float(min(max(cov * cov / (va * vb), 0.0), 1.0))


def memory_capacity(
    system,
    t_max: int | None = None,
    train_len: int = 2000,
    test_len: int = 1000,
    ridge_k: float = 1e-6,
    washout: int = 100,
    stream: RngStream | None = None,
    activation: str = "tanh",
) -> MemoryCapacityCurve:
    """Recall of past scalar inputs u(t - tau) from the current state, tau = 1..t_max.

    One ridge readout per delay is fitted on ``train_len`` steps and scored
    on the following ``test_len`` steps by squared correlation.
    """
    W, V = _wv(system)
    n = W.shape[0]
    if V.shape[1] != 1:
        raise ShapeError(f"memory capacity drives a scalar input; V has {V.shape[1]} columns")
    t_max = int(round(1.5 * n)) if t_max is None else t_max
    if t_max < 1 or train_len < 1 or test_len < 2:
        raise ValueError("need t_max >= 1, train_len >= 1 and test_len >= 2")
    start = washout + t_max
    T = start + train_len + test_len
    stream = stream or RngStream(0, "memory-input")
    u = stream.generator().normal(0.0, 1.0, T)
    drive = np.ascontiguousarray((u[:, None] @ V.T)[:, None, :])
    states = kernels.scan_states(W, drive, activation == "identity")[:, 0, :]
    times = np.arange(start, T)
    X = states[times]
    # column tau-1 holds u(t - tau)
    Y = u[times[:, None] - np.arange(1, t_max + 1)[None, :]]
    return MemoryCapacityCurve(recall_scores(X, Y, train_len, ridge_k))


def recall_scores(X, Y, train_len: int, ridge_k: float = 1e-6) -> np.ndarray:
    """Squared correlation between each target column and its ridge reconstruction.

    Rows up to ``train_len`` fit the readouts, the rest score them. States
    and targets are centred on the training rows (an unpenalized bias), which
    makes the scores invariant to affine rescaling of any target column.
    """
    X = np.asarray(X, dtype=DTYPE)
    Y = np.asarray(Y, dtype=DTYPE)
    x_mu, y_mu = X[:train_len].mean(axis=0), Y[:train_len].mean(axis=0)
    Xc, Yc = X - x_mu, Y - y_mu
    Wout = ridge_solve(Xc[:train_len], Yc[:train_len], ridge_k)
    pred = Xc[train_len:] @ Wout
    Yte = Y[train_len:]
    return np.array([_squared_correlation(Yte[:, j], pred[:, j]) for j in range(Y.shape[1])])


def diagnostic_reservoir(spec: ReservoirSpec, n: int = 100, input_dim: int = 1) -> ReservoirMatrices:
    """Default topology at sweep size with a scalar input."""
    return build_reservoir(spec.resized(n).replace(input_dim=input_dim))


@dataclass(frozen=True)
class SweepPoint:
    rho: float
    input_scaling: float
    lam: float = float("nan")
    mc: float = float("nan")


def sweep(
    base: ReservoirMatrices,
    rhos,
    scalings=(1.0,),
    lyapunov: bool = True,
    memory: bool = True,
    lyapunov_steps: int = 5000,
    mc_kwargs: dict | None = None,
    seed: int = 0,
) -> list[SweepPoint]:
    """Evaluate LLE and/or MC over a (rho, input scaling) grid, rho ascending."""
    points = []
    for s in scalings:
        scaled = with_input_scaling(base, s)
        for rho in sorted(rhos):
            m = with_radius(scaled, rho)
            lam = mc = float("nan")
            if lyapunov:
                lam = lyapunov_exponent(m, steps=lyapunov_steps, stream=RngStream(seed, "lyapunov-input")).lam
            if memory:
                mc = memory_capacity(m, stream=RngStream(seed, "memory-input"), **(mc_kwargs or {})).total
            points.append(SweepPoint(float(rho), float(s), lam, mc))
    return points


def write_sweep_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "IS", "lambda", "MC"])
        for p in points:
            w.writerow([repr(p.rho), repr(p.input_scaling), repr(p.lam), repr(p.mc)])


# -- robustness ----------------------------------------------------------------

SEVERITIES = (1, 2, 3, 4, 5)


def ce_from_errors(clean_error: float, errors: dict) -> tuple[dict, float]:
    """CE_c = sum_s E_{s,c} - E_clean per type, and their mean."""
    per_type = {}
    for name, errs in errors.items():
        errs = list(errs)
        if len(errs) != len(SEVERITIES):
            raise ValueError(f"{name}: need errors for severities 1..5, got {len(errs)}")
        per_type[name] = float(sum(errs) - clean_error)
    if not per_type:
        raise ValueError("no corruption types given")
    mean = sum(per_type[k] for k in sorted(per_type)) / len(per_type)
    return per_type, mean


def corrupted_sets(clean: ImageBatch, seed: int = 0, kinds=CORRUPTIONS) -> dict[str, list[ImageBatch]]:
    out = {}
    for name in kinds:
        out[name] = [
            ImageBatch(corrupt(clean.images, CorruptionKind(name, s), RngStream(seed, f"corrupt/{name}/{s}")), clean.labels, clean.num_classes)
            for s in SEVERITIES
        ]
    return out


@dataclass(frozen=True)
class CorruptionReport:
    clean_error: float
    errors: dict  # type -> [E_1..E_5]
    ce: dict  # type -> CE_c
    mean_ce: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["corruption", "clean_error"] + [f"error_s{s}" for s in SEVERITIES] + ["CE"])
            for name in sorted(self.ce):
                w.writerow([name, repr(self.clean_error)] + [repr(e) for e in self.errors[name]] + [repr(self.ce[name])])
            w.writerow(["mean", repr(self.clean_error)] + [""] * len(SEVERITIES) + [repr(self.mean_ce)])


def corruption_error(error_fn, clean: ImageBatch, corrupted: dict) -> CorruptionReport:
    """``error_fn(batch) -> top-1 error``; ``corrupted`` maps type -> five batches."""
    clean_error = float(error_fn(clean))
    errors = {}
    for name, sets in corrupted.items():
        if len(sets) != len(SEVERITIES):
            raise ValueError(f"{name}: need test sets for severities 1..5, got {len(sets)}")
        errors[name] = [float(error_fn(b)) for b in sets]
    ce, mean = ce_from_errors(clean_error, errors)
    return CorruptionReport(clean_error, errors, ce, mean)


__all__ = [
    "CorruptionReport",
    "LyapunovEstimate",
    "MemoryCapacityCurve",
    "SEVERITIES",
    "SmallWorldReport",
    "SmallWorldRow",
    "SweepPoint",
    "average_path_length",
    "bfs_distances",
    "ce_from_errors",
    "clustering_coefficient",
    "corrupted_sets",
    "corruption_error",
    "diagnostic_reservoir",
    "edge_count",
    "lyapunov_exponent",
    "memory_capacity",
    "random_graph",
    "recall_scores",
    "regular_baseline",
    "ring_lattice",
    "small_worldness",
    "sweep",
    "write_sweep_csv",
]

