"""Construction of the nearly fully connected reservoir and its input matrix.

Indexing convention: ``W[i, j]`` is the weight from neuron ``j`` to neuron
``i``, so the state update reads ``x' = f(V u + W x)``. The ring and jump rules
are written with 1-based neuron labels in the literature; everything here is
0-based, so the ring entry "W[q+1][q]" becomes ``W[q, q-1]`` and the closing
entry "W[1][N]" becomes ``W[0, N-1]``.

Build order is magnitudes -> signs -> disconnect -> spectral scaling, and each
random step reads its own labelled stream so the result is a pure function of
:class:`ReservoirSpec`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, SpecError
from .numerics import DTYPE, RngStream, as_matrix, scale_matrix_to_radius

#: squarings used when measuring |lambda_max| of reservoir matrices; see
#: :func:`vir.numerics.spectral_radius`
RADIUS_SQUARINGS = 40


@dataclass(frozen=True)
class ReservoirSpec:
    n: int = 1000
    r_i: float = 0.05
    r_j: float = 0.5
    r_k: float = 0.08
    jump: int = 137
    alpha: float = 0.9
    input_dim: int = 256
    input_sparsity: float = 0.05
    input_scaling: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise SpecError(f"need at least 2 neurons, got n={self.n}")
        if not 1 < self.jump < self.n:
            raise SpecError(f"jump size must satisfy 1 < jump < n, got jump={self.jump}, n={self.n}")
        for name in ("r_i", "r_j", "r_k"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise SpecError(f"{name} must lie in (0, 1], got {v}")
        if not 0 < self.alpha < 1:
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.input_dim < 1:
            raise SpecError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 0 < self.input_sparsity <= 1:
            raise SpecError(f"input_sparsity must lie in (0, 1], got {self.input_sparsity}")
        if not self.input_scaling > 0:
            raise SpecError(f"input_scaling must be > 0, got {self.input_scaling}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ReservoirSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown reservoir keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> ReservoirSpec:
        return type(self)(**{**self.to_dict(), **changes})

    def resized(self, n: int) -> ReservoirSpec:
        """Same spec at a different size, keeping jump/n fixed."""
        jump = min(max(2, round(self.jump * n / self.n)), n - 1)
        return self.replace(n=n, jump=jump)


@dataclass(frozen=True)
class ReservoirMatrices:
    W: np.ndarray
    V: np.ndarray
    rho: float
    disconnected_pair: tuple[int, int]
    spec: ReservoirSpec

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[1]


def jump_pairs(n: int, jump: int) -> list[tuple[int, int]]:
    """0-based (a, a + jump) pairs of the jump chain, stopping before n."""
    pairs = []
    a = 0
    while a + jump <= n - 1:
        pairs.append((a, a + jump))
        a += jump
    return pairs


def build_magnitudes(spec: ReservoirSpec) -> np.ndarray:
    n = spec.n
    if spec.jump >= n:
        raise SpecError(f"jump size {spec.jump} must be smaller than n={n}")
    w = np.full((n, n), spec.r_k, dtype=DTYPE)
    q = np.arange(1, n)
    w[q, q - 1] = spec.r_i
    w[0, n - 1] = spec.r_i
    # jumps are written after the ring, so they win on collisions
    for a, b in jump_pairs(n, spec.jump):
        w[a, b] = spec.r_j
        w[b, a] = spec.r_j
    return w


def assign_signs(magnitudes, stream: RngStream) -> np.ndarray:
    m = as_matrix(magnitudes, "magnitudes")
    # e ~ U(0, 1]; e < 0.5 flips the sign
    e = 1.0 - stream.generator().random(m.shape)
    return np.where(e < 0.5, -m, m)


def apply_disconnect(W, stream: RngStream) -> tuple[np.ndarray, tuple[int, int]]:
    w = as_matrix(W, "W")
    n = w.shape[0]
    if w.shape[1] != n:
        raise ShapeError(f"W must be square, got {w.shape}")
    if n < 2:
        raise SpecError("disconnecting a pair needs at least 2 neurons")
    # uniform over the n(n-1) off-diagonal cells
    flat = int(stream.generator().integers(0, n * (n - 1)))
    i, r = divmod(flat, n - 1)
    j = r if r < i else r + 1
    out = w.copy()
    out[i, j] = 0.0
    out[j, i] = 0.0
    return out, (i, j)


def scale_to_radius(W, alpha: float) -> tuple[np.ndarray, float]:
    if not alpha > 0:
        raise SpecError(f"alpha must be > 0, got {alpha}")
    w = as_matrix(W, "W")
    if w.shape[0] != w.shape[1]:
        raise ShapeError(f"W must be square, got {w.shape}")
    return scale_matrix_to_radius(w, alpha, RADIUS_SQUARINGS)


def build_input_matrix(spec: ReservoirSpec, stream: RngStream) -> np.ndarray:
    shape = (spec.n, spec.input_dim)
    mask = stream.child("mask").generator().random(shape) < spec.input_sparsity
    values = stream.child("values").generator().uniform(-1.0, 1.0, shape)
    return np.where(mask, values * spec.input_scaling, 0.0)


def build_reservoir(spec: ReservoirSpec) -> ReservoirMatrices:
    w = build_magnitudes(spec)
    w = assign_signs(w, RngStream(spec.seed, "signs"))
    w, pair = apply_disconnect(w, RngStream(spec.seed, "disconnect"))
    w, rho = scale_to_radius(w, spec.alpha)
    v = build_input_matrix(spec, RngStream(spec.seed, "input-weights"))
    return ReservoirMatrices(W=w, V=v, rho=rho, disconnected_pair=pair, spec=spec)


def with_radius(matrices: ReservoirMatrices, rho: float) -> ReservoirMatrices:
    """Rescale W to an arbitrary spectral radius, e.g. rho > 1 for sweeps."""
    w, measured = scale_to_radius(matrices.W, rho)
    return ReservoirMatrices(w, matrices.V, measured, matrices.disconnected_pair, matrices.spec)


def with_input_scaling(matrices: ReservoirMatrices, scaling: float) -> ReservoirMatrices:
    v = matrices.V * (scaling / matrices.spec.input_scaling)
    spec = matrices.spec.replace(input_scaling=scaling)
    return ReservoirMatrices(matrices.W, v, matrices.rho, matrices.disconnected_pair, spec)


def undirected_adjacency(W, include_self_loops: bool = False) -> np.ndarray:
    """Boolean adjacency: {i, j} is an edge iff W[i, j] or W[j, i] is nonzero."""
    w = as_matrix(W, "W")
    if w.shape[0] != w.shape[1]:
        raise ShapeError(f"W must be square, got {w.shape}")
    nz = w != 0
    adj = nz | nz.T
    if not include_self_loops:
        np.fill_diagonal(adj, False)
    return adj


# -- portable export -------------------------------------------------------
#
# <name>.bin: uint64 LE column count, then rows*cols float64 LE, row-major.
# reservoir.json: the ReservoirSpec plus realized rho and disconnected pair.


def write_matrix(path, m) -> None:
    a = as_matrix(m)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", a.shape[1]))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: missing column-count header", offset=len(raw))
    (cols,) = struct.unpack_from("<Q", raw, 0)
    body = len(raw) - 8
    if cols == 0 or body % (8 * cols):
        raise FormatError(f"{path}: payload of {body} bytes is not a whole number of {cols}-column rows", offset=8)
    data = np.frombuffer(raw, dtype="<f8", offset=8).astype(DTYPE)
    return data.reshape(-1, cols)


def export_matrices(matrices: ReservoirMatrices, directory, prefix: str = "") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / f"{prefix}W.bin", matrices.W)
    write_matrix(d / f"{prefix}V.bin", matrices.V)
    sidecar = {
        "spec": matrices.spec.to_dict(),
        "rho": matrices.rho,
        "disconnected_pair": list(matrices.disconnected_pair),
        "layout": "uint64 LE column count, then float64 LE row-major; W[i,j] = weight j -> i",
    }
    (d / f"{prefix}reservoir.json").write_text(json.dumps(sidecar, indent=2))


def load_matrices(directory, prefix: str = "") -> ReservoirMatrices:
    d = Path(directory)
    sidecar = json.loads((d / f"{prefix}reservoir.json").read_text())
    spec = ReservoirSpec.from_dict(sidecar["spec"])
    w = read_matrix(d / f"{prefix}W.bin")
    v = read_matrix(d / f"{prefix}V.bin")
    if w.shape != (spec.n, spec.n) or v.shape != (spec.n, spec.input_dim):
        raise FormatError(f"matrix shapes {w.shape}, {v.shape} disagree with the sidecar spec")
    return ReservoirMatrices(w, v, float(sidecar["rho"]), tuple(sidecar["disconnected_pair"]), spec)
