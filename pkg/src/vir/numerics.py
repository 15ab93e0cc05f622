"""Dense linear algebra and reproducible random streams.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Random draws go
through :class:`RngStream`, a (seed, label) pair that always maps to the same
counter-based Philox generator, so the order in which components are built
never changes what they draw.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DegenerateError, ShapeError, SingularMatrixError

DTYPE = np.float64

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RngStream:
    seed: int
    label: str

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *words])
        return np.random.Generator(np.random.Philox(seq))

    def child(self, suffix: str | int) -> RngStream:
        return RngStream(self.seed, f"{self.label}/{suffix}")


def draw_uniform(stream: RngStream, lo: float, hi: float, n: int) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo} and {hi}")
    if n == 0:
        return np.empty(0, dtype=DTYPE)
    return stream.generator().uniform(lo, hi, n)


def draw_gaussian(stream: RngStream, mean: float, std: float, n: int) -> np.ndarray:
    if not std > 0:
        raise ValueError(f"need std > 0, got {std}")
    if n == 0:
        return np.empty(0, dtype=DTYPE)
    return stream.generator().normal(mean, std, n)


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _repeated_square(m: np.ndarray, squarings: int) -> tuple[np.ndarray, float]:
    """Return (B, log_scale) with m^(2^s) = B * exp(2^s * log_scale)."""
    b = m
    log_scale = 0.0
    for i in range(squarings):
        b = b @ b
        nrm = np.linalg.norm(b)
        if nrm == 0.0:
            return b, 0.0
        b = b / nrm
        log_scale += math.log(nrm) / 2.0 ** (i + 1)
    return b, log_scale


def spectral_radius(
    m,
    tol: float = 1e-10,
    max_iters: int = 10_000,
    squarings: int = 0,
) -> float:
    """Estimate |lambda_max| of a square matrix by normalized power iteration.

    Each iteration applies ``m`` and records the growth factor of the
    normalized iterate; the loop stops when two successive estimates differ by
    less than ``tol``.

    Dense random-sign reservoirs have no spectral gap to speak of (the ratio
    of the two largest moduli is often above 0.99), so ``squarings > 0`` runs
    the same iteration on ``m^(2^squarings)``, formed by repeated squaring
    with renormalization, and takes the matching root. That shrinks the
    effective gap ratio to ``r^(2^s)``.

    Raises :class:`ConvergenceError` after ``max_iters`` steps. Its
    ``estimate`` is the average norm growth over all steps, which is still a
    consistent estimate when a complex-conjugate pair dominates and the
    per-step factor oscillates.
    """
    a = as_matrix(m)
    n, k = a.shape
    if n != k:
        raise ShapeError(f"spectral radius needs a square matrix, got {a.shape}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if n == 0:
        raise ShapeError("empty matrix")

    b, log_scale = _repeated_square(a, squarings)
    power = 2.0**squarings
    x = draw_gaussian(RngStream(0, "power-iteration"), 0.0, 1.0, n)
    x /= np.linalg.norm(x)

    prev = None
    log_growth = 0.0
    for it in range(1, max_iters + 1):
        y = b @ x
        nrm = float(np.linalg.norm(y))
        if nrm == 0.0:
            # nilpotent on the current iterate
            return 0.0
        log_growth += math.log(nrm)
        est = math.exp(math.log(nrm) / power + log_scale)
        x = y / nrm
        if prev is not None and abs(est - prev) < tol:
            return est
        prev = est

    growth = math.exp(log_growth / (max_iters * power) + log_scale)
    # oscillation of the per-step factor bounds the error of the averaged estimate
    spread = abs(est - prev) if prev is not None else float("inf")
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations",
        estimate=growth,
        tolerance=max(spread, tol),
    )


def ridge_solve(X, Y, k: float) -> np.ndarray:
    """Solve ``(k I + X^T X) W = X^T Y`` for the readout W."""
    X = as_matrix(X, "X")
    Y = np.asarray(Y, dtype=DTYPE)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    return ridge_solve_normal(X.T @ X, X.T @ Y, k)


def ridge_solve_normal(gram, xty, k: float) -> np.ndarray:
    """Ridge solution from precomputed ``X^T X`` and ``X^T Y``.

    Lets callers accumulate the normal equations over data that does not fit
    in memory at once.
    """
    if k < 0:
        raise ValueError(f"ridge coefficient must be >= 0, got {k}")
    gram = as_matrix(gram, "gram")
    if gram.shape[0] != gram.shape[1]:
        raise ShapeError(f"gram matrix must be square, got {gram.shape}")
    a = gram + k * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=False, check_finite=True)
    except np.linalg.LinAlgError:
        if k == 0:
            raise SingularMatrixError(
                "X^T X is singular; use a ridge coefficient k > 0"
            ) from None
        raise SingularMatrixError(
            f"k I + X^T X is not positive definite at k={k}; increase k"
        ) from None
    if k == 0:
        # Cholesky can succeed on a numerically rank-deficient Gram matrix
        diag = np.diag(factor[0])
        if diag.min() <= diag.max() * 1e-12:
            raise SingularMatrixError("X^T X is singular; use a ridge coefficient k > 0")
    return scipy.linalg.cho_solve(factor, xty)


def scale_matrix_to_radius(m: np.ndarray, alpha: float, squarings: int) -> tuple[np.ndarray, float]:
    radius = _radius_or_fallback(m, squarings)
    if radius == 0.0:
        raise DegenerateError("matrix has zero spectral radius; cannot rescale")
    scaled = m * (alpha / radius)
    return scaled, _radius_or_fallback(scaled, squarings)


#: below this size the radius used for rescaling comes from a dense eigensolver;
#: tiny reservoirs can be close to defective, and repeated squaring then
#: measures the pseudospectrum rather than the spectrum
DENSE_RADIUS_LIMIT = 64


def _radius_or_fallback(m: np.ndarray, squarings: int) -> float:
    if m.shape[0] <= DENSE_RADIUS_LIMIT:
        return float(np.abs(scipy.linalg.eigvals(m)).max())
    try:
        return spectral_radius(m, tol=1e-13, max_iters=2000, squarings=squarings)
    except ConvergenceError as exc:
        log.warning(
            "spectral radius via norm growth (tolerance %.2e): %s", exc.tolerance, exc
        )
        return exc.estimate
