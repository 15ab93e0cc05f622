import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ridge_by_gradient_descent
from vir.errors import ConvergenceError, ShapeError, SingularMatrixError
from vir.numerics import (
    RngStream,
    draw_gaussian,
    draw_uniform,
    ridge_solve,
    ridge_solve_normal,
    scale_matrix_to_radius,
    spectral_radius,
)
from vir.topology import RADIUS_SQUARINGS, ReservoirSpec, build_magnitudes, assign_signs, apply_disconnect


def test_spectral_radius_identity():
    assert spectral_radius(np.eye(3), tol=1e-10) == pytest.approx(1.0, abs=1e-10)


def test_spectral_radius_diagonal():
    assert spectral_radius(np.diag([2.0, 0.5]), tol=1e-10) == pytest.approx(2.0, abs=1e-9)


def test_spectral_radius_rejects_non_square():
    with pytest.raises(ShapeError):
        spectral_radius(np.ones((2, 3)))


def test_spectral_radius_convergence_error_carries_estimate():
    # a rotation has a complex pair on the unit circle: the per-step factor never settles
    # for a generic start, but the norm growth is exactly 1
    m = np.array([[0.0, -1.0], [1.0, 0.0]]) @ np.diag([1.0, 0.5])
    with pytest.raises(ConvergenceError) as info:
        spectral_radius(m, tol=1e-14, max_iters=50)
    assert np.isfinite(info.value.estimate)
    assert info.value.estimate == pytest.approx(np.sqrt(0.5), rel=0.2)


def test_spectral_radius_of_unscaled_reservoir_matches_dense_eigensolver():
    spec = ReservoirSpec()
    w = build_magnitudes(spec)
    w = assign_signs(w, RngStream(spec.seed, "signs"))
    w, _ = apply_disconnect(w, RngStream(spec.seed, "disconnect"))
    oracle = np.abs(scipy.linalg.eigvals(w)).max()
    est = spectral_radius(w, tol=1e-13, max_iters=2000, squarings=RADIUS_SQUARINGS)
    assert est == pytest.approx(oracle, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
def test_scaled_radius_hits_target(n, seed, alpha):
    # symmetric matrices have a real dominant eigenvalue
    a = np.random.default_rng(seed).normal(size=(n, n))
    a = a + a.T
    ev = np.sort(np.abs(np.linalg.eigvalsh(a)))
    if ev[-1] - ev[-2] < 1e-3 * ev[-1]:
        return
    scaled, rho = scale_matrix_to_radius(a, alpha, squarings=10)
    assert rho == pytest.approx(alpha, abs=1e-6)
    assert np.abs(np.linalg.eigvalsh(scaled)).max() == pytest.approx(alpha, abs=1e-6)


def test_ridge_identity_cases():
    np.testing.assert_allclose(ridge_solve(np.eye(2), np.eye(2), 0.0), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(ridge_solve(np.eye(2), np.eye(2), 1.0), 0.5 * np.eye(2), atol=1e-14)


def test_ridge_matches_gradient_descent_minimizer():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 8))
    Y = rng.normal(size=(50, 3))
    W = ridge_solve(X, Y, 0.1)
    np.testing.assert_allclose(W, ridge_by_gradient_descent(X, Y, 0.1), atol=1e-3)


def test_ridge_singular_without_regularization():
    X = np.ones((5, 2))
    with pytest.raises(SingularMatrixError, match="k > 0"):
        ridge_solve(X, np.ones((5, 1)), 0.0)


def test_ridge_rejects_row_mismatch_and_negative_k():
    with pytest.raises(ShapeError):
        ridge_solve(np.ones((3, 2)), np.ones((4, 1)), 1.0)
    with pytest.raises(ValueError):
        ridge_solve(np.ones((3, 2)), np.ones((3, 1)), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 5), st.floats(1e-3, 10.0), st.integers(0, 2**32 - 1))
def test_ridge_satisfies_normal_equations(rows, cols, q, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(rows, cols))
    Y = rng.normal(size=(rows, q))
    W = ridge_solve(X, Y, k)
    resid = (k * np.eye(cols) + X.T @ X) @ W - X.T @ Y
    assert np.abs(resid).max() < 1e-8


def test_ridge_normal_form_agrees_with_direct():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 6))
    Y = rng.normal(size=(40, 2))
    np.testing.assert_allclose(ridge_solve_normal(X.T @ X, X.T @ Y, 0.5), ridge_solve(X, Y, 0.5))


def test_uniform_mean():
    assert draw_uniform(RngStream(7, "t"), 0, 1, 10**5).mean() == pytest.approx(0.5, abs=0.01)


def test_gaussian_std():
    assert draw_gaussian(RngStream(7, "t"), 0, 1, 10**5).std() == pytest.approx(1.0, abs=0.02)


def test_draws_repeat_and_labels_differ():
    a = draw_uniform(RngStream(7, "t"), 0, 1, 100)
    np.testing.assert_array_equal(a, draw_uniform(RngStream(7, "t"), 0, 1, 100))
    b = draw_uniform(RngStream(7, "u"), 0, 1, 100)
    assert not np.array_equal(a, b)
    # independence, loosely: no visible correlation between labels
    big_a = draw_gaussian(RngStream(7, "t"), 0, 1, 20000)
    big_b = draw_gaussian(RngStream(7, "u"), 0, 1, 20000)
    assert abs(np.corrcoef(big_a, big_b)[0, 1]) < 0.03


def test_zero_draws_are_empty():
    assert draw_uniform(RngStream(0, "x"), 0, 1, 0).shape == (0,)
    assert draw_gaussian(RngStream(0, "x"), 0, 1, 0).shape == (0,)


def test_invalid_draw_parameters():
    with pytest.raises(ValueError):
        draw_uniform(RngStream(0, "x"), 1, 1, 3)
    with pytest.raises(ValueError):
        draw_gaussian(RngStream(0, "x"), 0, 0, 3)


def test_draws_bit_identical_across_processes():
    code = "from vir.numerics import RngStream, draw_gaussian; print(draw_gaussian(RngStream(11, 'signs'), 0, 1, 5).tobytes().hex())"
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout for _ in range(2)}
    assert len(outs) == 1
    assert outs.pop().strip() == draw_gaussian(RngStream(11, "signs"), 0, 1, 5).tobytes().hex()
