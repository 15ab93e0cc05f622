# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled reservoir kernels.

Every function mirrors one in ``_pykernels.py`` with the same signature and
semantics; ``kernels.py`` picks this module when it imports. Arrays are
row-major float64. BLAS sees them as column-major transposes, which is why
the dgemm calls below read "transposed" relative to the row-major algebra in
the comments.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, sqrt, tanh
from scipy.linalg.cython_blas cimport dcopy, dgemm, dgemv

cnp.import_array()


cdef inline void _activate(double* buf, Py_ssize_t n, bint linear) noexcept nogil:
    cdef Py_ssize_t i
    if not linear:
        for i in range(n):
            buf[i] = tanh(buf[i])


def scan_pooled(const double[:, ::1] W, const double[:, :, ::1] drive,
                Py_ssize_t washout, bint linear=False):
    """Run x(t) = f(drive[t] + x(t-1) W^T) from x = 0 over drive (T, B, N).

    Returns (sum_x, sum_x2, last_x), sums taken over steps t >= washout.
    """
    cdef Py_ssize_t T = drive.shape[0], B = drive.shape[1], N = drive.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sx = np.zeros((B, N))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sx2 = np.zeros((B, N))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.zeros((B, N))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nxt = np.empty((B, N))
    cdef double* px = &x[0, 0]
    cdef double* pn = &nxt[0, 0]
    cdef double* psx = &sx[0, 0]
    cdef double* psx2 = &sx2[0, 0]
    cdef double* tmp
    cdef int n_ = <int>N, b_ = <int>B, size = <int>(B * N), one = 1
    cdef double d_one = 1.0
    cdef Py_ssize_t t, i
    cdef double v
    cdef bint in_x = True
    if B == 0 or N == 0:
        return sx, sx2, x
    for t in range(T):
        with nogil:
            dcopy(&size, <double*>&drive[t, 0, 0], &one, pn, &one)
            if t > 0:
                # nxt += x @ W^T
                dgemm(b"T", b"N", &n_, &b_, &n_, &d_one, <double*>&W[0, 0], &n_, px, &n_, &d_one, pn, &n_)
        if not linear:
            # numpy's SIMD tanh beats libm's scalar one by a wide margin
            if in_x:
                np.tanh(nxt, out=nxt)
            else:
                np.tanh(x, out=x)
        if t >= washout:
            with nogil:
                for i in range(B * N):
                    v = pn[i]
                    psx[i] += v
                    psx2[i] += v * v
        tmp = px
        px = pn
        pn = tmp
        in_x = not in_x
    if in_x:
        return sx, sx2, x
    return sx, sx2, nxt


def scan_states(const double[:, ::1] W, const double[:, :, ::1] drive, bint linear=False):
    """Same recurrence, keeping every state: returns (T, B, N)."""
    cdef Py_ssize_t T = drive.shape[0], B = drive.shape[1], N = drive.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] states = np.empty((T, B, N))
    cdef int n_ = <int>N, b_ = <int>B, size = <int>(B * N), one = 1
    cdef double d_one = 1.0
    cdef Py_ssize_t t
    cdef double* cur
    if T == 0 or B == 0 or N == 0:
        return states
    for t in range(T):
        cur = &states[t, 0, 0]
        with nogil:
            dcopy(&size, <double*>&drive[t, 0, 0], &one, cur, &one)
            if t > 0:
                dgemm(b"T", b"N", &n_, &b_, &n_, &d_one, <double*>&W[0, 0], &n_,
                      &states[t - 1, 0, 0], &n_, &d_one, cur, &n_)
        if not linear:
            np.tanh(states[t], out=states[t])
    return states


def scan_backward(const double[:, ::1] W, const double[:, :, ::1] states,
                  const double[:, :, ::1] grad_states, bint linear=False):
    """Backpropagate through the recurrence.

    ``grad_states[t]`` is dL/dx(t) from everything except x(t+1). Returns
    dL/d(drive) with shape (T, B, N).
    """
    cdef Py_ssize_t T = states.shape[0], B = states.shape[1], N = states.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gdrive = np.empty((T, B, N))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] carry = np.zeros((B, N))
    cdef double* pc = &carry[0, 0]
    cdef double* gd
    cdef const double* xs
    cdef const double* gs
    cdef int n_ = <int>N, b_ = <int>B, size = <int>(B * N), one = 1
    cdef double d_one = 1.0, d_zero = 0.0
    cdef Py_ssize_t t, i
    if T == 0 or B == 0 or N == 0:
        return gdrive
    with nogil:
        for t in range(T - 1, -1, -1):
            gd = &gdrive[t, 0, 0]
            xs = &states[t, 0, 0]
            gs = &grad_states[t, 0, 0]
            # dL/dpre(t) = (g(t) + carry) * f'(pre(t)), f' = 1 - x^2 for tanh
            if linear:
                for i in range(B * N):
                    gd[i] = gs[i] + pc[i]
            else:
                for i in range(B * N):
                    gd[i] = (gs[i] + pc[i]) * (1.0 - xs[i] * xs[i])
            if t > 0:
                # carry = gd @ W
                dgemm(b"N", b"N", &n_, &b_, &n_, &d_one, <double*>&W[0, 0], &n_, gd, &n_, &d_zero, pc, &n_)
    return gdrive


def lyapunov_run(const double[:, ::1] W, const double[:, ::1] drive, double gamma0,
                 Py_ssize_t washout, bint linear=False):
    """Reference and perturbed trajectories under one drive (T, N).

    After washout the perturbed state starts at distance gamma0 along the
    first axis; after every step the log growth ln(gamma_k / gamma0) is
    accumulated and the offset renormalized to gamma0. Returns
    (sum of log growth, number of measured steps, count of collapsed steps).
    """
    cdef Py_ssize_t T = drive.shape[0], N = drive.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.zeros(N)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.zeros(N)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xn = np.empty(N)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yn = np.empty(N)
    cdef double* px = &x[0]
    cdef double* py = &y[0]
    cdef double* pxn = &xn[0]
    cdef double* pyn = &yn[0]
    cdef double* tmp
    cdef int n_ = <int>N, one = 1
    cdef double d_one = 1.0
    cdef Py_ssize_t t, i, measured = 0, collapsed = 0
    cdef double total = 0.0, dist, d, scale
    with nogil:
        for t in range(T):
            if t == washout:
                for i in range(N):
                    py[i] = px[i]
                py[0] += gamma0
            dcopy(&n_, <double*>&drive[t, 0], &one, pxn, &one)
            dgemv(b"T", &n_, &n_, &d_one, <double*>&W[0, 0], &n_, px, &one, &d_one, pxn, &one)
            _activate(pxn, N, linear)
            if t >= washout:
                dcopy(&n_, <double*>&drive[t, 0], &one, pyn, &one)
                dgemv(b"T", &n_, &n_, &d_one, <double*>&W[0, 0], &n_, py, &one, &d_one, pyn, &one)
                _activate(pyn, N, linear)
                dist = 0.0
                for i in range(N):
                    d = pyn[i] - pxn[i]
                    dist += d * d
                dist = sqrt(dist)
                if dist == 0.0:
                    collapsed += 1
                    break
                total += log(dist / gamma0)
                measured += 1
                scale = gamma0 / dist
                for i in range(N):
                    pyn[i] = pxn[i] + (pyn[i] - pxn[i]) * scale
                tmp = py
                py = pyn
                pyn = tmp
            tmp = px
            px = pxn
            pxn = tmp
    return total, measured, collapsed
