"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results up to floating-point reduction order.
"""

from __future__ import annotations

import math

import numpy as np


def scan_pooled(W, drive, washout, linear=False):
    T, B, N = drive.shape
    WT = np.ascontiguousarray(W.T)
    sx = np.zeros((B, N))
    sx2 = np.zeros((B, N))
    x = np.zeros((B, N))
    buf = np.empty((B, N))
    for t in range(T):
        if t > 0:
            np.matmul(x, WT, out=buf)
            buf += drive[t]
        else:
            buf[...] = drive[t]
        if not linear:
            np.tanh(buf, out=buf)
        x, buf = buf, x
        if t >= washout:
            sx += x
            sx2 += x * x
    return sx, sx2, x


def scan_states(W, drive, linear=False):
    T, B, N = drive.shape
    WT = np.ascontiguousarray(W.T)
    states = np.empty((T, B, N))
    for t in range(T):
        cur = states[t]
        if t > 0:
            np.matmul(states[t - 1], WT, out=cur)
            cur += drive[t]
        else:
            cur[...] = drive[t]
        if not linear:
            np.tanh(cur, out=cur)
    return states


def scan_backward(W, states, grad_states, linear=False):
    T, B, N = states.shape
    gdrive = np.empty((T, B, N))
    carry = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        g = grad_states[t] + carry
        if not linear:
            g *= 1.0 - states[t] * states[t]
        gdrive[t] = g
        if t > 0:
            np.matmul(g, W, out=carry)
    return gdrive


def lyapunov_run(W, drive, gamma0, washout, linear=False):
    T, N = drive.shape
    f = (lambda v: v) if linear else np.tanh
    x = np.zeros(N)
    y = np.zeros(N)
    total = 0.0
    measured = 0
    collapsed = 0
    for t in range(T):
        if t == washout:
            y = x.copy()
            y[0] += gamma0
        xn = f(drive[t] + W @ x)
        if t >= washout:
            yn = f(drive[t] + W @ y)
            dist = math.sqrt(float(np.dot(yn - xn, yn - xn)))
            if dist == 0.0:
                collapsed += 1
                break
            total += math.log(dist / gamma0)
            measured += 1
            y = xn + (yn - xn) * (gamma0 / dist)
        x = xn
    return total, measured, collapsed
