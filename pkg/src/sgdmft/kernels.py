"""Inner loops of the effective-process sampler.

Every routine exists twice: a compiled per-path loop (``*_nb``) and a
vectorized-over-paths numpy version (``*_np``). The un-suffixed names
dispatch on ``SGDMFT_BACKEND``. Memory kernels enter pre-multiplied by dt
(``A = dt * M_R``), so the memory sum in the h update is ``A[t, :t] @ h[:t]``.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA, njit
from .model import LossModel, lambda_derivs

LINEAR, DOOR = 0, 1


# -- scalar loss derivatives for compiled code ---------------------------------


@njit
def _sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


@njit
def _lprime(act, L, y, r):
    if act == LINEAR:
        v = y * r
        dphi = 1.0
    else:
        v = y * (r * r - L * L)
        dphi = 2.0 * r
    return -y * _sigmoid(-v) * dphi


# -- h paths ---------------------------------------------------------------------


@njit
def h_paths_nb(dt, lam, delta, lam_hat, A, m, c, y, h0, h_init, s, xi, y_shift, act, L):
    P, N = s.shape
    sd = math.sqrt(delta)
    h = np.empty((P, N + 1))
    for p in range(P):
        h[p, 0] = h_init[p]
        base = c[p] + sd * h0[p]
        for t in range(N):
            ht = h[p, t]
            r = sd * ht + m[t] * base
            mem = 0.0
            for u in range(t):
                mem += A[t, u] * h[p, u]
            drive = 0.0
            if s[p, t] != 0.0:
                drive = sd * s[p, t] * _lprime(act, L, y[p], r - y_shift[t])
            h[p, t + 1] = ht + dt * (-(lam + lam_hat[t]) * ht - drive + mem + xi[p, t])
    return h


def h_paths_np(dt, lam, delta, lam_hat, A, m, c, y, h0, h_init, s, xi, y_shift, act, L):
    P, N = s.shape
    sd = np.sqrt(delta)
    model = LossModel("linear" if act == LINEAR else "door", L)
    h = np.empty((P, N + 1))
    h[:, 0] = h_init
    base = c + sd * h0
    for t in range(N):
        ht = h[:, t]
        r = sd * ht + m[t] * base
        lp = lambda_derivs(model, y, r - y_shift[t])[1]
        mem = h[:, :t] @ A[t, :t]
        h[:, t + 1] = ht + dt * (-(lam + lam_hat[t]) * ht - sd * s[:, t] * lp + mem + xi[:, t])
    return h


# -- response matrices -------------------------------------------------------------


@njit
def response_paths_nb(dt, lam, delta, lam_hat, A, s, lpp):
    """G[p, t, k] = dh_p(t) / dY(k) for the discrete process (zero for t <= k)."""
    P, N = s.shape
    sd = math.sqrt(delta)
    G = np.zeros((P, N + 1, N))
    for p in range(P):
        g = G[p]
        for t in range(N):
            decay = 1.0 - dt * (lam + lam_hat[t] + delta * s[p, t] * lpp[p, t])
            for k in range(t):
                g[t + 1, k] = decay * g[t, k]
            for u in range(1, t):
                a = dt * A[t, u]
                if a != 0.0:
                    for k in range(u):
                        g[t + 1, k] += a * g[u, k]
            g[t + 1, t] = dt * sd * s[p, t] * lpp[p, t]
    return G


def response_paths_np(dt, lam, delta, lam_hat, A, s, lpp):
    P, N = s.shape
    sd = np.sqrt(delta)
    G = np.zeros((P, N + 1, N))
    for t in range(N):
        decay = 1.0 - dt * (lam + lam_hat[t] + delta * s[:, t] * lpp[:, t])
        if t:
            G[:, t + 1, :t] = decay[:, None] * G[:, t, :t] + dt * np.einsum(
                "u,puk->pk", A[t, :t], G[:, :t, :t]
            )
        G[:, t + 1, t] = dt * sd * s[:, t] * lpp[:, t]
    return G


# -- w paths -----------------------------------------------------------------------


@njit
def w_paths_nb(dt, lam, lam_hat, mu, A, m, h0, w_init, xi):
    P, N = xi.shape
    w = np.empty((P, N + 1))
    for p in range(P):
        w[p, 0] = w_init[p]
        for t in range(N):
            wt = w[p, t]
            mem = 0.0
            for u in range(t):
                mem += A[t, u] * (w[p, u] - m[u] * h0[p])
            w[p, t + 1] = wt + dt * (
                -(lam + lam_hat[t]) * wt + mem + xi[p, t] + h0[p] * (lam_hat[t] * m[t] - mu[t])
            )
    return w


def w_paths_np(dt, lam, lam_hat, mu, A, m, h0, w_init, xi):
    P, N = xi.shape
    w = np.empty((P, N + 1))
    w[:, 0] = w_init
    for t in range(N):
        wt = w[:, t]
        mem = (w[:, :t] - np.outer(h0, m[:t])) @ A[t, :t]
        w[:, t + 1] = wt + dt * (
            -(lam + lam_hat[t]) * wt + mem + xi[:, t] + h0 * (lam_hat[t] * m[t] - mu[t])
        )
    return w


if USE_NUMBA:
    h_paths, response_paths, w_paths = h_paths_nb, response_paths_nb, w_paths_nb
else:
    h_paths, response_paths, w_paths = h_paths_np, response_paths_np, w_paths_np

BACKEND = "numba" if USE_NUMBA else "numpy"
