import math

import numpy as np
import pytest

from sgdmft import kernels
from sgdmft.dmft import NonPSDKernelError, noise_factor, sample_noise


def brute_h(dt, lam, delta, lam_hat, A, m, c, y, h0, h_init, s, xi, y_shift, act, L):
    """Plain-python Euler loop, written independently of the package kernels."""
    P, N = s.shape
    out = np.zeros((P, N + 1))
    for p in range(P):
        hist = [float(h_init[p])]
        for t in range(N):
            r = math.sqrt(delta) * hist[t] + m[t] * (c[p] + math.sqrt(delta) * h0[p]) - y_shift[t]
            if act == kernels.LINEAR:
                v, dphi = y[p] * r, 1.0
            else:
                v, dphi = y[p] * (r * r - L * L), 2 * r
            # stable sigmoid(-v), same operation order as the compiled loop
            sig = 1.0 / (1.0 + math.exp(v)) if v <= 0 else math.exp(-v) / (1.0 + math.exp(-v))
            lprime = -y[p] * sig * dphi
            mem = 0.0
            for u in range(t):
                mem += A[t, u] * hist[u]
            drive = math.sqrt(delta) * s[p, t] * lprime if s[p, t] != 0 else 0.0
            hist.append(hist[t] + dt * (-(lam + lam_hat[t]) * hist[t] - drive + mem + xi[p, t]))
        out[p] = hist
    return out


def instance(seed, P=5, N=8, act=kernels.LINEAR):
    rng = np.random.default_rng(seed)
    dt = 0.2
    c = rng.choice([-1.0, 0.0, 1.0], size=P)
    return dict(
        dt=dt,
        lam=0.1,
        delta=0.3,
        lam_hat=rng.uniform(0, 0.5, N),
        A=np.tril(rng.normal(scale=0.1, size=(N, N)), -1) * dt,
        m=rng.normal(scale=0.3, size=N + 1),
        c=c,
        y=np.where(c == 0, -1.0, 1.0),
        h0=rng.standard_normal(P),
        h_init=0.1 * rng.standard_normal(P),
        s=(rng.random((P, N)) < 0.6).astype(float),
        xi=0.3 * rng.standard_normal((P, N)),
        y_shift=np.zeros(N),
        act=act,
        L=0.7,
    )


@pytest.mark.parametrize("act", [kernels.LINEAR, kernels.DOOR])
@pytest.mark.parametrize("seed", range(4))
def test_h_paths_match_brute_force(act, seed):
    a = instance(seed, act=act)
    ref = brute_h(**a)
    assert np.array_equal(kernels.h_paths_nb(**a), ref)
    assert np.allclose(kernels.h_paths_np(**a), ref, rtol=1e-13, atol=1e-14)


def test_free_and_decaying_dynamics():
    a = instance(0)
    N = a["s"].shape[1]
    a.update(lam=0.0, lam_hat=np.zeros(N), A=np.zeros((N, N)), xi=np.zeros_like(a["xi"]), s=np.zeros_like(a["s"]))
    h = kernels.h_paths(**a)
    assert np.all(h == h[:, :1])
    a["lam"], a["dt"] = 0.5, 0.01
    h = kernels.h_paths(**a)
    t = np.arange(N + 1) * 0.01
    assert np.allclose(h, h[:, :1] * np.exp(-0.5 * t), rtol=1e-3)


def response_inputs(seed, P=4, N=10):
    rng = np.random.default_rng(seed)
    dt = 0.2
    return (
        dt,
        0.1,
        0.4,
        rng.uniform(0, 0.4, N),
        np.tril(rng.normal(scale=0.2, size=(N, N)), -1) * dt,
        (rng.random((P, N)) < 0.5).astype(float),
        rng.uniform(0, 0.5, (P, N)),
    )


@pytest.mark.parametrize("seed", range(3))
def test_response_backends_agree_and_are_causal(seed):
    args = response_inputs(seed)
    g_nb = kernels.response_paths_nb(*args)
    g_np = kernels.response_paths_np(*args)
    assert np.allclose(g_nb, g_np, rtol=1e-12, atol=1e-15)
    N = args[5].shape[1]
    t, k = np.indices((N + 1, N))
    assert np.all(g_nb[:, t <= k] == 0)


def test_response_vanishes_without_curvature():
    args = list(response_inputs(1))
    args[6] = np.zeros_like(args[6])
    assert np.all(kernels.response_paths(*args) == 0)


def test_w_paths_backends_agree():
    rng = np.random.default_rng(0)
    P, N, dt = 6, 12, 0.2
    args = (
        dt,
        0.05,
        rng.uniform(0, 0.4, N),
        rng.normal(size=N),
        np.tril(rng.normal(scale=0.1, size=(N, N)), -1) * dt,
        rng.normal(size=N + 1),
        rng.standard_normal(P),
        rng.standard_normal(P),
        rng.standard_normal((P, N)),
    )
    assert np.allclose(kernels.w_paths_nb(*args), kernels.w_paths_np(*args), rtol=1e-13, atol=1e-14)


def test_noise_trivial_kernels():
    rng = np.random.default_rng(0)
    assert np.all(sample_noise(np.zeros((5, 5)), rng, 3) == 0)
    z = sample_noise(np.eye(4), np.random.default_rng(1), 10)
    assert np.array_equal(z, np.random.default_rng(1).standard_normal((10, 4)))


def test_noise_covariance_concentration():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(10, 10))
    M = B @ B.T / 10
    n = 100_000
    xi = sample_noise(M, rng, n)
    emp = xi.T @ xi / n
    sigma = np.sqrt((M**2 + np.outer(np.diag(M), np.diag(M))) / n)
    assert np.all(np.abs(emp - M) < 4 * sigma)


def test_noise_factor_jitter_and_rejection():
    v = np.array([1.0, 2.0, 3.0])
    L = noise_factor(np.outer(v, v))  # rank one: needs jitter
    assert np.allclose(L @ L.T, np.outer(v, v), atol=1e-6)
    with pytest.raises(NonPSDKernelError):
        noise_factor(np.diag([1.0, -1.0]))
