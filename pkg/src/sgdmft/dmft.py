"""Self-consistent effective process for the d -> infinity learning dynamics.

The solver alternates between sampling an ensemble of effective paths with
the current kernels and re-estimating the kernels from that ensemble, with
damping, until the kernels stop moving. Random inputs of every path are drawn
once from ``(seed, path index)`` and reused at every iteration, so the
iteration map is deterministic and the result does not depend on how paths
are split across workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from . import analysis, kernels
from .model import THREE_CLUSTER, MixtureSpec, coefficients_from_uniform, label_of, lambda_derivs
from .simulator import FULL_BATCH, PERSISTENT, SGD, MetricsSeries, RunParams, transition_probabilities

log = logging.getLogger(__name__)

MASK_MODES = (FULL_BATCH, SGD, PERSISTENT)


class DivergenceError(FloatingPointError):
    """The effective process produced non-finite values (dt too large?)."""


class NonPSDKernelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0 or self.n_steps < 1:
            raise ValueError(f"invalid grid dt={self.dt}, n_steps={self.n_steps}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class KernelSet:
    """Kernels on a uniform grid.

    ``M_C``, ``M_R``, ``lambda_hat`` and ``mu`` are indexed by the step
    index 0..n-1 (the value used during step i); ``m`` carries n+1 entries,
    one per recorded time. ``M_R[i, j]`` vanishes for i <= j.
    """

    dt: float
    M_C: np.ndarray
    M_R: np.ndarray
    lambda_hat: np.ndarray
    mu: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, grid: TimeGrid, m0: float = 0.0, lam: float = 0.0) -> "KernelSet":
        n = grid.n_steps
        mu = np.zeros(n)
        return cls(
            dt=grid.dt,
            M_C=np.zeros((n, n)),
            M_R=np.zeros((n, n)),
            lambda_hat=np.zeros(n),
            mu=mu,
            m=integrate_magnetization(mu, lam, m0, grid.dt),
        )

    @property
    def n_steps(self) -> int:
        return self.mu.shape[0]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.dt, self.n_steps)

    def arrays(self):
        return {"M_C": self.M_C, "M_R": self.M_R, "lambda_hat": self.lambda_hat, "mu": self.mu}


@dataclass
class SolverConfig:
    n_paths: int = 10_000
    damping: float = 0.5
    tol: float = 1e-3
    max_iters: int = 100
    mask_mode: str | None = None  # None: follow RunParams.mask_scheme
    seed: int = 0
    m0: float | None = None
    d_ref: int | None = None
    workers: int = 1
    chunk_size: int = 250
    correlation: str = "wpath"  # or "dyson"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mask_mode is not None and self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.correlation not in ("wpath", "dyson"):
            raise ValueError("correlation must be 'wpath' or 'dyson'")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be >= 1")


@dataclass
class PathEnsemble:
    """Effective-process samples; draws first, trajectories filled in by the solver."""

    c: np.ndarray
    y: np.ndarray
    h0: np.ndarray
    h_init: np.ndarray
    w_init: np.ndarray
    u_mask: np.ndarray
    z: np.ndarray
    s: np.ndarray | None = None
    xi: np.ndarray | None = None
    h: np.ndarray | None = None
    r: np.ndarray | None = None
    w: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.c.shape[0]

    def take(self, sl: slice) -> "PathEnsemble":
        return PathEnsemble(
            **{k: (None if v is None else v[sl]) for k, v in self.__dict__.items()}
        )


@dataclass
class DMFTResult:
    kernels: KernelSet
    metrics: MetricsSeries
    iterations: int
    residual: float
    converged: bool
    residuals: list = field(default_factory=list)
    ensemble: PathEnsemble | None = None


# -- random inputs -------------------------------------------------------------------


def draw_paths(spec: MixtureSpec, n_paths: int, n_steps: int, R: float, m0: float, seed: int) -> PathEnsemble:
    """Per-path draws seeded by (seed, path index)."""
    u_c = np.empty(n_paths)
    gauss = np.empty((n_paths, 3))
    u_mask = np.empty((n_paths, n_steps))
    z = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        rng = np.random.default_rng([seed, i])
        u_c[i] = rng.random()
        gauss[i] = rng.standard_normal(3)
        u_mask[i] = rng.random(n_steps)
        z[i] = rng.standard_normal(n_steps)
    c = coefficients_from_uniform(spec, u_c)
    h0 = gauss[:, 0]
    # w(0) carries overlap m0 with h0 so that <h0 w(0)> = m(0)
    w_init = m0 * h0 + math.sqrt(max(R - m0 * m0, 0.0)) * gauss[:, 2]
    return PathEnsemble(
        c=c.astype(float),
        y=np.asarray(label_of(spec, c), dtype=float),
        h0=h0,
        h_init=math.sqrt(R) * gauss[:, 1],
        w_init=w_init,
        u_mask=u_mask,
        z=z,
    )


def sample_mask_path(mode: str, b: float, tau: float, grid: TimeGrid, uniforms, clip: bool = False):
    """Mask paths s(t) from uniforms of shape (paths, n_steps).

    ``uniforms`` may be a Generator, in which case one path is drawn.
    """
    if isinstance(uniforms, np.random.Generator):
        uniforms = uniforms.random((1, grid.n_steps))
    u = np.atleast_2d(np.asarray(uniforms, dtype=float))
    if mode == FULL_BATCH:
        return np.ones_like(u)
    if mode == SGD:
        return (u < b).astype(float)
    if mode != PERSISTENT:
        raise ValueError(f"unknown mask mode {mode!r}")
    p_on, p_off = transition_probabilities(b, tau, grid.dt, clip=clip)
    s = np.empty_like(u)
    s[:, 0] = u[:, 0] < b
    for t in range(1, u.shape[1]):
        s[:, t] = np.where(s[:, t - 1] > 0, u[:, t] >= p_off, u[:, t] < p_on)
    return s


def noise_factor(M_C, retries: int = 3):
    """Lower-triangular L with L L^T = M_C (+ jitter if needed)."""
    M = 0.5 * (np.asarray(M_C, dtype=float) + np.asarray(M_C, dtype=float).T)
    scale = float(np.max(np.diag(M))) if M.size else 0.0
    if scale <= 0:
        if np.any(M != 0):
            raise NonPSDKernelError("noise kernel has non-positive diagonal")
        return np.zeros_like(M)
    try:
        return cholesky(M, lower=True, check_finite=True)
    except LinAlgError:
        pass
    eps = 1e-10 * scale
    eye = np.eye(M.shape[0])
    for _ in range(retries + 1):
        try:
            return cholesky(M + eps * eye, lower=True)
        except LinAlgError:
            eps *= 100.0
    raise NonPSDKernelError("noise kernel is not positive semidefinite")


def sample_noise(M_C, rng: np.random.Generator, n_samples: int | None = None):
    """Gaussian path(s) with covariance M_C; shape (n,) or (n_samples, n)."""
    factor = noise_factor(M_C)
    n = factor.shape[0]
    z = rng.standard_normal(n if n_samples is None else (n_samples, n))
    return z @ factor.T


# -- single-iteration pieces ---------------------------------------------------------


def _act(spec: MixtureSpec):
    model = spec.loss_model()
    return model, model.code, float(model.door_onset)


def simulate_h_path(kernels_: KernelSet, paths: PathEnsemble, lam: float, spec: MixtureSpec, y_shift=None):
    """Euler trajectories h(t) of the effective process (needs ``paths.s`` and ``paths.xi``)."""
    _, act, L = _act(spec)
    n = kernels_.n_steps
    shift = np.zeros(n) if y_shift is None else np.asarray(y_shift, dtype=float)
    h = kernels.h_paths(
        kernels_.dt,
        lam,
        spec.delta,
        kernels_.lambda_hat,
        kernels_.dt * kernels_.M_R,
        kernels_.m,
        paths.c,
        paths.y,
        paths.h0,
        paths.h_init,
        np.ascontiguousarray(paths.s, dtype=float),
        np.ascontiguousarray(paths.xi, dtype=float),
        shift,
        act,
        L,
    )
    if not np.all(np.isfinite(h)):
        raise DivergenceError("effective process diverged; try a smaller time step")
    return h


def local_fields(kernels_: KernelSet, paths: PathEnsemble, delta: float):
    """r(t) = sqrt(delta) h(t) + m(t) (c + sqrt(delta) h0)."""
    sd = math.sqrt(delta)
    return sd * paths.h + np.outer(paths.c + sd * paths.h0, kernels_.m)


def simulate_response_path(kernels_: KernelSet, paths: PathEnsemble, lam: float, spec: MixtureSpec):
    """G[p, t, k] = d h_p(t) / d Y(k): response of each path to a unit shift of Y at step k."""
    model = spec.loss_model()
    n = kernels_.n_steps
    r = local_fields(kernels_, paths, spec.delta)[:, :n]
    lpp = lambda_derivs(model, paths.y[:, None], r)[2]
    G = kernels.response_paths(
        kernels_.dt,
        lam,
        spec.delta,
        kernels_.lambda_hat,
        kernels_.dt * kernels_.M_R,
        np.ascontiguousarray(paths.s, dtype=float),
        np.ascontiguousarray(lpp),
    )
    if not np.all(np.isfinite(G)):
        raise DivergenceError("response matrix diverged")
    return G


def simulate_w_path(kernels_: KernelSet, paths: PathEnsemble, lam: float):
    """Single-coordinate weight process; <w(t)^2> over paths is C(t, t)."""
    w = kernels.w_paths(
        kernels_.dt,
        lam,
        kernels_.lambda_hat,
        kernels_.mu,
        kernels_.dt * kernels_.M_R,
        kernels_.m,
        paths.h0,
        paths.w_init,
        np.ascontiguousarray(paths.xi, dtype=float),
    )
    if not np.all(np.isfinite(w)):
        raise DivergenceError("weight process diverged")
    return w


def kernel_sums(paths: PathEnsemble, G, spec: MixtureSpec, n_steps: int):
    """Unnormalized path sums feeding the kernel estimates."""
    model = spec.loss_model()
    sd = math.sqrt(spec.delta)
    r = paths.r[:, :n_steps]
    _, lp, lpp = lambda_derivs(model, paths.y[:, None], r)
    s = paths.s
    a = s * lp
    slpp = s * lpp
    return {
        "lambda_hat": slpp.sum(axis=0),
        "mu": (a * (paths.c + sd * paths.h0)[:, None]).sum(axis=0),
        "M_C": a.T @ a,
        "M_R": np.einsum("pt,ptk->tk", slpp, G[:, :n_steps, :]),
    }


def estimates_from_sums(sums, n_paths: int, alpha: float, delta: float, dt: float):
    sd = math.sqrt(delta)
    M_R = np.tril(sums["M_R"], -1) * (alpha * delta * sd / (dt * n_paths))
    return {
        "lambda_hat": sums["lambda_hat"] * (alpha * delta / n_paths),
        "mu": sums["mu"] * (alpha / n_paths),
        "M_C": sums["M_C"] * (alpha * delta / n_paths),
        "M_R": M_R,
    }


def damp(old: KernelSet, est: dict, damping: float) -> KernelSet:
    mix = {k: (1.0 - damping) * getattr(old, k) + damping * est[k] for k in est}
    mix["M_C"] = 0.5 * (mix["M_C"] + mix["M_C"].T)
    return KernelSet(dt=old.dt, m=old.m.copy(), **mix)


def update_kernels(ensemble: PathEnsemble, G, alpha: float, spec: MixtureSpec, old: KernelSet, damping: float):
    """Damped Monte Carlo kernel update from a sampled ensemble (``r`` and ``s`` filled in).

    The returned set keeps ``old.m``; integrate the magnetization separately.
    """
    if ensemble.n_paths == 0:
        raise ValueError("empty ensemble")
    sums = kernel_sums(ensemble, G, spec, old.n_steps)
    est = estimates_from_sums(sums, ensemble.n_paths, alpha, spec.delta, old.dt)
    return damp(old, est, damping)


def integrate_magnetization(mu, lam: float, m0: float, dt: float):
    """Euler solution of dm/dt = -lam m - mu(t); returns len(mu) + 1 values."""
    mu = np.asarray(mu, dtype=float)
    m = np.empty(mu.shape[0] + 1)
    m[0] = m0
    for t in range(mu.shape[0]):
        m[t + 1] = m[t] + dt * (-lam * m[t] - mu[t])
    return m


def residual(old: KernelSet, new: KernelSet) -> float:
    worst = 0.0
    for name, a in new.arrays().items():
        b = getattr(old, name)
        worst = max(worst, float(np.max(np.abs(a - b), initial=0.0) / (np.max(np.abs(b), initial=0.0) + 1e-12)))
    return worst


def solve_dyson(kernels_: KernelSet, lam: float, R: float):
    """Second moments of the weight process by causal time stepping.

    Returns ``C`` of shape (n+1, n+1) with C[i, j] = <w(t_i) w(t_j)> and the
    response ``Rresp`` of shape (n, n): Rresp[i, j] is the change of w at
    t_{i+1} per unit impulse applied during step j, so Rresp[j, j] = 1.
    The scheme is the exact second-moment recursion of the Euler weight
    process, which discretizes the continuous correlation/response equations.
    """
    dt = kernels_.dt
    n = kernels_.n_steps
    lh, mu, m, MC = kernels_.lambda_hat, kernels_.mu, kernels_.m, kernels_.M_C
    A = dt * kernels_.M_R
    # F(t) = sum_{u<=t} B[t,u] w(u) + beta[t] h0 + xi(t)
    B = A.copy()
    B[np.diag_indices(n)] = -(lam + lh)
    beta = lh * m[:n] - mu - A @ m[:n]

    # Rr[j, v] = d w(t_j) / d (dt * xi_v), zero for j <= v
    Rr = np.zeros((n + 1, n))
    for j in range(n):
        Rr[j + 1, :j] = Rr[j, :j] + dt * (B[j, : j + 1] @ Rr[: j + 1, :j])
        Rr[j + 1, j] = 1.0

    def xi_w(i, j):
        # <xi_i w_j>
        return dt * float(Rr[j, :j] @ MC[i, :j])

    C = np.zeros((n + 1, n + 1))
    C[0, 0] = R
    for t in range(n):
        cross = np.array([xi_w(t, j) for j in range(t + 1)])
        row = C[t, : t + 1] + dt * (B[t, : t + 1] @ C[: t + 1, : t + 1] + beta[t] * m[: t + 1] + cross)
        C[t + 1, : t + 1] = row
        C[: t + 1, t + 1] = row
        diag = C[t + 1, t] + dt * (
            float(B[t, : t + 1] @ C[t + 1, : t + 1]) + beta[t] * m[t + 1] + xi_w(t, t + 1)
        )
        C[t + 1, t + 1] = diag
    Rresp = Rr[1:, :]
    return C, Rresp


# -- driver --------------------------------------------------------------------------


def initial_magnetization(spec: MixtureSpec, params: RunParams, config: SolverConfig) -> float:
    """m(0): 0 for two clusters, mean |N(0, R/d_ref)| for three clusters, unless given."""
    if config.m0 is not None:
        return float(config.m0)
    if spec.kind == THREE_CLUSTER:
        d_ref = config.d_ref or params.d
        return math.sqrt(2.0 * params.R / (math.pi * d_ref))
    return 0.0


def _mask_mode(params: RunParams, config: SolverConfig) -> str:
    return config.mask_mode or params.mask_scheme


def prepare_ensemble(spec, params, config, grid, m0) -> PathEnsemble:
    paths = draw_paths(spec, config.n_paths, grid.n_steps, params.R, m0, config.seed)
    paths.s = sample_mask_path(
        _mask_mode(params, config), params.b, params.tau, grid, paths.u_mask, clip=params.clip_transitions
    )
    return paths


def _chunks(n_paths: int, size: int):
    return [slice(i, min(i + size, n_paths)) for i in range(0, n_paths, size)]


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _iteration_sums(K: KernelSet, factor, paths: PathEnsemble, spec, params, config):
    n = K.n_steps

    def work(sl):
        part = paths.take(sl)
        part.xi = part.z @ factor.T
        part.h = simulate_h_path(K, part, params.lam, spec)
        part.r = local_fields(K, part, spec.delta)
        G = simulate_response_path(K, part, params.lam, spec)
        return kernel_sums(part, G, spec, n)

    parts = _map(work, _chunks(paths.n_paths, config.chunk_size), config.workers)
    total = {k: v.copy() for k, v in parts[0].items()}
    for part in parts[1:]:
        for k in total:
            total[k] += part[k]
    return total


def _final_pass(K: KernelSet, paths: PathEnsemble, spec, params, config):
    factor = noise_factor(K.M_C)

    def work(sl):
        part = paths.take(sl)
        part.xi = part.z @ factor.T
        part.h = simulate_h_path(K, part, params.lam, spec)
        part.r = local_fields(K, part, spec.delta)
        part.w = simulate_w_path(K, part, params.lam)
        return part

    parts = _map(work, _chunks(paths.n_paths, config.chunk_size), config.workers)
    for name in ("xi", "h", "r", "w"):
        setattr(paths, name, np.concatenate([getattr(p, name) for p in parts]))
    return paths


def metrics_from_ensemble(K: KernelSet, paths: PathEnsemble, spec, params, config) -> MetricsSeries:
    if config.correlation == "dyson":
        C, _ = solve_dyson(K, params.lam, params.R)
        q = np.diag(C).copy()
    else:
        q = np.mean(paths.w**2, axis=0)
    loss, acc = analysis.ensemble_loss_accuracy(paths, params.alpha, spec.loss_model())
    m = K.m.copy()
    return MetricsSeries(
        times=K.grid.times,
        m=m,
        q=q,
        train_loss=loss,
        train_acc=acc,
        gen_err=np.asarray(analysis.gen_error(spec, m, np.maximum(q, 0.0)), dtype=float),
    )


def solve_dmft(
    spec: MixtureSpec,
    params: RunParams,
    config: SolverConfig | None = None,
    init: KernelSet | None = None,
    keep_ensemble: bool = False,
) -> DMFTResult:
    """Damped fixed-point iteration of the kernels, then observables from a final ensemble."""
    config = config or SolverConfig()
    grid = TimeGrid(params.eta, params.n_steps)
    m0 = initial_magnetization(spec, params, config)
    paths = prepare_ensemble(spec, params, config, grid, m0)

    if init is None:
        K = KernelSet.zeros(grid, m0, params.lam)
    else:
        if init.n_steps != grid.n_steps or not math.isclose(init.dt, grid.dt):
            raise ValueError("warm-start kernels do not match the time grid")
        K = replace(init, m=integrate_magnetization(init.mu, params.lam, m0, grid.dt))

    history = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        factor = noise_factor(K.M_C)
        sums = _iteration_sums(K, factor, paths, spec, params, config)
        est = estimates_from_sums(sums, paths.n_paths, params.alpha, spec.delta, grid.dt)
        new = damp(K, est, config.damping)
        new.m = integrate_magnetization(new.mu, params.lam, m0, grid.dt)
        res = residual(K, new)
        history.append(res)
        K = new
        log.debug("dmft iteration %d residual %.3e", it, res)
        if res < config.tol:
            converged = True
            break
    if not converged:
        log.warning("dmft did not converge in %d iterations (residual %.3e)", it, history[-1])

    paths = _final_pass(K, paths, spec, params, config)
    metrics = metrics_from_ensemble(K, paths, spec, params, config)
    return DMFTResult(
        kernels=K,
        metrics=metrics,
        iterations=it,
        residual=history[-1],
        converged=converged,
        residuals=history,
        ensemble=paths if keep_ensemble else None,
    )
