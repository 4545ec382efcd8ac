"""Finite-d training of the single-layer classifier: full-batch GD, SGD and Persistent SGD."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .model import (
    Dataset,
    LossModel,
    MixtureSpec,
    label_of,
    lambda_derivs,
    phi,
    sample_coefficient,
    sample_dataset,
)

log = logging.getLogger(__name__)

FULL_BATCH = "full"
SGD = "sgd"
PERSISTENT = "persistent"
MASK_SCHEMES = (FULL_BATCH, SGD, PERSISTENT)


@dataclass(frozen=True)
class RunParams:
    alpha: float
    d: int
    lam: float = 0.0
    eta: float = 0.2
    b: float = 1.0
    tau: float = 1.0
    R: float = 0.01
    horizon: float = 20.0
    mask_scheme: str = FULL_BATCH
    seed: int = 0
    clip_transitions: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 < self.b <= 1:
            raise ValueError(f"b must lie in (0, 1], got {self.b}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.R < 0:
            raise ValueError(f"R must be >= 0, got {self.R}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.mask_scheme not in MASK_SCHEMES:
            raise ValueError(f"mask_scheme must be one of {MASK_SCHEMES}, got {self.mask_scheme!r}")
        if self.mask_scheme == FULL_BATCH and self.b != 1:
            raise ValueError("mask_scheme 'full' requires b = 1")
        if self.mask_scheme == PERSISTENT:
            transition_probabilities(self.b, self.tau, self.eta, clip=self.clip_transitions)

    @property
    def n(self) -> int:
        return int(round(self.alpha * self.d))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.eta)))


def transition_probabilities(b: float, tau: float, eta: float, clip: bool = False):
    """Per-step Persistent-SGD switching probabilities (0 -> 1, 1 -> 0)."""
    p_on = eta / tau
    p_off = (1.0 - b) * eta / (b * tau)
    if p_on > 1 or p_off > 1:
        if not clip:
            raise ValueError(
                f"invalid Persistent-SGD transition probability: eta/tau = {p_on:.4g}, "
                f"(1-b)eta/(b tau) = {p_off:.4g}; reduce eta or set clip_transitions"
            )
        p_on, p_off = min(p_on, 1.0), min(p_off, 1.0)
    return p_on, p_off


@dataclass
class MetricsSeries:
    times: np.ndarray
    m: np.ndarray
    q: np.ndarray
    train_loss: np.ndarray
    train_acc: np.ndarray
    gen_err: np.ndarray
    stderr: dict = field(default_factory=dict)

    COLUMNS = ("t", "m", "q", "train_loss", "train_acc", "gen_err")

    def columns(self):
        return {
            "t": self.times,
            "m": self.m,
            "q": self.q,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "gen_err": self.gen_err,
        }


def init_weights(d: int, R: float, rng: np.random.Generator) -> np.ndarray:
    if R < 0:
        raise ValueError(f"R must be >= 0, got {R}")
    if R == 0:
        return np.zeros(d)
    return np.sqrt(R) * rng.standard_normal(d)


def initial_mask(params: RunParams, n: int, rng: np.random.Generator) -> np.ndarray:
    if params.mask_scheme == FULL_BATCH:
        return np.ones(n)
    return (rng.random(n) < params.b).astype(float)


def step_mask(params: RunParams, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance the minibatch indicator s_mu by one step."""
    n = state.shape[0]
    if params.mask_scheme == FULL_BATCH:
        return np.ones(n)
    u = rng.random(n)
    if params.mask_scheme == SGD:
        return (u < params.b).astype(float)
    p_on, p_off = transition_probabilities(params.b, params.tau, params.eta, params.clip_transitions)
    active = state > 0
    return np.where(active, u >= p_off, u < p_on).astype(float)


def _local_fields(w, data: Dataset):
    return data.patterns @ w / np.sqrt(data.d)


def gd_step(params: RunParams, w, data: Dataset, mask, model: LossModel, fields=None):
    """One update w <- w - eta [lam w + sum_mu s_mu L'(y_mu, h_mu) x_mu / sqrt(d)]."""
    if fields is None:
        fields = _local_fields(w, data)
    _, lp, _ = lambda_derivs(model, data.labels, fields)
    grad = params.lam * w
    if data.n:
        grad = grad + data.patterns.T @ (mask * lp) / np.sqrt(data.d)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return w - params.eta * grad


def masked_loss(params: RunParams, w, data: Dataset, mask, model: LossModel) -> float:
    """Ridge-regularized empirical risk restricted to the active samples."""
    lam_vals = lambda_derivs(model, data.labels, _local_fields(w, data))[0]
    return float(np.sum(mask * lam_vals) + 0.5 * params.lam * np.dot(w, w))


def _observe(spec, model, w, data, fields):
    d = w.shape[0]
    m = w.sum() / d
    q = float(np.dot(w, w)) / d
    if data.n:
        y = data.labels.astype(float)
        loss = float(lambda_derivs(model, y, fields)[0].sum()) / d
        acc = 1.0 - float(np.mean(y * phi(model, fields) < 0))
    else:
        loss, acc = 0.0, 1.0
    return m, q, loss, acc


def run_training(
    spec: MixtureSpec,
    params: RunParams,
    rng: np.random.Generator | None = None,
    n_test: int = 0,
) -> MetricsSeries:
    """Train for horizon/eta steps, recording observables at every step.

    The dataset is drawn once and kept fixed; only the masks are resampled.
    ``n_test > 0`` adds a brute-force Monte Carlo audit of the test error
    (stored in ``stderr['gen_err_mc']`` / ``stderr['gen_err_mc_se']``).
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    data_rng, init_rng, mask_rng, test_rng = rng.spawn(4)
    model = spec.loss_model()
    data = sample_dataset(spec, params.d, params.n, data_rng)
    w = init_weights(params.d, params.R, init_rng)
    mask = initial_mask(params, data.n, mask_rng)

    steps = params.n_steps
    rec = np.empty((steps + 1, 4))
    mc = np.empty((steps + 1, 2)) if n_test else None
    for k in range(steps + 1):
        fields = _local_fields(w, data)
        rec[k] = _observe(spec, model, w, data, fields)
        if mc is not None:
            mc[k] = mc_generalization(w, spec, n_test, test_rng)
        if k == steps:
            break
        w = gd_step(params, w, data, mask, model, fields=fields)
        mask = step_mask(params, mask, mask_rng)

    m, q = rec[:, 0], rec[:, 1]
    series = MetricsSeries(
        times=np.arange(steps + 1) * params.eta,
        m=m,
        q=q,
        train_loss=rec[:, 2],
        train_acc=rec[:, 3],
        gen_err=np.asarray(analysis.gen_error(spec, m, q), dtype=float),
    )
    if mc is not None:
        series.stderr["gen_err_mc"] = mc[:, 0]
        series.stderr["gen_err_mc_se"] = mc[:, 1]
    return series


def predict(spec: MixtureSpec, fields):
    """Labels predicted from local fields w.x/sqrt(d), with sign(0) = +1."""
    out = phi(spec.loss_model(), fields)
    return np.where(out >= 0, 1, -1)


def mc_generalization(w, spec: MixtureSpec, n_test: int, rng: np.random.Generator, chunk_entries: int = 2_000_000):
    """Brute-force test error on fresh samples; returns (rate, binomial stderr)."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    w = np.asarray(w, dtype=float)
    d = w.shape[0]
    rows = max(1, chunk_entries // d)
    wrong = 0
    done = 0
    while done < n_test:
        k = min(rows, n_test - done)
        c = sample_coefficient(spec, rng, size=k)
        z = rng.standard_normal((k, d))
        x = z * np.sqrt(spec.delta) + (c.astype(float) / np.sqrt(d))[:, None]
        y = label_of(spec, c)
        wrong += int(np.count_nonzero(predict(spec, x @ w / np.sqrt(d)) != y))
        done += k
    p = wrong / n_test
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / n_test))


def run_seeds(spec: MixtureSpec, params: RunParams, n_seeds: int, workers: int = 1, n_test: int = 0):
    """Independent runs with seeds (params.seed, k), k = 0..n_seeds-1.

    Each run owns its generator, so the result does not depend on ``workers``.
    """
    def one(k):
        rng = np.random.default_rng([params.seed, k])
        return run_training(spec, params, rng, n_test=n_test)

    if workers > 1 and n_seeds > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n_seeds)))
    return [one(k) for k in range(n_seeds)]


def average_series(runs: list[MetricsSeries]) -> MetricsSeries:
    """Seed average with standard errors (``stderr`` keyed by column name)."""
    cols = ("m", "q", "train_loss", "train_acc", "gen_err")
    stacked = {c: np.stack([getattr(r, c) for r in runs]) for c in cols}
    k = len(runs)
    mean = {c: v.mean(axis=0) for c, v in stacked.items()}
    se = {
        c: (v.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(v.shape[1]))
        for c, v in stacked.items()
    }
    return MetricsSeries(times=runs[0].times.copy(), stderr=se, **mean)


def with_seed(params: RunParams, seed: int) -> RunParams:
    return replace(params, seed=seed)
