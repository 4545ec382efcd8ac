"""Gaussian-mixture data model, labels, activations and logistic-loss derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_CLUSTER = "two"
THREE_CLUSTER = "three"
KINDS = (TWO_CLUSTER, THREE_CLUSTER)


@dataclass(frozen=True)
class MixtureSpec:
    """Data-generating model.

    ``kind="two"``: c = +/-1 with equal probability and y = c.
    ``kind="three"``: c = 0 w.p. 1 - rho, c = +/-1 w.p. rho/2 each; y = -1 iff c = 0.
    """

    kind: str = TWO_CLUSTER
    delta: float = 0.5
    door_onset: float = 0.7
    rho: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.kind == THREE_CLUSTER:
            if not self.door_onset > 0:
                raise ValueError(f"door_onset must be > 0, got {self.door_onset}")
            if not 0 < self.rho < 1:
                raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def cluster_weight(self) -> float:
        """Probability that c != 0."""
        return 1.0 if self.kind == TWO_CLUSTER else self.rho

    def loss_model(self) -> "LossModel":
        if self.kind == TWO_CLUSTER:
            return LossModel("linear")
        return LossModel("door", self.door_onset)


@dataclass(frozen=True)
class LossModel:
    """Logistic loss composed with a linear or door activation."""

    activation: str = "linear"
    door_onset: float = 0.0

    def __post_init__(self):
        if self.activation not in ("linear", "door"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def code(self) -> int:
        # integer tag consumed by the compiled kernels
        return 0 if self.activation == "linear" else 1


@dataclass
class Dataset:
    patterns: np.ndarray
    labels: np.ndarray
    coefficients: np.ndarray

    @property
    def n(self) -> int:
        return self.patterns.shape[0]

    @property
    def d(self) -> int:
        return self.patterns.shape[1]


def coefficients_from_uniform(spec: MixtureSpec, u):
    """Map uniforms on [0, 1) to cluster coefficients under ``spec``'s law."""
    u = np.asarray(u, dtype=float)
    if spec.kind == TWO_CLUSTER:
        return np.where(u < 0.5, 1, -1).astype(np.int8)
    zero = 1.0 - spec.rho
    return np.where(u < zero, 0, np.where(u < zero + 0.5 * spec.rho, 1, -1)).astype(np.int8)


def sample_coefficient(spec: MixtureSpec, rng: np.random.Generator, size=None):
    """Draw c in {-1, 0, +1}; a scalar int when ``size`` is None."""
    c = coefficients_from_uniform(spec, rng.random(size))
    return int(c) if size is None else c


def label_of(spec: MixtureSpec, c):
    c_arr = np.asarray(c)
    if spec.kind == TWO_CLUSTER:
        if np.any(c_arr == 0):
            raise ValueError("c = 0 is not a valid two-cluster coefficient")
        y = c_arr.astype(np.int8)
    else:
        y = np.where(c_arr == 0, -1, 1).astype(np.int8)
    return int(y) if y.ndim == 0 else y


def assemble_patterns(coefficients, noise, delta):
    """x_mu = c_mu * (1, ..., 1) / sqrt(d) + sqrt(delta) * z_mu, computed in place on ``noise``."""
    noise = np.asarray(noise, dtype=float)
    d = noise.shape[1]
    out = noise * np.sqrt(delta)
    out += (np.asarray(coefficients, dtype=float) / np.sqrt(d))[:, None]
    return out


def sample_dataset(spec: MixtureSpec, d: int, n: int, rng: np.random.Generator) -> Dataset:
    if d < 1 or n < 0:
        raise ValueError(f"need d >= 1 and n >= 0, got d={d}, n={n}")
    c = sample_coefficient(spec, rng, size=n)
    x = rng.standard_normal((n, d))
    # in place: the three-cluster runs hold n*d ~ 7.5e7 entries
    x *= np.sqrt(spec.delta)
    x += (c.astype(float) / np.sqrt(d))[:, None]
    return Dataset(patterns=x, labels=label_of(spec, c), coefficients=c)


def phi(model: LossModel, h):
    h = np.asarray(h, dtype=float)
    if model.activation == "linear":
        return h
    return h * h - model.door_onset**2


def phi_prime(model: LossModel, h):
    h = np.asarray(h, dtype=float)
    if model.activation == "linear":
        return np.ones_like(h)
    return 2.0 * h


def _softplus_neg(v):
    # ln(1 + e^{-v}) without overflow
    return np.logaddexp(0.0, -v)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def lambda_derivs(model: LossModel, y, h):
    """Return (L, L', L'') where L(y, h) = ln(1 + exp(-y phi(h))) and primes are d/dh."""
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    y, h = np.broadcast_arrays(y, h)
    scalar = h.ndim == 0
    y = np.atleast_1d(y)
    h = np.atleast_1d(h)

    v = y * phi(model, h)
    dphi = phi_prime(model, h)
    sig_neg = _sigmoid(-v)  # -l'(v)
    lam = _softplus_neg(v)
    lam1 = -y * sig_neg * dphi
    lpp = sig_neg * _sigmoid(v)  # l''(v)
    lam2 = lpp * dphi * dphi
    if model.activation == "door":
        lam2 = lam2 - 2.0 * y * sig_neg
    if scalar:
        return float(lam[0]), float(lam1[0]), float(lam2[0])
    return lam, lam1, lam2


def loss_value(model: LossModel, y, h):
    return lambda_derivs(model, y, h)[0]
