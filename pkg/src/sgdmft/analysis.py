"""Closed-form generalization/oracle errors, ensemble observables and curve comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .model import TWO_CLUSTER, LossModel, MixtureSpec, lambda_derivs, phi


def _check_q(q):
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("squared norm q must be non-negative")
    return q


def gen_error_two_cluster(m, q, delta):
    """Misclassification rate of sign(w.x) for weights with overlap m and norm q = |w|^2/d."""
    m = np.asarray(m, dtype=float)
    q = _check_q(q)
    m, q = np.broadcast_arrays(m, q)
    out = np.empty(m.shape)
    pos = q > 0
    out[pos] = 0.5 * erfc(m[pos] / np.sqrt(2.0 * delta * q[pos]))
    # q = 0: the field is c*m exactly and sign(0) = +1
    zero = ~pos
    out[zero] = np.where(m[zero] > 0, 0.0, np.where(m[zero] < 0, 1.0, 0.5))
    return float(out) if out.ndim == 0 else out


def gen_error_three_cluster(m, q, delta, door_onset, rho=0.5):
    """Misclassification rate of the door classifier sign((w.x)^2/d - L^2)."""
    m = np.asarray(m, dtype=float)
    q = _check_q(q)
    m, q = np.broadcast_arrays(m, q)
    L = door_onset
    out = np.empty(m.shape)
    pos = q > 0
    s = np.sqrt(2.0 * delta * q[pos])
    mp = m[pos]
    out[pos] = (1.0 - rho) * erfc(L / s) + 0.5 * rho * (erf((L - mp) / s) + erf((L + mp) / s))
    zero = ~pos
    out[zero] = np.where(m[zero] ** 2 < L * L, rho, 0.0)
    return float(out) if out.ndim == 0 else out


def gen_error(spec: MixtureSpec, m, q):
    if spec.kind == TWO_CLUSTER:
        return gen_error_two_cluster(m, q, spec.delta)
    return gen_error_three_cluster(m, q, spec.delta, spec.door_onset, spec.rho)


def _log_arccosh(log_a: float) -> float:
    # arccosh(A) for A = exp(log_a), valid far past float overflow of A itself
    if log_a > 350.0:
        return log_a + math.log(2.0)
    return math.acosh(math.exp(log_a))


def oracle_error(delta: float, rho: float = 0.5) -> float:
    """Error of the posterior-argmax classifier for the three-cluster model."""
    if not delta > 0 or not 0 < rho < 1:
        raise ValueError(f"need delta > 0 and 0 < rho < 1, got delta={delta}, rho={rho}")
    log_a = math.log((1.0 - rho) / rho) + 0.5 / delta
    if log_a < 0:
        raise ValueError(
            f"oracle threshold (1-rho)/rho*exp(1/(2*delta)) = {math.exp(log_a):.6g} < 1; "
            "the oracle always predicts +1 in this regime"
        )
    a = abs(_log_arccosh(log_a))
    root = math.sqrt(2.0 * delta)
    return (1.0 - rho) * math.erfc(math.sqrt(delta / 2.0) * a) + 0.5 * rho * (
        math.erf((delta * a + 1.0) / root) + math.erf((delta * a - 1.0) / root)
    )


def ensemble_loss_accuracy(ensemble, alpha: float, model: LossModel):
    """Training loss alpha*<L(y, r)> and accuracy 1 - <theta(-y phi(r))> per time step.

    ``ensemble`` needs ``y`` (paths,) and ``r`` (paths, times).
    """
    y = np.asarray(ensemble.y, dtype=float)[:, None]
    r = np.asarray(ensemble.r, dtype=float)
    if r.shape[0] == 0:
        n_t = r.shape[1]
        return np.zeros(n_t), np.ones(n_t)
    lam = lambda_derivs(model, y, r)[0]
    loss = alpha * lam.mean(axis=0)
    wrong = (y * phi(model, r)) < 0
    acc = 1.0 - wrong.mean(axis=0)
    return loss, acc


@dataclass
class CurvePair:
    times: np.ndarray
    series_a: np.ndarray
    series_b: np.ndarray
    label: str = ""
    times_b: np.ndarray | None = None


def curve_compare(pair: CurvePair):
    """Return (max |a - b|, mean |a - b|, time of the max)."""
    t = np.asarray(pair.times, dtype=float)
    a = np.asarray(pair.series_a, dtype=float)
    b = np.asarray(pair.series_b, dtype=float)
    if pair.times_b is not None and (
        len(pair.times_b) != len(t) or not np.allclose(pair.times_b, t, rtol=0, atol=1e-9)
    ):
        raise ValueError(f"grid mismatch in {pair.label or 'curve pair'}")
    if a.shape != t.shape or b.shape != t.shape:
        raise ValueError(
            f"grid mismatch in {pair.label or 'curve pair'}: "
            f"times {t.shape}, a {a.shape}, b {b.shape}"
        )
    dev = np.abs(a - b)
    k = int(np.argmax(dev))
    return float(dev[k]), float(dev.mean()), float(t[k])
