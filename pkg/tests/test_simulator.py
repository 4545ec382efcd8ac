import math

import numpy as np
import pytest

from sgdmft.model import Dataset, MixtureSpec
from sgdmft.simulator import (
    RunParams,
    average_series,
    gd_step,
    init_weights,
    initial_mask,
    masked_loss,
    mc_generalization,
    run_seeds,
    run_training,
    step_mask,
    transition_probabilities,
)

TWO = MixtureSpec("two", 0.5)


def test_init_weights():
    assert np.all(init_weights(7, 0.0, np.random.default_rng(0)) == 0)
    w = init_weights(10_000, 1.0, np.random.default_rng(0))
    assert 0.94 <= w @ w / 1e4 <= 1.06
    assert np.array_equal(init_weights(50, 0.3, np.random.default_rng(9)), init_weights(50, 0.3, np.random.default_rng(9)))


def test_params_validation():
    with pytest.raises(ValueError):
        RunParams(alpha=2, d=10, b=0.5, mask_scheme="full")
    with pytest.raises(ValueError):
        RunParams(alpha=2, d=10, b=0.1, tau=1 / 0.6, eta=0.2, mask_scheme="persistent")
    RunParams(alpha=2, d=10, b=0.1, tau=1 / 0.6, eta=0.2, mask_scheme="persistent", clip_transitions=True)


def test_transition_probabilities():
    assert transition_probabilities(1.0, 2.0, 0.2) == (0.1, 0.0)
    p_on, p_off = transition_probabilities(0.1, 1 / 0.6, 0.2, clip=True)
    assert p_off == 1.0 and p_on == pytest.approx(0.12)


def test_persistent_full_batch_limit():
    p = RunParams(alpha=1, d=10, b=1.0, mask_scheme="persistent")
    rng = np.random.default_rng(0)
    s = initial_mask(p, 200, rng)
    for _ in range(50):
        s = step_mask(p, s, rng)
        assert np.all(s == 1)


def test_sgd_mask_fraction():
    p = RunParams(alpha=1, d=10, b=0.3, mask_scheme="sgd")
    rng = np.random.default_rng(0)
    s = step_mask(p, np.ones(100_000), rng)
    assert abs(s.mean() - 0.3) < 4 * math.sqrt(0.21 / 1e5)


def _instance(rng, d, n):
    x = rng.standard_normal((n, d))
    y = rng.choice([-1.0, 1.0], size=n)
    return Dataset(patterns=x, labels=y, coefficients=y.astype(int))


def test_empty_mask_step():
    rng = np.random.default_rng(2)
    data = _instance(rng, 4, 3)
    w = rng.standard_normal(4)
    model = TWO.loss_model()
    p = RunParams(alpha=0.75, d=4, lam=0.0)
    assert np.array_equal(gd_step(p, w, data, np.zeros(3), model), w)
    p = RunParams(alpha=0.75, d=4, lam=0.7)
    assert gd_step(p, w, data, np.zeros(3), model) == pytest.approx((1 - 0.2 * 0.7) * w)


@pytest.mark.parametrize("act", ["two", "three"])
def test_step_matches_finite_difference(act):
    spec = MixtureSpec(act, 0.3)
    model = spec.loss_model()
    rng = np.random.default_rng(4)
    data = _instance(rng, 4, 3)
    w = rng.standard_normal(4)
    mask = np.array([1.0, 0.0, 1.0])
    p = RunParams(alpha=0.75, d=4, lam=0.3, eta=0.1)
    eps = 1e-6
    grad = np.array(
        [
            (masked_loss(p, w + eps * e, data, mask, model) - masked_loss(p, w - eps * e, data, mask, model)) / (2 * eps)
            for e in np.eye(4)
        ]
    )
    assert gd_step(p, w, data, mask, model) - w == pytest.approx(-p.eta * grad, rel=1e-5, abs=1e-9)


def test_no_data_keeps_weights():
    p = RunParams(alpha=0.0, d=50, horizon=2.0)
    s = run_training(TWO, p)
    assert np.allclose(s.m, s.m[0]) and np.allclose(s.q, s.q[0])
    assert np.allclose(s.gen_err, s.gen_err[0])


def test_ridge_decay_without_data():
    p = RunParams(alpha=0.0, d=50, lam=1.0, eta=0.1, horizon=2.0, R=1.0)
    s = run_training(TWO, p)
    k = np.arange(len(s.q))
    assert s.q == pytest.approx(s.q[0] * (1 - p.eta * p.lam) ** (2 * k), rel=1e-10)


def test_full_batch_training_accuracy_reaches_one():
    p = RunParams(alpha=2, d=500, eta=0.2, R=0.01, horizon=20)
    s = run_training(TWO, p, np.random.default_rng(0))
    assert s.train_acc.max() == 1.0
    assert len(s.times) == 101 and s.times[-1] == pytest.approx(20.0)


def test_full_batch_training_eventually_interpolates():
    p = RunParams(alpha=2, d=500, eta=0.2, R=0.01, horizon=100)
    s = run_training(TWO, p, np.random.default_rng(0))
    assert s.train_acc[-1] == 1.0


def test_zero_weights_error_half():
    p, se = mc_generalization(np.zeros(20), TWO, 10_000, np.random.default_rng(0))
    assert abs(p - 0.5) < 4 * 0.005


def test_aligned_weights_match_closed_form():
    # w = kappa v*: field = kappa (c + sqrt(delta) zeta) for any kappa > 0
    d = 100
    p, se = mc_generalization(5.0 * np.ones(d), TWO, 200_000, np.random.default_rng(1))
    ref = 0.5 * math.erfc(1 / math.sqrt(2 * TWO.delta))
    assert abs(p - ref) < 3 * se


def test_mc_audit_agrees_with_closed_form():
    p = RunParams(alpha=2, d=2000, horizon=2.0, eta=0.2)
    s = run_training(TWO, p, np.random.default_rng(3), n_test=20_000)
    z = np.abs(s.stderr["gen_err_mc"] - s.gen_err) / np.maximum(s.stderr["gen_err_mc_se"], 1e-12)
    assert np.mean(z < 3) > 0.9


def test_seeds_independent_of_workers():
    p = RunParams(alpha=2, d=100, horizon=2.0, b=0.5, mask_scheme="sgd")
    a = run_seeds(TWO, p, 4, workers=1)
    b = run_seeds(TWO, p, 4, workers=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.gen_err, y.gen_err)
    assert not np.array_equal(a[0].m, a[1].m)


def test_average_series():
    p = RunParams(alpha=2, d=100, horizon=1.0)
    runs = run_seeds(TWO, p, 3)
    avg = average_series(runs)
    stack = np.stack([r.q for r in runs])
    assert avg.q == pytest.approx(stack.mean(axis=0))
    assert avg.stderr["q"] == pytest.approx(stack.std(axis=0, ddof=1) / math.sqrt(3))
