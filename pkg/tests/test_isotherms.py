import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sorbkit.isotherms import (
    DomainError,
    IsothermKind as K,
    arity,
    default_bounds,
    evaluate,
    gradient,
    physics_predicates,
)

# Parameter ranges where every model has a non-degenerate response on
# [0.01, 100] bar at 298 K.
TYPICAL = {
    K.LANGMUIR: [(0.1, 10), (1e-3, 1.0)],
    K.FREUNDLICH: [(0.01, 1.0), (1.2, 5.0)],
    K.BET: [(0.1, 5), (2, 200), (150, 400)],
    K.SIPS: [(0.1, 10), (1e-3, 1.0), (0.3, 3.0)],
    K.TOTH: [(0.1, 10), (0.5, 50), (0.3, 2.0)],
    K.TEMKIN: [(1e3, 5e4), (0.5, 50)],
    K.DUBININ_RADUSHKEVICH: [(0.1, 5), (1e-9, 1e-7)],
    K.HENRY: [(1e-3, 1.0)],
    K.REDLICH_PETERSON: [(1e-3, 1.0), (1e-3, 1.0), (0.3, 1.0)],
}


def draw(kind, rng):
    return np.array([math.exp(rng.uniform(math.log(lo), math.log(hi))) for lo, hi in TYPICAL[kind]])


def test_langmuir_half_saturation():
    assert evaluate(K.LANGMUIR, [1.0, 0.5], 2.0) == pytest.approx(0.5, abs=1e-15)


def test_henry_linear():
    assert evaluate(K.HENRY, [0.01], 10.0) == pytest.approx(0.1, rel=1e-15)


def test_sips_unit_exponent_is_langmuir():
    p = np.logspace(-3, 2, 20)
    for q_max, k in [(1.0, 0.5), (3.3, 1e-3), (0.2, 20.0)]:
        diff = evaluate(K.SIPS, [q_max, k, 1.0], p) - evaluate(K.LANGMUIR, [q_max, k], p)
        assert np.max(np.abs(diff)) == 0.0


def test_redlich_peterson_unit_beta_is_langmuir():
    p = np.logspace(-3, 2, 20)
    q_max, k = 2.0, 0.3
    rp = evaluate(K.REDLICH_PETERSON, [q_max * k, k, 1.0], p)
    np.testing.assert_allclose(rp, evaluate(K.LANGMUIR, [q_max, k], p), rtol=1e-14)


def test_toth_unit_exponent_is_langmuir():
    p = np.logspace(-3, 2, 20)
    q_max, k = 2.0, 0.3
    toth = evaluate(K.TOTH, [q_max, 1.0 / k, 1.0], p)
    np.testing.assert_allclose(toth, evaluate(K.LANGMUIR, [q_max, k], p), rtol=1e-14)


def test_langmuir_capacity_gradient():
    p = np.array([0.1, 1.0, 50.0])
    g = gradient(K.LANGMUIR, [1.7, 0.2], p)
    np.testing.assert_allclose(g[:, 0], 0.2 * p / (1 + 0.2 * p), rtol=1e-15)


def test_henry_gradient_is_pressure():
    p = np.array([0.0, 3.0, 7.5])
    np.testing.assert_array_equal(gradient(K.HENRY, [0.4], p)[:, 0], p)


@pytest.mark.parametrize("kind", list(K))
def test_gradient_matches_central_differences(kind):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        theta = draw(kind, rng)
        hi = theta[2] * 0.95 if kind is K.BET else 100.0
        p = float(np.exp(rng.uniform(np.log(0.01), np.log(hi))))
        analytic = gradient(kind, theta, p, 298.15)
        fd = np.empty_like(analytic)
        for i in range(len(theta)):
            h = 1e-6 * abs(theta[i])
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (evaluate(kind, up, p) - evaluate(kind, dn, p)) / (2 * h)
            # round-off resolution of the difference quotient itself
            roundoff = 8 * np.finfo(float).eps * abs(evaluate(kind, theta, p)) / h
            excess = max(abs(analytic[i] - fd[i]) - roundoff, 0.0)
            worst = max(worst, float(excess / abs(analytic[i])))
    assert worst < 1e-5


@pytest.mark.parametrize("kind", [K.TEMKIN, K.DUBININ_RADUSHKEVICH])
def test_log_models_reject_zero_pressure(kind):
    with pytest.raises(DomainError):
        evaluate(kind, draw(kind, np.random.default_rng(0)), 0.0)


def test_bet_rejects_pressure_at_p0():
    with pytest.raises(DomainError):
        evaluate(K.BET, [1.0, 10.0, 5.0], [1.0, 5.0])


def test_wrong_arity_rejected():
    with pytest.raises(ValueError):
        evaluate(K.SIPS, [1.0, 0.5], 1.0)


def test_bounds_examples():
    q, k = default_bounds(K.LANGMUIR)
    assert (q.low, q.high, k.low, k.high) == (0.001, 100.0, 1e-6, 100.0)
    beta = default_bounds(K.REDLICH_PETERSON)[2]
    assert beta.contains(1.0) and not beta.contains(0.0)
    n = default_bounds(K.FREUNDLICH)[1]
    assert not n.contains(1.0) and n.contains(1.0 + 1e-6)
    p0 = default_bounds(K.BET, p_max=50.0)[2]
    assert not p0.contains(50.0) and p0.contains(500.0) and not p0.contains(501.0)


@pytest.mark.parametrize("kind", list(K))
def test_bounds_arity(kind):
    assert len(default_bounds(kind)) == arity(kind)


def test_predicates_valid_langmuir():
    check = physics_predicates(K.LANGMUIR, [1.0, 0.5], np.logspace(-2, np.log10(200), 50))
    assert check.passed and check.score == 1.0


def test_predicates_unfavourable_freundlich():
    check = physics_predicates(K.FREUNDLICH, [0.1, 0.9], np.logspace(-2, 2, 20))
    assert check.checks["favorability"] is False
    assert check.score < 1.0


def test_predicates_temkin_negative_at_low_pressure():
    check = physics_predicates(K.TEMKIN, [1e4, 1.0], np.logspace(-3, 2, 20))
    assert check.checks["positivity"] is False


def test_predicates_absorb_domain_errors():
    check = physics_predicates(K.TEMKIN, [1e4, 1.0], np.array([0.0, 1.0]))
    assert check.checks["positivity"] is False and check.checks["monotonicity"] is False


MONOTONE = [K.LANGMUIR, K.HENRY, K.SIPS, K.TOTH, K.TEMKIN, K.DUBININ_RADUSHKEVICH,
            K.REDLICH_PETERSON, K.FREUNDLICH, K.BET]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(MONOTONE), st.integers(0, 2**31 - 1))
def test_monotone_on_random_parameters(kind, seed):
    rng = np.random.default_rng(seed)
    theta = draw(kind, rng)
    top = theta[2] * 0.999 if kind is K.BET else 200.0
    grid = np.logspace(-3, np.log10(top), 100)
    q = evaluate(kind, theta, grid)
    assert np.all(np.diff(q) >= -1e-12 * np.max(np.abs(q)))


@pytest.mark.parametrize("kind", [K.LANGMUIR, K.SIPS, K.TOTH])
def test_saturating_limit(kind):
    # parameters whose half-saturation pressure sits well below 1e6 bar
    strong = {K.LANGMUIR: [(0.1, 10), (0.1, 10)], K.SIPS: [(0.1, 10), (0.1, 10), (0.3, 1.2)],
              K.TOTH: [(0.1, 10), (0.1, 5), (1.0, 2.0)]}
    rng = np.random.default_rng(3)
    for _ in range(10):
        theta = np.array([rng.uniform(lo, hi) for lo, hi in strong[kind]])
        assert evaluate(kind, theta, 1e6) == pytest.approx(theta[0], rel=1e-3)


@pytest.mark.parametrize("kind", [k for k in K if k is not K.TEMKIN])
def test_vanishes_at_low_pressure(kind):
    theta = draw(kind, np.random.default_rng(11))
    assert abs(evaluate(kind, theta, 1e-9)) < 1e-3
