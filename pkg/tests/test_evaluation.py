import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sorbkit.evaluation import (
    EvaluationError,
    breusch_pagan,
    calibration,
    friedman,
    jarque_bera,
    lilliefors,
    metrics,
    paired_tests,
    physics_consistency,
    residual_tests,
    spearman,
    wilcoxon,
)
from sorbkit.isotherms import evaluate

# y = 1..6, prediction below; values from exact rational arithmetic:
# SSE = 7/20, SST = 35/2, cov = 333/20, var(pred) = 9689/600
HAND_Y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
HAND_P = [1.1, 1.9, 3.2, 3.8, 5.3, 5.6]
HAND = {"r2": 0.98, "rmse": 0.24152294576982397, "mae": 0.21666666666666667, "mape": 6.555555555555555,
        "pearson": 0.9904472733451554, "spearman": 1.0}
# ranks (1..6) against (2, 1, 4, 3, 5.5, 5.5): cov 15, var 35/2 and 17
TIED_SPEARMAN = 0.8696565534786727


def test_hand_oracle_metrics():
    m = metrics(HAND_Y, HAND_P)
    for k, v in HAND.items():
        assert getattr(m, k) == pytest.approx(v, rel=1e-12, abs=1e-12), k
    assert spearman([1, 2, 3, 4, 5, 6], [2, 1, 4, 3, 6, 6]) == pytest.approx(TIED_SPEARMAN, rel=1e-12)


def test_metric_identities_and_errors():
    y = np.array([0.5, 1.0, 2.0, 0.0])
    perfect = metrics(y, y)
    assert perfect.r2 == 1.0 and perfect.rmse == 0.0 and perfect.pearson == pytest.approx(1.0)
    assert perfect.mape_skipped == 1
    assert metrics(y, np.full(4, y.mean())).r2 == pytest.approx(0.0, abs=1e-15)
    flat = metrics([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    assert math.isnan(flat.r2) and not flat.r2_defined
    with pytest.raises(EvaluationError):
        metrics([1.0, 2.0], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.integers(0, 1000))
def test_r2_equals_pearson_squared_for_affine_truth(a, b, seed):
    y = np.random.default_rng(seed).normal(size=30)
    pred = (y - b) / a  # truth is an affine map of the prediction with positive slope
    m = metrics(y, pred)
    fitted = metrics(y, np.polyval(np.polyfit(pred, y, 1), pred))
    assert fitted.r2 == pytest.approx(m.pearson**2, rel=1e-9)
    assert -1 <= m.spearman <= 1 and m.r2 <= 1


def test_jarque_bera_matches_reference_route():
    r = np.random.default_rng(0).standard_t(5, size=300)
    ref = stats.jarque_bera(r)
    jb, p = jarque_bera(r)
    assert jb == pytest.approx(ref.statistic, rel=1e-10) and p == pytest.approx(ref.pvalue, rel=1e-8)


def test_jarque_bera_heavy_tails_rejected():
    rejected = sum(jarque_bera(np.random.default_rng(s).standard_t(2, size=500))[1] < 0.01 for s in range(20))
    assert rejected > 10


def test_lilliefors_behaviour():
    normal_rejects = sum(lilliefors(np.random.default_rng(s).normal(size=60), draws=4000)[1] < 0.05
                         for s in range(60))
    assert normal_rejects <= 0.07 * 60
    skewed = np.random.default_rng(1).exponential(size=200)
    assert lilliefors(skewed, draws=4000)[1] < 0.01
    a = lilliefors(skewed, draws=4000, seed=3)
    assert a == lilliefors(skewed, draws=4000, seed=3)
    with pytest.raises(EvaluationError):
        lilliefors(np.ones(5))


def test_breusch_pagan():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, size=500)
    hetero = rng.normal(size=500) * np.sqrt(0.05 + 2 * x)
    assert breusch_pagan(hetero, x)[1] < 0.01
    res = residual_tests(rng.normal(size=500), regressors=x, draws=2000)
    assert res.breusch_pagan_p is not None and res.n == 500
    with pytest.raises(EvaluationError):
        residual_tests(np.ones(4))


def test_wilcoxon_matches_reference_route():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=40), rng.normal(0.3, 1.0, size=40)
    ours = wilcoxon(a, b)
    ref = stats.wilcoxon(a, b, correction=True, method="approx")
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-10)


def test_wilcoxon_shift_antisymmetry_and_degenerate():
    a = np.random.default_rng(4).normal(size=50)
    assert wilcoxon(a + 0.5, a).p < 0.01
    ab, ba = wilcoxon(a, a + 0.2 * np.sin(np.arange(50))), wilcoxon(a + 0.2 * np.sin(np.arange(50)), a)
    assert ab.statistic == -ba.statistic and ab.p == ba.p
    same = wilcoxon(a, a)
    assert same.degenerate and same.p == 1.0


def test_friedman_matches_reference_and_null():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 3))
    ours = friedman(x[:, 0], x[:, 1] + 0.3, x[:, 2])
    ref = stats.friedmanchisquare(x[:, 0], x[:, 1] + 0.3, x[:, 2])
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
    e = rng.normal(size=20)
    ident = friedman(e, e, e)
    assert ident.statistic == 0.0 and ident.p == 1.0
    out = paired_tests(e, e + 1, e - 1)
    assert set(out.wilcoxon) == {(0, 1), (0, 2), (1, 2)} and out.friedman is not None


def test_calibration_sampling_oracle():
    rng = np.random.default_rng(6)
    mean = rng.normal(size=10_000)
    sigma = rng.uniform(0.5, 2.0, size=10_000)
    y = mean + sigma * rng.normal(size=10_000)
    rep = calibration(y, mean, sigma)
    for level, cov in zip(rep.levels, rep.coverage):
        assert abs(cov - level) < 0.02
    wider = calibration(y, mean, 2 * sigma)
    assert all(w >= c for w, c in zip(wider.coverage, rep.coverage))
    assert rep.coverage == sorted(rep.coverage)
    assert calibration([1.0, 2.0], [0.0, 0.0], [1e-300, 1e-300]).coverage == [0.0, 0.0, 0.0]
    with pytest.raises(EvaluationError):
        calibration([1.0], [1.0], [0.0])


SWEEP_P = np.geomspace(0.1, 200, 50)
SWEEP_T = np.linspace(273.15, 348.15, 10)


def test_physics_consistency_reference_models():
    langmuir = lambda P, T: (evaluate("langmuir", [2.0, 0.05], P, T), np.full(np.shape(P), 2.0))
    assert physics_consistency(langmuir, SWEEP_P, SWEEP_T).score == 1.0
    neg = physics_consistency(lambda P, T: -np.ones(np.shape(P)), SWEEP_P, SWEEP_T)
    assert neg.negativity == 1.0 and neg.saturation is None
    bumpy = physics_consistency(lambda P, T: np.cos(np.log(P)), SWEEP_P, SWEEP_T)
    assert 0 < bumpy.monotonicity < 1 and bumpy.score < 1
    with pytest.raises(EvaluationError):
        physics_consistency(langmuir, [1.0], SWEEP_T)
