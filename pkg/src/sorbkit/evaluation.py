"""Accuracy metrics, residual diagnostics, paired significance tests, calibration and physics checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import stats

CALIBRATION_Z = {0.68: 1.0, 0.95: 1.96, 0.99: 2.576}
MONOTONE_TOL = 1e-9  # decreases smaller than this are treated as flat


class EvaluationError(ValueError):
    pass


def _vectors(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    if a.size != b.size:
        raise EvaluationError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise EvaluationError("empty input")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.sum(da**2)) * float(np.sum(db**2)))
    return float(np.sum(da * db) / denom) if denom > 0 else math.nan


def spearman(a, b) -> float:
    """Rank correlation with average ranks for ties."""
    a, b = _vectors(a, b)
    return _pearson(stats.rankdata(a), stats.rankdata(b))


# ------------------------------------------------------------------------ metrics


@dataclass
class MetricSet:
    r2: float
    rmse: float
    mae: float
    mape: float  # percent, over nonzero targets
    pearson: float
    spearman: float
    n: int
    mape_skipped: int = 0
    r2_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(y_true, y_pred) -> MetricSet:
    y, p = _vectors(y_true, y_pred)
    err = y - p
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2_defined = ss_tot > 0
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot if r2_defined else math.nan
    nonzero = y != 0
    mape = float(np.mean(np.abs(err[nonzero] / y[nonzero])) * 100.0) if nonzero.any() else math.nan
    return MetricSet(r2, math.sqrt(float(np.mean(err**2))), float(np.mean(np.abs(err))), mape,
                     _pearson(y, p), spearman(y, p), y.size, int((~nonzero).sum()), r2_defined)


# ------------------------------------------------------------------ residual tests


def jarque_bera(residuals) -> tuple[float, float]:
    """Statistic and chi-square(2) p-value from sample skewness and kurtosis."""
    r = np.asarray(residuals, float).ravel()
    n = r.size
    d = r - r.mean()
    m2 = float(np.mean(d**2))
    if m2 == 0:
        return 0.0, 1.0
    skew = float(np.mean(d**3)) / m2**1.5
    kurt = float(np.mean(d**4)) / m2**2
    jb = n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    return jb, float(stats.chi2.sf(jb, 2))


def _ks_normal(z: np.ndarray) -> np.ndarray:
    """Kolmogorov distance of each standardized row to the standard normal CDF."""
    z = np.sort(z, axis=-1)
    n = z.shape[-1]
    cdf = stats.norm.cdf(z)
    i = np.arange(1, n + 1)
    return np.maximum(np.max(i / n - cdf, axis=-1), np.max(cdf - (i - 1) / n, axis=-1))


def _standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, ddof=1, keepdims=True)
    return (x - mu) / sd


@lru_cache(maxsize=32)
def lilliefors_null(n: int, draws: int = 10_000, seed: int = 0) -> np.ndarray:
    """Sorted Monte Carlo null distribution of the estimated-parameter KS statistic."""
    rng = np.random.default_rng([seed, n])
    chunk = max(1, 2_000_000 // n)
    out = [
        _ks_normal(_standardize(rng.standard_normal((min(chunk, draws - s), n))))
        for s in range(0, draws, chunk)
    ]
    null = np.sort(np.concatenate(out))
    null.flags.writeable = False
    return null


def lilliefors(residuals, draws: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """KS normality test with estimated mean and variance; p-value from a cached null table."""
    r = np.asarray(residuals, float).ravel()
    if r.size < 8:
        raise EvaluationError("normality tests need n >= 8")
    if np.ptp(r) == 0:
        return 0.0, 1.0
    d = float(_ks_normal(_standardize(r)))
    null = lilliefors_null(r.size, draws, seed)
    exceed = null.size - np.searchsorted(null, d, side="left")
    return d, float((exceed + 1) / (null.size + 1))


def breusch_pagan(residuals, regressors) -> tuple[float, float]:
    """``n R^2`` of squared residuals on the regressors, chi-square with k degrees of freedom."""
    e2 = np.asarray(residuals, float).ravel() ** 2
    X = np.asarray(regressors, float)
    X = X.reshape(e2.size, -1)
    k = X.shape[1]
    A = np.column_stack([np.ones(e2.size), X])
    coef, *_ = np.linalg.lstsq(A, e2, rcond=None)
    fitted = A @ coef
    ss_tot = float(np.sum((e2 - e2.mean()) ** 2))
    r2 = 1.0 - float(np.sum((e2 - fitted) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    lm = e2.size * r2
    return lm, float(stats.chi2.sf(lm, k))


@dataclass
class ResidualTests:
    n: int
    jarque_bera: float
    jarque_bera_p: float
    lilliefors: float
    lilliefors_p: float
    breusch_pagan: float | None = None
    breusch_pagan_p: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def residual_tests(residuals, regressors=None, draws: int = 10_000, seed: int = 0) -> ResidualTests:
    r = np.asarray(residuals, float).ravel()
    if r.size < 8:
        raise EvaluationError("residual tests need n >= 8")
    jb, jb_p = jarque_bera(r)
    ks, ks_p = lilliefors(r, draws, seed)
    out = ResidualTests(r.size, jb, jb_p, ks, ks_p)
    if regressors is not None:
        out.breusch_pagan, out.breusch_pagan_p = breusch_pagan(r, regressors)
    return out


# -------------------------------------------------------------------- paired tests


@dataclass
class WilcoxonResult:
    statistic: float  # W+ minus its null mean; flips sign when a and b swap
    z: float
    p: float
    n_used: int
    degenerate: bool = False


def wilcoxon(a, b) -> WilcoxonResult:
    """Signed-rank test, zero differences dropped, normal approximation with continuity correction."""
    a, b = _vectors(a, b)
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 1.0, 0, True)
    if n < 6:
        raise EvaluationError("Wilcoxon normal approximation needs at least 6 nonzero differences")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    centred = w_plus - n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return WilcoxonResult(centred, 0.0, 1.0, n, True)
    z = math.copysign(max(abs(centred) - 0.5, 0.0), centred) / math.sqrt(var)
    return WilcoxonResult(centred, z, min(1.0, 2.0 * float(stats.norm.sf(abs(z)))), n)


@dataclass
class FriedmanResult:
    statistic: float
    p: float
    k: int
    n: int


def friedman(*groups) -> FriedmanResult:
    """Friedman chi-square over within-sample ranks with tie correction."""
    if len(groups) < 3:
        raise EvaluationError("Friedman test needs at least three models")
    data = np.column_stack([np.asarray(g, float).ravel() for g in groups])
    if len({np.asarray(g).size for g in groups}) != 1:
        raise EvaluationError("all error vectors must have equal length")
    n, k = data.shape
    ranks = np.apply_along_axis(stats.rankdata, 1, data)
    r_sum = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(r_sum**2)) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in data:
        _, c = np.unique(row, return_counts=True)
        ties += float(np.sum(c**3 - c))
    correction = 1.0 - ties / (n * (k**3 - k))
    if correction <= 0:
        return FriedmanResult(0.0, 1.0, k, n)
    chi2 = max(chi2 / correction, 0.0)
    return FriedmanResult(chi2, float(stats.chi2.sf(chi2, k - 1)), k, n)


@dataclass
class PairedTests:
    wilcoxon: dict[tuple[int, int], WilcoxonResult] = field(default_factory=dict)
    friedman: FriedmanResult | None = None


def paired_tests(*errors) -> PairedTests:
    """Wilcoxon for every pair of error vectors; Friedman when three or more are given."""
    if len(errors) < 2:
        raise EvaluationError("need at least two error vectors")
    out = PairedTests()
    for i in range(len(errors)):
        for j in range(i + 1, len(errors)):
            out.wilcoxon[(i, j)] = wilcoxon(errors[i], errors[j])
    if len(errors) >= 3:
        out.friedman = friedman(*errors)
    return out


# --------------------------------------------------------------------- calibration


@dataclass
class CalibrationReport:
    levels: list[float]
    z: list[float]
    coverage: list[float]
    sigma_error_spearman: float

    def to_dict(self) -> dict:
        return asdict(self)


def calibration(y_true, mean, sigma_total, levels: Sequence[float] = (0.68, 0.95, 0.99)) -> CalibrationReport:
    y, m = _vectors(y_true, mean)
    s = np.broadcast_to(np.asarray(sigma_total, float), y.shape)
    if np.any(~(s > 0)):
        raise EvaluationError("sigma must be positive")
    zs = [CALIBRATION_Z.get(lv, float(stats.norm.ppf(0.5 + lv / 2.0))) for lv in levels]
    err = np.abs(y - m)
    cov = [float(np.mean(err <= z * s)) for z in zs]
    rho = spearman(s, err) if y.size > 1 else math.nan
    return CalibrationReport(list(levels), zs, cov, rho)


# ------------------------------------------------------------- physics consistency


@dataclass
class PhysicsConsistency:
    negativity: float
    monotonicity: float
    saturation: float | None
    score: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _sweep(model, pressures, temperatures):
    p = np.asarray(pressures, float)
    t = np.asarray(temperatures, float)
    if p.ndim != 1 or p.size < 2 or np.any(np.diff(p) <= 0):
        raise EvaluationError("pressure sweep must be strictly increasing with two or more points")
    gp, gt = np.meshgrid(p, t)
    out = model(gp, gt)
    q, q_max = out if isinstance(out, tuple) else (out, None)
    q = np.broadcast_to(np.asarray(q, float), gp.shape)
    if q_max is not None:
        q_max = np.broadcast_to(np.asarray(q_max, float), gp.shape)
    return q, q_max


def physics_consistency(model: Callable | Sequence[Callable], pressures, temperatures) -> PhysicsConsistency:
    """Violation rates of a model (or several) over a pressure x temperature grid.

    ``model(P, T)`` returns uptake on the grid, or ``(uptake, capacity)`` when
    a saturation limit is available.  Rates are averaged over models and the
    score is one minus the mean of the available rates.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model]
    neg, mono, sat = [], [], []
    n_points = 0
    for m in models:
        q, q_max = _sweep(m, pressures, temperatures)
        n_points += q.size
        neg.append(float(np.mean(q < 0)))
        mono.append(float(np.mean(np.diff(q, axis=1) < -MONOTONE_TOL)))
        if q_max is not None:
            sat.append(float(np.mean(q > q_max)))
    rates = [float(np.mean(neg)), float(np.mean(mono))]
    saturation = float(np.mean(sat)) if sat and len(sat) == len(models) else None
    if saturation is not None:
        rates.append(saturation)
    return PhysicsConsistency(rates[0], rates[1], saturation, 1.0 - float(np.mean(rates)), n_points)
