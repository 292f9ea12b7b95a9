"""Model-agnostic explanations: kernel SHAP, accumulated local effects, Friedman's H^2.

Every explainer takes a black-box ``model`` mapping an ``(m, d)`` array to
``m`` scalar outputs and evaluates it in batches.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Model = Callable[[np.ndarray], np.ndarray]

EXACT_MAX_FEATURES = 12
RIDGE = 1e-10
BATCH_ROWS = 200_000
# interaction bands: upper edges of negligible, weak, moderate, strong
H2_BANDS = ((0.05, "negligible"), (0.1, "weak"), (0.3, "moderate"), (0.5, "strong"))


def _evaluate(model: Model, rows: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0])
    for s in range(0, rows.shape[0], BATCH_ROWS):
        out[s:s + BATCH_ROWS] = np.asarray(model(rows[s:s + BATCH_ROWS]), float).reshape(-1)
    return out


def _matrix(X) -> np.ndarray:
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("expected a 2-D array with at least one feature column")
    return X


# --------------------------------------------------------------------- kernel SHAP


@dataclass
class ShapResult:
    base_value: float
    values: np.ndarray  # (n_samples, n_features)
    global_importance: np.ndarray  # mean |value| per feature
    exact: bool
    ridge_fallback: bool = False
    feature_names: list[str] | None = None

    def ranking(self) -> list[int]:
        return [int(i) for i in np.argsort(-self.global_importance, kind="stable")]

    def to_dict(self) -> dict:
        return {"base_value": self.base_value, "values": self.values.tolist(),
                "global_importance": self.global_importance.tolist(), "exact": self.exact,
                "ridge_fallback": self.ridge_fallback, "feature_names": self.feature_names}


def shapley_kernel_weight(d: int, s: int) -> float:
    """Kernel weight of one coalition of size ``s`` among ``d`` features (infinite at 0 and d)."""
    if s in (0, d):
        return math.inf
    return (d - 1) / (math.comb(d, s) * s * (d - s))


def _all_coalitions(d: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.array([[(c >> j) & 1 for j in range(d)] for c in range(1, 2**d - 1)], dtype=bool).reshape(-1, d)
    sizes = masks.sum(axis=1)
    return masks, np.array([shapley_kernel_weight(d, int(s)) for s in sizes])


def _sampled_coalitions(d: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Coalitions drawn with probability proportional to their kernel weight; unit weights."""
    sizes = np.arange(1, d)
    size_mass = (d - 1) / (sizes * (d - sizes))  # total kernel weight of all coalitions of each size
    drawn = rng.choice(sizes, size=n, p=size_mass / size_mass.sum())
    masks = np.zeros((n, d), dtype=bool)
    for row, s in enumerate(drawn):
        masks[row, rng.choice(d, size=s, replace=False)] = True
    return masks, np.ones(n)


def _constrained_wls(masks: np.ndarray, weights: np.ndarray, v: np.ndarray, v0: float, v1: float):
    """Weighted least squares for attributions with ``sum(phi) = v1 - v0`` imposed by substitution."""
    d = masks.shape[1]
    total = v1 - v0
    if d == 1:
        return np.array([total]), False
    z = masks.astype(float)
    A = z[:, :-1] - z[:, -1:]
    b = v - v0 - z[:, -1] * total
    AtW = A.T * weights
    lhs, rhs = AtW @ A, AtW @ b
    fallback = False
    if not np.all(np.isfinite(lhs)) or np.linalg.cond(lhs) > 1.0 / np.finfo(float).eps:
        lhs = lhs + RIDGE * np.eye(d - 1)
        fallback = True
    head = np.linalg.solve(lhs, rhs)
    return np.append(head, total - head.sum()), fallback


def kernel_shap(model: Model, X, background, n_coalitions: int = 2048, seed: int = 0,
                feature_names: Sequence[str] | None = None) -> ShapResult:
    """Kernel SHAP attributions with masked features set to the background mean.

    Up to ``EXACT_MAX_FEATURES`` features every coalition is enumerated, which
    makes the weighted regression reproduce exact Shapley values.  Beyond that
    ``n_coalitions`` coalitions are sampled from the Shapley kernel.  The
    empty and full coalitions enter as hard constraints, so
    ``base_value + values.sum(1)`` reproduces the model output.
    """
    X = _matrix(X)
    background = _matrix(background)
    if background.shape[0] == 0:
        raise ValueError("background set is empty")
    d = X.shape[1]
    if background.shape[1] != d:
        raise ValueError("background and explained rows have different feature counts")
    reference = background.mean(axis=0)
    exact = d <= EXACT_MAX_FEATURES
    if exact:
        masks, weights = _all_coalitions(d)
    else:
        masks, weights = _sampled_coalitions(d, n_coalitions, np.random.default_rng(seed))
    base = float(_evaluate(model, reference[None, :])[0])
    full = _evaluate(model, X)
    values = np.empty_like(X)
    any_fallback = False
    for i, x in enumerate(X):
        rows = np.where(masks, x, reference)
        v = _evaluate(model, rows) if len(rows) else np.empty(0)
        values[i], fb = _constrained_wls(masks, weights, v, base, full[i])
        any_fallback |= fb
    return ShapResult(base, values, np.abs(values).mean(axis=0), exact, any_fallback,
                      None if feature_names is None else list(feature_names))


# ----------------------------------------------------------------------------- ALE


@dataclass
class AleCurve:
    feature: str | int
    bin_edges: np.ndarray
    effects: np.ndarray  # centred accumulated effect at each bin's upper edge
    deltas: np.ndarray  # mean local difference within each bin
    counts: np.ndarray
    standard_error: np.ndarray
    monotonicity: float
    effect_strength: float

    def to_dict(self) -> dict:
        return {"feature": self.feature, "bin_edges": self.bin_edges.tolist(), "effects": self.effects.tolist(),
                "deltas": self.deltas.tolist(), "counts": self.counts.tolist(),
                "standard_error": self.standard_error.tolist(), "monotonicity": self.monotonicity,
                "effect_strength": self.effect_strength}


def monotonicity_fraction(deltas: np.ndarray) -> float:
    """Larger of the fractions of non-negative and non-positive steps."""
    deltas = np.asarray(deltas, float)
    if deltas.size == 0:
        return 1.0
    return float(max(np.mean(deltas >= 0), np.mean(deltas <= 0)))


def ale(model: Model, X, feature: int, n_bins: int = 20, name: str | None = None) -> AleCurve:
    """First-order accumulated local effects of column ``feature``.

    Bins come from quantiles (duplicate edges merged, so discrete features
    get fewer bins).  Effects are centred so their count-weighted mean is 0.
    """
    X = _matrix(X)
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    x = X[:, feature]
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size < 2:
        raise ValueError(f"feature {feature} is constant")
    k = edges.size - 1
    bins = np.clip(np.searchsorted(edges, x, side="left") - 1, 0, k - 1)
    lo, hi = X.copy(), X.copy()
    lo[:, feature] = edges[bins]
    hi[:, feature] = edges[bins + 1]
    local = _evaluate(model, hi) - _evaluate(model, lo)
    counts = np.bincount(bins, minlength=k)
    sums = np.bincount(bins, weights=local, minlength=k)
    deltas = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    sq = np.bincount(bins, weights=local**2, minlength=k)
    var = np.divide(sq, counts, out=np.zeros(k), where=counts > 0) - deltas**2
    se_bin = np.sqrt(np.maximum(var, 0.0) / np.maximum(counts - 1, 1))
    accumulated = np.cumsum(deltas)
    centred = accumulated - np.sum(counts * accumulated) / counts.sum()
    strength = float(math.sqrt(np.sum(counts * centred**2) / counts.sum()))
    return AleCurve(feature if name is None else name, edges, centred, deltas, counts,
                    np.sqrt(np.cumsum(se_bin**2)), monotonicity_fraction(deltas), strength)


# ---------------------------------------------------------------------------- H^2


def _pd(model: Model, X: np.ndarray, cols: Sequence[int], points: np.ndarray) -> np.ndarray:
    """Partial dependence on ``cols`` at each row of ``points``, averaged over all of ``X``."""
    n, m = X.shape[0], points.shape[0]
    rows = np.tile(X, (m, 1))
    for c in cols:
        rows[:, c] = np.repeat(points[:, c], n)
    return _evaluate(model, rows).reshape(m, n).mean(axis=1)


def h_statistic(model: Model, X, pair: tuple[int, int], grid_size: int = 30, seed: int = 0) -> float:
    """Friedman's pairwise interaction statistic on the empirical sample.

    Up to ``grid_size`` sample rows (seeded draw) serve as evaluation points
    for the centred partial dependences; averages run over every row of
    ``X``.  Estimates may exceed 1 slightly and are not clamped.
    """
    X = _matrix(X)
    j, k = pair
    if j == k:
        raise ValueError("H^2 needs two distinct features")
    for c in (j, k):
        if np.ptp(X[:, c]) == 0:
            raise ValueError(f"feature {c} is constant")
    n = X.shape[0]
    pick = np.sort(np.random.default_rng(seed).choice(n, size=min(grid_size, n), replace=False))
    points = X[pick]
    pd_jk = _pd(model, X, (j, k), points)
    pd_j = _pd(model, X, (j,), points)
    pd_k = _pd(model, X, (k,), points)
    pd_jk, pd_j, pd_k = (a - a.mean() for a in (pd_jk, pd_j, pd_k))
    denom = float(np.sum(pd_jk**2))
    if denom < 1e-12:
        return 0.0
    return float(np.sum((pd_jk - pd_j - pd_k) ** 2) / denom)


def classify_interaction(h2: float) -> str:
    for edge, label in H2_BANDS:
        if h2 < edge:
            return label
    return "very_strong"


@dataclass
class HMatrix:
    names: list[str]
    pairs: dict[tuple[str, str], float] = field(default_factory=dict)

    def __getitem__(self, key: tuple[str, str]) -> float:
        a, b = key
        if a == b:
            raise KeyError("diagonal is undefined")
        return self.pairs[(a, b)] if (a, b) in self.pairs else self.pairs[(b, a)]

    def classification(self) -> dict[tuple[str, str], str]:
        return {p: classify_interaction(v) for p, v in self.pairs.items()}

    def as_array(self) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.names)}
        out = np.full((len(self.names),) * 2, np.nan)
        for (a, b), v in self.pairs.items():
            out[idx[a], idx[b]] = out[idx[b], idx[a]] = v
        return out

    def to_dict(self) -> dict:
        return {"names": self.names, "pairs": [{"a": a, "b": b, "h2": v, "class": classify_interaction(v)}
                                               for (a, b), v in self.pairs.items()]}


def h_matrix(model: Model, X, features: Sequence[int] | None = None, names: Sequence[str] | None = None,
             grid_size: int = 30, seed: int = 0) -> HMatrix:
    X = _matrix(X)
    features = list(range(X.shape[1])) if features is None else list(features)
    labels = [str(f) for f in features] if names is None else [names[f] for f in features]
    out = HMatrix(labels)
    for (a, la), (b, lb) in itertools.combinations(zip(features, labels), 2):
        out.pairs[(la, lb)] = h_statistic(model, X, (a, b), grid_size, seed)
    return out
