"""Physics-informed feature construction and preprocessing.

The registry below defines every engineered feature, grouped into seven
categories.  All formulas are per record, so engineering never leaks
information across rows; imputation, scaling and selection learn their
statistics on a training matrix and can be replayed on new rows through
:class:`FeaturePipeline`.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import Dataset, Lithology
from .isotherms import AFFINITY_INDEX, CAPACITY_INDEX, EXPONENT_INDEX, R_GAS, evaluate

log = logging.getLogger(__name__)

T_CRITICAL = 33.19  # K, hydrogen
P_CRITICAL = 13.13  # bar, hydrogen
KINETIC_DIAMETER_NM = 0.289  # H2 kinetic diameter
BOLTZMANN = 1.380649e-23  # J/K
CLAMP = 5.0  # scaled features are clamped to [-CLAMP, CLAMP]

CATEGORIES = (
    "thermodynamic",
    "pore_structure",
    "surface_chemistry",
    "classical_prior",
    "interaction",
    "kinetic",
    "sieving",
)


@dataclass(frozen=True)
class RawInputs:
    """Column view of the measured quantities a feature row is built from."""

    pressure: np.ndarray
    temperature: np.ndarray
    ssa: np.ndarray
    pore_volume: np.ndarray
    pore_diameter: np.ndarray
    lithology: np.ndarray  # lithology values as str
    sample_id: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "RawInputs":
        return cls(
            pressure=ds.column("pressure"),
            temperature=ds.column("temperature"),
            ssa=ds.column("ssa"),
            pore_volume=ds.column("pore_volume"),
            pore_diameter=ds.column("pore_diameter"),
            lithology=np.array([r.lithology.value for r in ds.records], dtype=object),
            sample_id=np.array([r.sample_id for r in ds.records], dtype=object),
        )

    def __len__(self) -> int:
        return len(self.pressure)

    def take(self, idx) -> "RawInputs":
        idx = np.asarray(idx)
        return RawInputs(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def with_pressure(self, pressure) -> "RawInputs":
        return replace(self, pressure=np.broadcast_to(np.asarray(pressure, float), self.pressure.shape).copy())

    def with_temperature(self, temperature) -> "RawInputs":
        return replace(self, temperature=np.broadcast_to(np.asarray(temperature, float), self.temperature.shape).copy())


@dataclass
class FeatureMatrix:
    names: list[str]
    values: np.ndarray
    category: dict[str, str]
    mask: np.ndarray  # True where the source inputs were missing
    flags: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if self.values.shape != (self.values.shape[0], len(self.names)) or self.mask.shape != self.values.shape:
            raise ValueError("values/mask shape does not match names")
        missing = [n for n in self.names if n not in self.category]
        if missing:
            raise ValueError(f"features without category: {missing}")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def subset(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(list(names), self.values[:, idx], {n: self.category[n] for n in names},
                             self.mask[:, idx], dict(self.flags))

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(list(self.names), self.values[idx], dict(self.category), self.mask[idx],
                             dict(self.flags))

    def to_csv(self, path: str | Path, sidecar: Mapping | None = None) -> None:
        """Write values as CSV and categories plus ``sidecar`` as JSON next to it."""
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.names) + "\n")
            for row in self.values:
                fh.write(",".join("" if not np.isfinite(v) else format(v, ".12g") for v in row) + "\n")
        meta = {"categories": self.category, "flags": self.flags}
        if sidecar:
            meta.update(sidecar)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _prior_vectors(raw: RawInputs, priors: Mapping) -> dict[str, np.ndarray]:
    n = len(raw)
    out = {k: np.full(n, np.nan) for k in ("prior_capacity", "prior_affinity", "prior_exponent", "prior_uptake")}
    for i in range(n):
        fit = priors.get(raw.sample_id[i], priors.get(raw.lithology[i]))
        if fit is None:
            continue
        kind, theta = fit.kind, np.asarray(fit.theta, float)
        if kind in CAPACITY_INDEX:
            out["prior_capacity"][i] = theta[CAPACITY_INDEX[kind]]
        if kind in AFFINITY_INDEX:
            out["prior_affinity"][i] = theta[AFFINITY_INDEX[kind]]
        if kind in EXPONENT_INDEX:
            out["prior_exponent"][i] = theta[EXPONENT_INDEX[kind]]
        try:
            out["prior_uptake"][i] = float(evaluate(kind, theta, raw.pressure[i], raw.temperature[i]))
        except ValueError:
            pass
    return out


def engineer_raw(raw: RawInputs, priors: Mapping | None = None) -> FeatureMatrix:
    """Vectorised feature construction from raw columns."""
    p = np.asarray(raw.pressure, float)
    t = np.asarray(raw.temperature, float)
    ssa = np.asarray(raw.ssa, float)
    pv = np.asarray(raw.pore_volume, float)
    d = np.asarray(raw.pore_diameter, float)
    lith = np.asarray(raw.lithology, dtype=object)

    beta = 1.0 / (R_GAS * t)
    p_r = p / P_CRITICAL
    t_r = t / T_CRITICAL
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_free_path = BOLTZMANN * t / (math.sqrt(2.0) * math.pi * (KINETIC_DIAMETER_NM * 1e-9) ** 2 * p * 1e5)
        knudsen = np.where(p > 0, mean_free_path / (d * 1e-9), np.nan)
        log_knudsen = np.log10(knudsen)

    cols: dict[str, tuple[str, np.ndarray]] = {
        "inv_temperature": ("thermodynamic", 1000.0 / t),
        "reduced_temperature": ("thermodynamic", t_r),
        "reduced_pressure": ("thermodynamic", p_r),
        "log_reduced_pressure": ("thermodynamic", np.log(np.maximum(p, 1e-9) / P_CRITICAL)),
        "beta": ("thermodynamic", beta),
        "log_ssa": ("pore_structure", np.log1p(ssa)),
        "log_pore_volume": ("pore_structure", np.log1p(pv)),
        "sqrt_ssa": ("pore_structure", np.sqrt(ssa)),
        "pore_diameter": ("pore_structure", d),
        "pore_diameter_sq": ("pore_structure", d**2),
        "confinement": ("pore_structure", ssa / d),
    }
    for value in Lithology:
        onehot = (lith == value.value).astype(float)
        cols[f"is_{value.value}"] = ("surface_chemistry", onehot)
    for value in Lithology:
        cols[f"{value.value}_ssa"] = ("surface_chemistry", (lith == value.value) * ssa)
    if priors:
        for name, vec in _prior_vectors(raw, priors).items():
            cols[name] = ("classical_prior", vec)
    cols.update({
        "pr_x_tr": ("interaction", p_r * t_r),
        "ssa_x_t": ("interaction", ssa * t),
        "beta_x_p": ("interaction", beta * p),
        "knudsen": ("kinetic", knudsen),
        "log_knudsen": ("kinetic", log_knudsen),
        "sieving_ratio": ("sieving", d / KINETIC_DIAMETER_NM),
        "sieving_open": ("sieving", np.where(np.isfinite(d), (d > KINETIC_DIAMETER_NM).astype(float), np.nan)),
    })
    names = list(cols)
    values = np.column_stack([cols[n][1] for n in names]).astype(float)
    mask = ~np.isfinite(values)
    return FeatureMatrix(names, values, {n: cols[n][0] for n in names}, mask)


def engineer(ds: Dataset | RawInputs, priors: Mapping | None = None) -> FeatureMatrix:
    """Engineer the feature registry for every record.

    ``priors`` maps a sample id (or a lithology value, as fallback) to a fit
    result exposing ``kind`` and ``theta``; when given, classical-prior
    features are added.
    """
    raw = ds if isinstance(ds, RawInputs) else RawInputs.from_dataset(ds)
    return engineer_raw(raw, priors)


# --------------------------------------------------------------------------- imputation


def _robust_center_scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    med = np.median(x, axis=0)
    iqr = np.subtract(*np.percentile(x, [75, 25], axis=0))
    return med, np.where(iqr > 0, iqr, 1.0)


def impute(fm: FeatureMatrix, groups: Sequence[str], k: int = 5,
           reference: tuple[FeatureMatrix, Sequence[str]] | None = None) -> FeatureMatrix:
    """Tiered imputation of masked cells.

    Missing fraction below 10 % uses distance-weighted kNN on the complete
    features (robust-standardised), 10-30 % the global median, above 30 %
    the per-lithology median with global fallback.  ``reference`` supplies
    the un-imputed training matrix and its groups; donors, medians and the
    tier decision then come from it, so held-out rows are filled with
    training statistics only.  Non-missing cells are never modified.
    """
    ref, ref_groups = reference if reference is not None else (fm, groups)
    groups = np.asarray(groups, dtype=object)
    ref_groups = np.asarray(ref_groups, dtype=object)
    if ref.names != fm.names:
        raise ValueError("reference matrix has different features")

    ref_missing = ref.mask.mean(axis=0)
    complete = [j for j in range(len(fm.names)) if not ref.mask[:, j].any() and not fm.mask[:, j].any()]
    med, scl = (None, None)
    if complete:
        med, scl = _robust_center_scale(ref.values[:, complete])

    values = fm.values.copy()
    keep: list[int] = []
    strategy: dict[str, str] = {}
    for j, name in enumerate(fm.names):
        miss = fm.mask[:, j]
        present_ref = ~ref.mask[:, j]
        if not present_ref.any():
            warnings.warn(f"feature {name!r} is missing everywhere; dropped", stacklevel=2)
            continue
        keep.append(j)
        frac = ref_missing[j]
        if frac == 0 and not miss.any():
            strategy[name] = "none"
            continue
        global_median = float(np.median(ref.values[present_ref, j]))
        if frac < 0.10 and complete:
            strategy[name] = "knn"
            donors = ref.values[np.ix_(present_ref, complete)]
            donors = (donors - med) / scl
            target = ref.values[present_ref, j]
            for i in np.flatnonzero(miss):
                q = (fm.values[i, complete] - med) / scl
                dist = np.sqrt(((donors - q) ** 2).sum(axis=1))
                nearest = np.argsort(dist, kind="stable")[:k]
                w = 1.0 / (dist[nearest] + 1e-12)
                values[i, j] = float(np.sum(w * target[nearest]) / np.sum(w))
        elif frac <= 0.30 or (frac < 0.10 and not complete):
            strategy[name] = "median"
            values[miss, j] = global_median
        else:
            strategy[name] = "group_median"
            for g in np.unique(groups[miss]):
                in_group = present_ref & (ref_groups == g)
                fill = float(np.median(ref.values[in_group, j])) if in_group.any() else global_median
                values[miss & (groups == g), j] = fill
    names = [fm.names[j] for j in keep]
    out = FeatureMatrix(names, values[:, keep], {n: fm.category[n] for n in names},
                        np.zeros((fm.n_samples, len(keep)), bool), dict(fm.flags))
    out.flags["imputation"] = [f"{n}:{s}" for n, s in strategy.items() if s != "none"]
    return out


# --------------------------------------------------------------------------- outliers


def _c_factor(n):
    """Average unsuccessful-search path length in a binary search tree of ``n`` points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 2
    out[big] = 2.0 * (np.log(n[big] - 1.0) + np.euler_gamma) - 2.0 * (n[big] - 1.0) / n[big]
    out[n == 2] = 1.0
    return out


class IsolationForest:
    """Isolation forest with random axis-aligned splits.

    Trees are stored as flat arrays; ``score`` returns the standard anomaly
    score ``2 ** (-E[h(x)] / c(psi))`` (higher is more anomalous).
    """

    def __init__(self, n_trees: int = 100, max_samples: int = 256, seed: int = 0):
        self.n_trees = n_trees
        self.max_samples = max_samples
        self.seed = seed
        self._trees: list[tuple[np.ndarray, ...]] = []
        self._psi = 0

    def fit(self, x: np.ndarray) -> "IsolationForest":
        x = np.asarray(x, float)
        n = x.shape[0]
        rng = np.random.default_rng(self.seed)
        psi = min(self.max_samples, n)
        limit = int(math.ceil(math.log2(max(psi, 2))))
        self._psi = psi
        self._trees = []
        for _ in range(self.n_trees):
            sample = x[rng.choice(n, psi, replace=False)]
            self._trees.append(self._grow(sample, limit, rng))
        return self

    @staticmethod
    def _grow(x, limit, rng):
        feat, thr, left, right, size = [], [], [], [], []

        def node(idx, depth):
            me = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), size.append(len(idx))
            if depth >= limit or len(idx) <= 1:
                return me
            sub = x[idx]
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            spread = np.flatnonzero(hi > lo)
            if spread.size == 0:
                return me
            f = int(rng.choice(spread))
            t = float(rng.uniform(lo[f], hi[f]))
            goes_left = sub[:, f] < t
            feat[me], thr[me] = f, t
            left[me] = node(idx[goes_left], depth + 1)
            right[me] = node(idx[~goes_left], depth + 1)
            return me

        node(np.arange(x.shape[0]), 0)
        return tuple(np.asarray(a) for a in (feat, thr, left, right, size))

    def path_lengths(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        total = np.zeros(x.shape[0])
        for feat, thr, left, right, size in self._trees:
            node = np.zeros(x.shape[0], dtype=int)
            depth = np.zeros(x.shape[0])
            active = feat[node] >= 0
            while active.any():
                f = feat[node[active]]
                go_left = x[active, f] < thr[node[active]]
                node[active] = np.where(go_left, left[node[active]], right[node[active]])
                depth[active] += 1
                active = feat[node] >= 0
            total += depth + _c_factor(size[node])
        return total / len(self._trees)

    def score(self, x: np.ndarray) -> np.ndarray:
        c = float(_c_factor(np.array([self._psi]))[0]) or 1.0
        return 2.0 ** (-self.path_lengths(x) / c)


@dataclass
class OutlierReport:
    extreme: np.ndarray  # univariate beyond 3 robust sigma -> removal set
    multivariate: np.ndarray  # isolation-forest top-contamination flags
    winsorized: np.ndarray  # input with moderate outliers clipped to the 1.5 IQR fences
    scores: np.ndarray | None = None

    @property
    def flags(self) -> np.ndarray:
        return self.extreme | self.multivariate

    @property
    def removal(self) -> np.ndarray:
        return self.extreme


def detect_outliers(fm: FeatureMatrix | np.ndarray, contamination: float = 0.1, seed: int = 0,
                    n_trees: int = 100) -> OutlierReport:
    """Univariate IQR screening plus isolation-forest flags.

    Values further than ``3 * IQR / 1.349`` from the median are extreme and
    returned for removal; values beyond the 1.5 IQR fences but inside that
    band are winsorised to the fence.  Zero-IQR columns are skipped.
    """
    x = np.asarray(fm.values if isinstance(fm, FeatureMatrix) else fm, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValueError("outlier detection needs a complete matrix")
    n = x.shape[0]
    q1, med, q3 = np.percentile(x, [25, 50, 75], axis=0)
    iqr = q3 - q1
    usable = iqr > 0
    sigma = np.where(usable, iqr / 1.349, np.inf)
    dev = np.abs(x - med)
    extreme_cells = (dev > 3.0 * sigma) & usable
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    winsorized = np.where(usable & ~extreme_cells, np.clip(x, lo_fence, hi_fence), x)
    extreme = extreme_cells.any(axis=1)

    multivariate = np.zeros(n, dtype=bool)
    scores = None
    if contamination > 0 and n < 8:
        warnings.warn("fewer than 8 rows: isolation forest skipped", stacklevel=2)
    elif contamination > 0:
        forest = IsolationForest(n_trees=n_trees, max_samples=256, seed=seed).fit(x)
        scores = forest.score(x)
        n_flag = int(math.floor(contamination * n + 0.5))
        multivariate[np.argsort(-scores, kind="stable")[:n_flag]] = True
    return OutlierReport(extreme, multivariate, winsorized, scores)


# --------------------------------------------------------------------------- scaling


@dataclass
class ScalerState:
    names: list[str]
    median: np.ndarray
    iqr: np.ndarray
    zero_iqr: list[str]

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.iqr > 0, self.iqr, 1.0)

    def apply(self, fm: FeatureMatrix) -> FeatureMatrix:
        if fm.names != self.names:
            fm = fm.subset(self.names)
        out = FeatureMatrix(list(fm.names), (fm.values - self.median) / self.divisor, dict(fm.category),
                            fm.mask.copy(), dict(fm.flags))
        out.flags["zero_iqr"] = list(self.zero_iqr)
        return out

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.divisor + self.median

    def to_dict(self) -> dict:
        return {"names": self.names, "median": self.median.tolist(), "iqr": self.iqr.tolist(),
                "zero_iqr": self.zero_iqr}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalerState":
        return cls(list(d["names"]), np.asarray(d["median"], float), np.asarray(d["iqr"], float),
                   list(d["zero_iqr"]))


def scale(fm: FeatureMatrix) -> tuple[FeatureMatrix, ScalerState]:
    """Robust scaling ``(x - median) / IQR``; zero-IQR features pass through with divisor 1."""
    if not np.all(np.isfinite(fm.values)):
        raise ValueError("scale needs an imputed matrix")
    q1, med, q3 = np.percentile(fm.values, [25, 50, 75], axis=0)
    iqr = q3 - q1
    state = ScalerState(list(fm.names), med, iqr, [n for n, v in zip(fm.names, iqr) if v <= 0])
    return state.apply(fm), state


# --------------------------------------------------------------------------- selection


@dataclass
class SelectionReport:
    names: list[str]
    scores: dict[str, dict[str, float]]  # method -> feature -> score
    ranks: dict[str, dict[str, int]]
    votes: dict[str, int]
    selected: list[str]
    k: int

    def to_dict(self) -> dict:
        return {"k": self.k, "selected": self.selected, "votes": self.votes, "scores": self.scores,
                "ranks": self.ranks}


def _equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1))[1:-1])
    return np.searchsorted(edges, x, side="right")


def mutual_information(x: np.ndarray, y: np.ndarray, bins: int = 10) -> float:
    """Plug-in mutual information (nats) on equal-frequency bins."""
    bx, by = _equal_frequency_bins(x, bins), _equal_frequency_bins(y, bins)
    joint = np.zeros((bx.max() + 1, by.max() + 1))
    np.add.at(joint, (bx, by), 1.0)
    joint /= joint.sum()
    px, py = joint.sum(axis=1, keepdims=True), joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


def _pearson(x, y) -> float:
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def select(fm: FeatureMatrix, target: np.ndarray, k: int = 25, seed: int = 0,
           n_trees: int = 100) -> SelectionReport:
    """Ensemble feature selection by four-method top-k voting.

    Features are ordered by votes, then by mean rank across methods, then
    by name, so the result does not depend on column order.
    """
    from sklearn.ensemble import RandomForestRegressor

    y = np.asarray(target, float)
    x = fm.values
    n, d = x.shape
    if n <= 10:
        raise ValueError("feature selection needs more than 10 samples")
    if np.ptp(y) == 0:
        raise ValueError("constant target")
    order = sorted(range(d), key=lambda j: fm.names[j])
    x, names = x[:, order], [fm.names[j] for j in order]

    r = np.array([_pearson(x[:, j], y) for j in range(d)])
    r2 = np.clip(r**2, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        f_stat = np.where(r2 < 1.0, r2 / (1.0 - r2) * (n - 2), np.inf)
    mi = np.array([mutual_information(x[:, j], y) for j in range(d)])
    forest = RandomForestRegressor(n_estimators=n_trees, max_depth=8, bootstrap=True, max_features="sqrt",
                                   random_state=seed, n_jobs=1)
    forest.fit(x, y)
    tree = forest.feature_importances_

    methods = {"pearson": np.abs(r), "mutual_information": mi, "tree_importance": tree, "f_statistic": f_stat}
    k_eff = min(k, d)
    scores, ranks = {}, {}
    votes = dict.fromkeys(names, 0)
    for method, vals in methods.items():
        ordering = sorted(range(d), key=lambda j: (-vals[j], names[j]))
        scores[method] = {names[j]: float(vals[j]) for j in range(d)}
        ranks[method] = {names[j]: pos + 1 for pos, j in enumerate(ordering)}
        for j in ordering[:k_eff]:
            votes[names[j]] += 1
    mean_rank = {nm: float(np.mean([ranks[m][nm] for m in methods])) for nm in names}
    final = sorted(names, key=lambda nm: (-votes[nm], mean_rank[nm], nm))
    return SelectionReport(names, scores, ranks, votes, final[:k_eff], k)


# --------------------------------------------------------------------------- splitting


def stratified_split(by: Sequence, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Train/test indices with per-group test counts ``round(fraction * n_group)``."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    labels = np.asarray([getattr(b, "value", b) for b in by], dtype=object)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for g in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == g)
        if len(idx) == 1:
            warnings.warn(f"group {g!r} has a single sample; kept in train", stacklevel=2)
            train.extend(idx.tolist())
            continue
        n_test = min(int(math.floor(test_fraction * len(idx) + 0.5)), len(idx) - 1)
        perm = rng.permutation(idx)
        test.extend(perm[:n_test].tolist())
        train.extend(perm[n_test:].tolist())
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


# --------------------------------------------------------------------------- pipeline


@dataclass
class FeaturePipeline:
    """Engineer -> impute -> robust scale -> select -> clamp, fitted on training rows."""

    reference: FeatureMatrix
    reference_groups: np.ndarray
    scaler: ScalerState
    selected: list[str]
    priors: Mapping | None = None
    selection: SelectionReport | None = None

    @classmethod
    def fit(cls, raw: RawInputs, target: np.ndarray | None = None, k: int | None = 25,
            priors: Mapping | None = None, seed: int = 0) -> "FeaturePipeline":
        fm = engineer_raw(raw, priors)
        groups = np.asarray(raw.lithology, dtype=object)
        filled = impute(fm, groups)
        scaled, state = scale(filled)
        report = None
        selected = list(scaled.names)
        if k is not None and target is not None and k < len(selected):
            report = select(scaled, target, k=k, seed=seed)
            selected = report.selected
        kept = [n for n in fm.names if n in filled.names]
        return cls(fm.subset(kept), groups, state, selected, priors, report)

    @property
    def names(self) -> list[str]:
        return list(self.selected)

    def transform(self, raw: RawInputs) -> np.ndarray:
        fm = engineer_raw(raw, self.priors).subset(self.reference.names)
        filled = impute(fm, np.asarray(raw.lithology, dtype=object), reference=(self.reference, self.reference_groups))
        scaled = self.scaler.apply(filled).subset(self.selected)
        return np.clip(scaled.values, -CLAMP, CLAMP)

    def sidecar(self) -> dict:
        return {
            "scaler": self.scaler.to_dict(),
            "selected": self.selected,
            "selection": None if self.selection is None else self.selection.to_dict(),
        }
