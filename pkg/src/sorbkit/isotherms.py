"""Closed-form adsorption isotherms.

Every model maps pressure (bar) to uptake (mmol/g) for an ordered parameter
vector.  Parameter names, bounds and analytic parameter gradients are kept
next to the formula so fitting and the network heads share one source.

Units
-----
capacities mmol/g, affinities bar^-1 (bar^-beta for Redlich-Peterson A,
bar^t for Toth b), Temkin b_T J/mol, Dubinin-Radushkevich B mol^2/J^2,
BET p0 bar.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

R_GAS = 8.314  # J/(mol K)
P_MIN = 1e-9  # bar; log-singular models are undefined below this


class DomainError(ValueError):
    """Pressure outside the mathematical domain of an isotherm."""


class IsothermKind(str, enum.Enum):
    LANGMUIR = "langmuir"
    FREUNDLICH = "freundlich"
    BET = "bet"
    SIPS = "sips"
    TOTH = "toth"
    TEMKIN = "temkin"
    DUBININ_RADUSHKEVICH = "dubinin_radushkevich"
    HENRY = "henry"
    REDLICH_PETERSON = "redlich_peterson"

    @classmethod
    def parse(cls, value: "str | IsothermKind") -> "IsothermKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"dr": cls.DUBININ_RADUSHKEVICH, "rp": cls.REDLICH_PETERSON}
        if key in aliases:
            return aliases[key]
        return cls(key)


PARAM_NAMES: dict[IsothermKind, tuple[str, ...]] = {
    IsothermKind.LANGMUIR: ("q_max", "k_l"),
    IsothermKind.FREUNDLICH: ("k_f", "n"),
    IsothermKind.BET: ("q_m", "c", "p0"),
    IsothermKind.SIPS: ("q_max", "k_s", "n_s"),
    IsothermKind.TOTH: ("q_max", "b", "t"),
    IsothermKind.TEMKIN: ("b_t", "k_t"),
    IsothermKind.DUBININ_RADUSHKEVICH: ("q_s", "b"),
    IsothermKind.HENRY: ("k_h",),
    IsothermKind.REDLICH_PETERSON: ("k_rp", "a_rp", "beta"),
}

# Fixed order used for reporting and as the last ranking tie-breaker.
KIND_ORDER: tuple[IsothermKind, ...] = tuple(IsothermKind)

# Index of the parameter that caps uptake, for kinds that saturate.
CAPACITY_INDEX: dict[IsothermKind, int] = {
    IsothermKind.LANGMUIR: 0,
    IsothermKind.SIPS: 0,
    IsothermKind.TOTH: 0,
    IsothermKind.DUBININ_RADUSHKEVICH: 0,
}

# Index of the affinity-like parameter (used as the Van't Hoff K).
AFFINITY_INDEX: dict[IsothermKind, int] = {
    IsothermKind.LANGMUIR: 1,
    IsothermKind.FREUNDLICH: 0,
    IsothermKind.SIPS: 1,
    IsothermKind.TEMKIN: 1,
    IsothermKind.HENRY: 0,
    IsothermKind.REDLICH_PETERSON: 0,
}

# Index of the heterogeneity exponent, where the model has one.
EXPONENT_INDEX: dict[IsothermKind, int] = {
    IsothermKind.FREUNDLICH: 1,
    IsothermKind.SIPS: 2,
    IsothermKind.TOTH: 2,
    IsothermKind.REDLICH_PETERSON: 2,
}


def arity(kind: IsothermKind) -> int:
    return len(PARAM_NAMES[IsothermKind.parse(kind)])


@dataclass(frozen=True)
class Bound:
    """Closed interval ``[low, high]``; ``open_low`` excludes ``low`` itself.

    ``log`` marks parameters spanning several decades, which optimizers
    should search in log10 space.
    """

    low: float
    high: float
    log: bool = False
    open_low: bool = False

    @property
    def effective_low(self) -> float:
        if not self.open_low:
            return self.low
        return self.low + 1e-9 * max(1.0, abs(self.low))

    def contains(self, value: float) -> bool:
        if self.open_low:
            return self.low < value <= self.high
        return self.low <= value <= self.high

    def clip(self, value):
        return np.clip(value, self.effective_low, self.high)


def default_bounds(kind: IsothermKind, p_max: float | None = None) -> tuple[Bound, ...]:
    """Physically meaningful parameter ranges for ``kind``.

    ``p_max`` is the largest observed pressure; it only matters for BET,
    whose saturation pressure is constrained to ``(p_max, 10 p_max]``.
    """
    kind = IsothermKind.parse(kind)
    capacity = Bound(1e-3, 100.0, log=True)
    affinity = Bound(1e-6, 100.0, log=True)
    if kind is IsothermKind.LANGMUIR:
        return (capacity, affinity)
    if kind is IsothermKind.FREUNDLICH:
        return (affinity, Bound(1.0, 10.0, open_low=True))
    if kind is IsothermKind.BET:
        top = 200.0 if p_max is None else float(p_max)
        return (capacity, Bound(1.0, 1e4, log=True), Bound(top, 10.0 * top, open_low=True))
    if kind is IsothermKind.SIPS:
        return (capacity, affinity, Bound(0.1, 10.0, log=True, open_low=True))
    if kind is IsothermKind.TOTH:
        return (capacity, Bound(1e-6, 1e6, log=True), Bound(0.05, 5.0, log=True, open_low=True))
    if kind is IsothermKind.TEMKIN:
        return (Bound(1.0, 1e6, log=True), affinity)
    if kind is IsothermKind.DUBININ_RADUSHKEVICH:
        return (capacity, Bound(1e-12, 1e-2, log=True))
    if kind is IsothermKind.HENRY:
        return (affinity,)
    if kind is IsothermKind.REDLICH_PETERSON:
        return (affinity, affinity, Bound(0.0, 1.0, open_low=True))
    raise ValueError(kind)


def _prepare(kind, theta, p):
    kind = IsothermKind.parse(kind)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (arity(kind),):
        raise ValueError(f"{kind.value} expects {arity(kind)} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("non-finite isotherm parameter")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("pressure must be finite and non-negative")
    if kind in (IsothermKind.TEMKIN, IsothermKind.DUBININ_RADUSHKEVICH) and np.any(p < P_MIN):
        raise DomainError(f"{kind.value} is singular at p < {P_MIN:g} bar")
    if kind is IsothermKind.BET and np.any(p >= theta[2]):
        raise DomainError("BET requires p < p0")
    return kind, theta, p


def _rt(temperature):
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise ValueError("temperature must be positive kelvin")
    return R_GAS * t


def _xlogx_pow(p, expo):
    """Return ``p**expo`` and ``log(p)`` with the p = 0 limits made safe."""
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, safe**expo, 0.0), np.where(p > 0, np.log(safe), 0.0)


def evaluate(kind, theta, p, temperature=298.15):
    """Uptake ``Q(p; theta)`` in mmol/g.

    ``temperature`` (kelvin) is only used by Temkin and Dubinin-Radushkevich.
    Raises :class:`DomainError` when ``p`` lies outside the model domain.
    """
    kind, th, p = _prepare(kind, theta, p)
    return _formula(kind, th, p, temperature)


def evaluate_many(kind, thetas, p, temperature=298.15):
    """Evaluate a stack of parameter vectors at once; returns shape ``(m,) + p.shape``.

    Rows whose parameters leave the model domain (non-finite values, BET
    with ``p >= p0``) come back as NaN instead of raising.
    """
    kind = IsothermKind.parse(kind)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != arity(kind):
        raise ValueError(f"{kind.value} expects {arity(kind)} parameters per row")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("pressure must be finite and non-negative")
    if kind in (IsothermKind.TEMKIN, IsothermKind.DUBININ_RADUSHKEVICH) and np.any(p < P_MIN):
        raise DomainError(f"{kind.value} is singular at p < {P_MIN:g} bar")
    expand = (slice(None),) + (None,) * p.ndim
    th = [col[expand] for col in thetas.T]
    with np.errstate(all="ignore"):
        out = np.asarray(_formula(kind, th, p, temperature), dtype=float)
    bad = ~np.all(np.isfinite(thetas), axis=1)
    if kind is IsothermKind.BET:
        bad |= thetas[:, 2] <= (p.max() if p.size else 0.0)
    out = np.broadcast_to(out, (thetas.shape[0],) + p.shape).copy()
    out[bad] = np.nan
    return out


def _formula(kind, th, p, temperature):
    if kind is IsothermKind.LANGMUIR:
        q_max, k = th
        return q_max * (k * p) / (1.0 + k * p)
    if kind is IsothermKind.FREUNDLICH:
        k, n = th
        return k * _xlogx_pow(p, 1.0 / n)[0]
    if kind is IsothermKind.BET:
        q_m, c, p0 = th
        x = p / p0
        return q_m * c * x / ((1.0 - x) * (1.0 + (c - 1.0) * x))
    if kind is IsothermKind.SIPS:
        q_max, k, n_s = th
        u = _xlogx_pow(k * p, 1.0 / n_s)[0]
        return q_max * u / (1.0 + u)
    if kind is IsothermKind.TOTH:
        q_max, b, t = th
        s = b + _xlogx_pow(p, t)[0]
        return q_max * p / s ** (1.0 / t)
    if kind is IsothermKind.TEMKIN:
        b_t, k_t = th
        return _rt(temperature) / b_t * np.log(k_t * p)
    if kind is IsothermKind.DUBININ_RADUSHKEVICH:
        q_s, b = th
        eps = _rt(temperature) * np.log1p(1.0 / p)
        return q_s * np.exp(-b * eps**2)
    if kind is IsothermKind.HENRY:
        return th[0] * p
    if kind is IsothermKind.REDLICH_PETERSON:
        k, a, beta = th
        return k * p / (1.0 + a * _xlogx_pow(p, beta)[0])
    raise ValueError(kind)


def gradient(kind, theta, p, temperature=298.15):
    """Analytic ``dQ/dtheta``; shape ``p.shape + (arity,)``."""
    kind, th, p = _prepare(kind, theta, p)
    if kind is IsothermKind.LANGMUIR:
        q_max, k = th
        den = 1.0 + k * p
        cols = [k * p / den, q_max * p / den**2]
    elif kind is IsothermKind.FREUNDLICH:
        k, n = th
        pw, lg = _xlogx_pow(p, 1.0 / n)
        cols = [pw, -k * pw * lg / n**2]
    elif kind is IsothermKind.BET:
        q_m, c, p0 = th
        x = p / p0
        d = (1.0 - x) * (1.0 + (c - 1.0) * x)
        dd_dx = -(1.0 + (c - 1.0) * x) + (1.0 - x) * (c - 1.0)
        dq_dx = q_m * c * (d - x * dd_dx) / d**2
        cols = [
            c * x / d,
            q_m * x / d - q_m * c * x * (1.0 - x) * x / d**2,
            dq_dx * (-x / p0),
        ]
    elif kind is IsothermKind.SIPS:
        q_max, k, n_s = th
        u, lg = _xlogx_pow(k * p, 1.0 / n_s)
        dq_du = q_max / (1.0 + u) ** 2
        cols = [u / (1.0 + u), dq_du * u / (n_s * k), dq_du * (-u * lg / n_s**2)]
    elif kind is IsothermKind.TOTH:
        q_max, b, t = th
        pt, lg = _xlogx_pow(p, t)
        s = b + pt
        q = q_max * p / s ** (1.0 / t)
        cols = [
            p / s ** (1.0 / t),
            -q / (t * s),
            q * (np.log(s) / t**2 - pt * lg / (t * s)),
        ]
    elif kind is IsothermKind.TEMKIN:
        b_t, k_t = th
        rt = _rt(temperature) * np.ones_like(p)
        cols = [-rt * np.log(k_t * p) / b_t**2, rt / (b_t * k_t)]
    elif kind is IsothermKind.DUBININ_RADUSHKEVICH:
        q_s, b = th
        eps = _rt(temperature) * np.log1p(1.0 / p)
        e = np.exp(-b * eps**2)
        cols = [e, -q_s * eps**2 * e]
    elif kind is IsothermKind.HENRY:
        cols = [p.copy()]
    elif kind is IsothermKind.REDLICH_PETERSON:
        k, a, beta = th
        pb, lg = _xlogx_pow(p, beta)
        den = 1.0 + a * pb
        cols = [p / den, -k * p * pb / den**2, -k * p * a * pb * lg / den**2]
    else:
        raise ValueError(kind)
    return np.stack([np.broadcast_to(c, p.shape) for c in cols], axis=-1)


@dataclass
class PhysicsCheck:
    """Named physics predicates and the unweighted pass fraction."""

    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def score(self) -> float:
        if not self.checks:
            return 0.0
        return sum(self.checks.values()) / len(self.checks)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def physics_predicates(kind, theta, pressures, temperature=298.15) -> PhysicsCheck:
    """Evaluate physical-consistency predicates on an ascending pressure grid.

    Domain errors count as failures of the uptake-based predicates instead
    of propagating, so any parameter vector yields a score.
    """
    kind = IsothermKind.parse(kind)
    theta = np.asarray(theta, dtype=float)
    grid = np.asarray(pressures, dtype=float)
    checks: dict[str, bool] = {}
    try:
        q = evaluate(kind, theta, grid, temperature)
        ok = bool(np.all(np.isfinite(q)))
    except (DomainError, ValueError, FloatingPointError):
        q, ok = None, False
    scale = float(np.max(np.abs(q))) if ok and q.size else 1.0
    tol = 1e-12 * max(scale, 1.0)
    checks["positivity"] = ok and bool(np.all(q >= -tol))
    checks["monotonicity"] = ok and bool(np.all(np.diff(q) >= -tol))
    if kind in CAPACITY_INDEX:
        cap = theta[CAPACITY_INDEX[kind]]
        checks["saturation"] = ok and bool(np.all(q <= cap * (1.0 + 1e-12) + tol))
    if kind is IsothermKind.FREUNDLICH:
        checks["favorability"] = bool(theta[1] > 1.0)
    checks["parameter_positivity"] = bool(np.all(theta > 0))
    return PhysicsCheck(checks)
