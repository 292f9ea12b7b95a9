"""Temperature dependence of fitted isotherms.

Van't Hoff analysis regresses ``ln K`` on ``1/T`` for ``K(T) = K0 exp(-dH / RT)``,
so ``dH < 0`` means exothermic adsorption.  Isosteric heats come from the
Clausius-Clapeyron slope of ``ln p`` against ``1/T`` at fixed loading and are
reported as a positive magnitude for exothermic adsorption.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .isotherms import AFFINITY_INDEX, CAPACITY_INDEX, R_GAS, DomainError, IsothermKind, evaluate

P_BRACKET = (1e-9, 1e7)  # bar
STANDARD_STATE = "K taken as dimensionless against a 1 bar^-1 reference"


class ThermoError(ValueError):
    pass


@dataclass
class VantHoffResult:
    K0: float
    dH: float  # J/mol
    dS: float  # J/(mol K)
    dG_at: dict[float, float]
    r2: float
    n_temps: int
    standard_state: str = STANDARD_STATE

    def to_dict(self) -> dict:
        return {"K0": self.K0, "dH": self.dH, "dS": self.dS,
                "dG_at": {format(t, ".6g"): g for t, g in self.dG_at.items()},
                "r2": self.r2, "n_temps": self.n_temps, "standard_state": self.standard_state}


@dataclass
class IsostericCurve:
    loadings: list[float]
    qst: list[float]  # J/mol, positive for exothermic adsorption
    temps_used: list[float]
    pressures: dict[float, list[float]] = field(default_factory=dict)  # inverted p per temperature
    residuals: list[float] = field(default_factory=list)  # worst |Q(p*) - q| per loading

    def to_dict(self) -> dict:
        return {"loadings": self.loadings, "qst": self.qst, "temps_used": self.temps_used,
                "pressures": {format(t, ".6g"): v for t, v in self.pressures.items()},
                "residuals": self.residuals}


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def vant_hoff(k_by_t: Sequence[tuple[float, float]] | Mapping[float, float]) -> VantHoffResult:
    """Fit ``ln K = ln K0 - dH / (R T)``.

    Points are sorted by temperature first, so the result does not depend on
    input order.  ``dS = R ln K0`` follows the 1 bar^-1 standard state.
    """
    pairs = sorted((k_by_t.items() if isinstance(k_by_t, Mapping) else k_by_t), key=lambda tk: (tk[0], tk[1]))
    t = np.array([float(a) for a, _ in pairs])
    k = np.array([float(b) for _, b in pairs])
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise ThermoError("temperatures must be positive kelvin")
    if np.any(~np.isfinite(k)) or np.any(k <= 0):
        raise ThermoError("affinity constants must be positive")
    if np.unique(t).size < 2:
        raise ThermoError("need at least two distinct temperatures")
    slope, intercept, r2 = _line_fit(1.0 / t, np.log(k))
    dh = -R_GAS * slope
    ds = R_GAS * intercept
    temps = sorted(set(t.tolist()))
    return VantHoffResult(math.exp(intercept), dh, ds, {tt: dh - tt * ds for tt in temps}, r2, len(temps))


def _as_model(entry) -> tuple[IsothermKind, np.ndarray]:
    if hasattr(entry, "kind") and hasattr(entry, "theta"):
        return IsothermKind.parse(entry.kind), np.asarray(entry.theta, float)
    kind, theta = entry
    return IsothermKind.parse(kind), np.asarray(theta, float)


def affinity(entry) -> float:
    """Affinity parameter of a fitted isotherm (the constant whose temperature dependence is analysed)."""
    kind, theta = _as_model(entry)
    if kind not in AFFINITY_INDEX:
        raise ThermoError(f"{kind.value} has no affinity constant")
    return float(theta[AFFINITY_INDEX[kind]])


def invert(kind, theta, q: float, temperature: float, rel_tol: float = 1e-10,
           abs_tol: float = 1e-9) -> float:
    """Pressure ``p*`` with ``Q(p*) = q`` by log-space bisection on ``[1e-9, 1e7]`` bar."""
    kind = IsothermKind.parse(kind)
    theta = np.asarray(theta, float)
    lo, hi = P_BRACKET
    if kind is IsothermKind.BET:
        hi = min(hi, theta[2] * (1.0 - 1e-12))

    def f(p):
        try:
            return float(evaluate(kind, theta, p, temperature)) - q
        except DomainError:
            return math.nan

    f_lo, f_hi = f(lo), f(hi)
    if not (f_lo <= 0.0 <= f_hi):
        raise ThermoError(f"{kind.value} at T={temperature:g} K cannot reach loading {q:g} within "
                          f"[{lo:g}, {hi:g}] bar")
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 <= rel_tol and abs(f_mid) <= abs_tol:
            break
    return math.sqrt(lo * hi)


def isosteric_heat(isotherms_by_t: Mapping[float, object], loadings: Sequence[float]) -> IsostericCurve:
    """Isosteric heat ``q_st = -R d(ln p)/d(1/T)`` at each loading."""
    if len(isotherms_by_t) < 2:
        raise ThermoError("need isotherms at two or more temperatures")
    temps = sorted(float(t) for t in isotherms_by_t)
    models = {float(t): _as_model(v) for t, v in isotherms_by_t.items()}
    loadings = [float(q) for q in loadings]
    if any(b <= a for a, b in zip(loadings, loadings[1:])) or any(q <= 0 for q in loadings):
        raise ThermoError("loadings must be positive and strictly increasing")
    for t in temps:
        kind, theta = models[t]
        if kind in CAPACITY_INDEX:
            cap = float(theta[CAPACITY_INDEX[kind]])
            if loadings and loadings[-1] >= cap:
                raise ThermoError(f"loading {loadings[-1]:g} exceeds the {kind.value} capacity {cap:g} at {t:g} K")

    inv_t = 1.0 / np.array(temps)
    qst, residuals = [], []
    pressures: dict[float, list[float]] = {t: [] for t in temps}
    for q in loadings:
        ln_p, worst = [], 0.0
        for t in temps:
            kind, theta = models[t]
            p = invert(kind, theta, q, t)
            worst = max(worst, abs(float(evaluate(kind, theta, p, t)) - q))
            pressures[t].append(p)
            ln_p.append(math.log(p))
        slope, _, _ = _line_fit(inv_t, np.array(ln_p))
        qst.append(-R_GAS * slope)
        residuals.append(worst)
    return IsostericCurve(loadings, qst, temps, pressures, residuals)
