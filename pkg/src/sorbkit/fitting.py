"""Hybrid global/local least-squares fitting of isotherm models.

Stage one is differential evolution (rand/1/bin) inside the model's default
bounds; stage two polishes the DE optimum with a bounded Levenberg-Marquardt
iteration on analytic Jacobians.  Both stages search the same transformed
coordinates: log10 for parameters flagged ``Bound.log``, identity otherwise.
"""
from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .isotherms import (
    KIND_ORDER,
    P_MIN,
    PARAM_NAMES,
    Bound,
    DomainError,
    IsothermKind,
    arity,
    default_bounds,
    evaluate,
    evaluate_many,
    gradient,
    physics_predicates,
)


class FitError(ValueError):
    pass


@dataclass
class FitConfig:
    de_population: int = 30
    de_generations: int = 300
    de_crossover: float = 0.9
    de_weight: float = 0.7
    local_max_iter: int = 200
    local_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.de_population < 4 or self.de_generations < 1 or self.local_max_iter < 1:
            raise ValueError("population must be >= 4 and iteration counts >= 1")
        if not 0.0 < self.de_crossover <= 1.0:
            raise ValueError("crossover must be in (0, 1]")
        if not 0.0 < self.de_weight < 2.0:
            raise ValueError("differential weight must be in (0, 2)")


@dataclass
class FitResult:
    kind: IsothermKind
    theta: np.ndarray
    sse: float
    r2: float
    rmse: float
    physics_score: float
    param_sigma: np.ndarray
    n_points: int
    converged: bool
    iterations: int
    temperature: float | None = None
    physics_checks: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES[self.kind], map(float, self.theta)))

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")

        return {
            "kind": self.kind.value,
            "params": {k: num(v) for k, v in self.params.items()} if self.ok else {},
            "theta": [num(v) for v in self.theta] if self.ok else [],
            "param_sigma": [num(v) for v in self.param_sigma] if self.ok else [],
            "sse": num(self.sse),
            "r2": num(self.r2),
            "rmse": num(self.rmse),
            "physics_score": num(self.physics_score),
            "physics_checks": self.physics_checks,
            "n_points": self.n_points,
            "converged": self.converged,
            "iterations": self.iterations,
            "temperature": self.temperature,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        def val(x):
            return float(x) if not isinstance(x, str) else float(x.replace("inf", "inf"))

        return cls(
            kind=IsothermKind.parse(d["kind"]),
            theta=np.array([val(v) for v in d["theta"]]),
            sse=val(d["sse"]), r2=val(d["r2"]), rmse=val(d["rmse"]),
            physics_score=val(d["physics_score"]),
            param_sigma=np.array([val(v) for v in d["param_sigma"]]),
            n_points=int(d["n_points"]), converged=bool(d["converged"]), iterations=int(d["iterations"]),
            temperature=d.get("temperature"), physics_checks=dict(d.get("physics_checks", {})),
            error=d.get("error"),
        )


def _unpack(data, temperature=None):
    """Accept ``(p, q, T)`` triples or separate arrays; returns float arrays."""
    if isinstance(data, tuple) and len(data) in (2, 3) and np.ndim(data[0]) == 1:
        p = np.asarray(data[0], float)
        q = np.asarray(data[1], float)
        t = np.asarray(data[2], float) if len(data) == 3 else np.full_like(p, 298.15 if temperature is None else temperature)
    else:
        arr = np.asarray(data, float)
        if arr.size == 0:
            raise FitError("no data points")
        if arr.ndim != 2 or arr.shape[1] not in (2, 3):
            raise FitError("data must be (p, Q) or (p, Q, T) rows")
        p, q = arr[:, 0], arr[:, 1]
        t = arr[:, 2] if arr.shape[1] == 3 else np.full_like(p, 298.15 if temperature is None else temperature)
    t = np.broadcast_to(t, p.shape).astype(float)
    if p.size == 0:
        raise FitError("no data points")
    return p, q, t


class _Transform:
    """Maps parameters to optimizer coordinates (log10 where flagged)."""

    def __init__(self, bounds: tuple[Bound, ...]):
        self.bounds = bounds
        self.log = np.array([b.log for b in bounds])
        lo = np.array([b.effective_low for b in bounds])
        hi = np.array([b.high for b in bounds])
        self.theta_lo, self.theta_hi = lo, hi
        self.lo = np.where(self.log, np.log10(np.maximum(lo, 1e-300)), lo)
        self.hi = np.where(self.log, np.log10(hi), hi)

    def to_theta(self, u):
        with np.errstate(over="ignore"):
            theta = np.where(self.log, 10.0 ** u, u)
        # float round trip through log10 must not leave the closed bounds
        return np.clip(theta, self.theta_lo, self.theta_hi)

    def to_u(self, theta):
        theta = np.asarray(theta, float)
        return np.clip(np.where(self.log, np.log10(np.maximum(theta, 1e-300)), theta), self.lo, self.hi)

    def dtheta_du(self, theta):
        return np.where(self.log, theta * math.log(10.0), 1.0)


def _sse(kind, theta, p, q, t) -> float:
    try:
        with np.errstate(all="ignore"):
            r = evaluate(kind, theta, p, t) - q
    except (DomainError, ValueError):
        return math.inf
    s = float(r @ r)
    return s if math.isfinite(s) else math.inf


def _sse_many(kind, thetas, p, q, t) -> np.ndarray:
    try:
        pred = evaluate_many(kind, thetas, p, t)
    except (DomainError, ValueError):
        return np.full(len(thetas), math.inf)
    with np.errstate(all="ignore"):
        sse = np.sum((pred - q) ** 2, axis=1)
    return np.where(np.isfinite(sse), sse, math.inf)


def differential_evolution(kind, p, q, t, bounds, cfg: FitConfig, rng) -> tuple[np.ndarray, float, int]:
    """rand/1/bin DE in transformed coordinates; returns ``(theta, sse, generations)``.

    Trials of one generation are built from the previous generation and
    scored together, then each replaces its parent when not worse.
    """
    tr = _Transform(bounds)
    dim, npop = len(bounds), cfg.de_population
    pop = tr.lo + rng.random((npop, dim)) * (tr.hi - tr.lo)
    energy = _sse_many(kind, tr.to_theta(pop), p, q, t)
    others = np.arange(npop - 1)
    gen = 0
    for gen in range(1, cfg.de_generations + 1):
        picks = np.argsort(rng.random((npop, npop - 1)), axis=1)[:, :3]
        picks = others[picks]
        picks = np.where(picks >= np.arange(npop)[:, None], picks + 1, picks)
        mutant = pop[picks[:, 0]] + cfg.de_weight * (pop[picks[:, 1]] - pop[picks[:, 2]])
        cross = rng.random((npop, dim)) < cfg.de_crossover
        cross[np.arange(npop), rng.integers(dim, size=npop)] = True
        trial = np.clip(np.where(cross, mutant, pop), tr.lo, tr.hi)
        e = _sse_many(kind, tr.to_theta(trial), p, q, t)
        better = e <= energy
        pop[better], energy[better] = trial[better], e[better]
        if np.all(np.isfinite(energy)) and np.ptp(energy) <= 1e-14 * (energy.min() + 1e-300):
            break
    best = int(np.argmin(energy))
    return tr.to_theta(pop[best]), float(energy[best]), gen


def levenberg_marquardt(kind, theta0, p, q, t, bounds, cfg: FitConfig) -> tuple[np.ndarray, float, int, bool]:
    """Bounded LM from ``theta0``; only SSE-decreasing steps are accepted."""
    tr = _Transform(bounds)
    u = tr.to_u(theta0)
    theta = tr.to_theta(u)
    sse = _sse(kind, theta, p, q, t)
    if not math.isfinite(sse):
        return theta, sse, 0, False
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, cfg.local_max_iter + 1):
        if sse == 0.0:
            converged = True
            break
        r = evaluate(kind, theta, p, t) - q
        jac = gradient(kind, theta, p, t) * tr.dtheta_du(theta)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-300)
        improved = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            u_new = np.clip(u + step, tr.lo, tr.hi)
            theta_new = tr.to_theta(u_new)
            sse_new = _sse(kind, theta_new, p, q, t)
            if sse_new < sse:
                rel = (sse - sse_new) / sse
                u, theta, sse = u_new, theta_new, sse_new
                mu = max(mu / 3.0, 1e-12)
                improved = True
                if rel < cfg.local_tol:
                    converged = True
                break
            mu *= 4.0
        if not improved:
            # no descent direction left at machine precision
            converged = True
            break
        if converged:
            break
    return theta, sse, it, converged


def param_uncertainty(kind, theta, data, temperature=None) -> np.ndarray:
    """Linearised standard errors ``sqrt(s^2 [(J^T J)^-1]_ii)``, ``s^2 = SSE / (n - arity)``.

    Returns ``inf`` for every parameter when ``J^T J`` is numerically singular.
    """
    kind = IsothermKind.parse(kind)
    p, q, t = _unpack(data, temperature)
    m = arity(kind)
    if p.size <= m:
        raise FitError(f"need more than {m} points for parameter uncertainty")
    theta = np.asarray(theta, float)
    r = evaluate(kind, theta, p, t) - q
    jac = gradient(kind, theta, p, t)
    jtj = jac.T @ jac
    if not np.all(np.isfinite(jtj)) or np.linalg.cond(jtj) > 1.0 / np.finfo(float).eps:
        return np.full(m, np.inf)
    s2 = float(r @ r) / (p.size - m)
    cov = s2 * np.linalg.inv(jtj)
    return np.sqrt(np.maximum(np.diag(cov), 0.0))


def _physics_grid(p: np.ndarray) -> np.ndarray:
    pos = p[p > 0]
    lo = pos.min() if pos.size else P_MIN
    hi = p.max()
    if hi <= lo:
        return np.array([hi])
    return np.logspace(math.log10(lo), math.log10(hi), 100)


def fit_one(kind, data, cfg: FitConfig | None = None, temperature: float | None = None) -> FitResult:
    """Fit one isotherm kind to ``data`` (rows of ``(p, Q[, T])``)."""
    kind = IsothermKind.parse(kind)
    cfg = cfg or FitConfig()
    p, q, t = _unpack(data, temperature)
    m = arity(kind)
    if p.size < m + 1:
        raise FitError(f"{kind.value} needs at least {m + 1} points, got {p.size}")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
        raise FitError("pressures must be finite and non-negative and uptakes finite")
    if kind in (IsothermKind.TEMKIN, IsothermKind.DUBININ_RADUSHKEVICH):
        if np.any(p == 0):
            raise FitError(f"{kind.value} is undefined at p = 0")
        p = np.maximum(p, P_MIN)
    bounds = default_bounds(kind, p_max=float(p.max()))
    rng = np.random.default_rng(cfg.seed)
    theta_de, sse_de, gens = differential_evolution(kind, p, q, t, bounds, cfg, rng)
    if not math.isfinite(sse_de):
        raise FitError(f"no feasible {kind.value} candidate within bounds")
    theta_lm, sse_lm, iters, converged = levenberg_marquardt(kind, theta_de, p, q, t, bounds, cfg)
    theta, sse = (theta_lm, sse_lm) if sse_lm <= sse_de else (theta_de, sse_de)

    sst = float(np.sum((q - q.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    t_ref = float(np.median(t))
    check = physics_predicates(kind, theta, _physics_grid(p), t_ref)
    try:
        sigma = param_uncertainty(kind, theta, (p, q, t))
    except FitError:
        sigma = np.full(m, np.inf)
    return FitResult(kind, theta, sse, r2, math.sqrt(sse / p.size), check.score, sigma, int(p.size),
                     converged, gens + iters, t_ref, check.checks)


def _failed(kind, reason, n) -> FitResult:
    m = arity(kind)
    return FitResult(kind, np.full(m, np.nan), math.inf, -math.inf, math.inf, 0.0, np.full(m, np.inf), n,
                     False, 0, error=reason)


def _rank_cmp(a: FitResult, b: FitResult) -> int:
    if a.ok != b.ok:
        return -1 if a.ok else 1
    if a.physics_score != b.physics_score:
        return -1 if a.physics_score > b.physics_score else 1
    ra = a.r2 if math.isfinite(a.r2) else -math.inf
    rb = b.r2 if math.isfinite(b.r2) else -math.inf
    if abs(ra - rb) > 1e-9:
        return -1 if ra > rb else 1
    if arity(a.kind) != arity(b.kind):
        return arity(a.kind) - arity(b.kind)
    return KIND_ORDER.index(a.kind) - KIND_ORDER.index(b.kind)


def rank(results: list[FitResult]) -> list[FitResult]:
    """Order by physics score, then R^2 (ties within 1e-9), then fewer parameters, then kind order."""
    return sorted(results, key=functools.cmp_to_key(_rank_cmp))


def fit_all(data, cfg: FitConfig | None = None, kinds=None, temperature: float | None = None,
            threads: int | None = None) -> list[FitResult]:
    """Fit every isotherm kind and rank them; failures are kept with a reason."""
    cfg = cfg or FitConfig()
    p, q, t = _unpack(data, temperature)
    kinds = [IsothermKind.parse(k) for k in (kinds or KIND_ORDER)]
    threads = threads or int(os.environ.get("SORBKIT_THREADS", "1") or 1)

    def run(kind):
        try:
            return fit_one(kind, (p, q, t), cfg)
        except (FitError, DomainError) as exc:
            return _failed(kind, str(exc), int(p.size))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, kinds))
    else:
        results = [run(k) for k in kinds]
    return rank(results)
