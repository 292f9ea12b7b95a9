"""Synthetic sorption corpora with recoverable ground truth.

Each synthetic material draws its structure (surface area, pore size, pore
volume) from a lithology profile.  Isotherm parameters follow from the
structure deterministically: capacity grows linearly with surface area, the
affinity follows the Van't Hoff law ``K(T) = K0 exp(-dH / RT)`` with a
pore-size dependent ``K0``, and the heterogeneity exponent is drawn from a
(narrow) range.  The truth sidecar stores everything needed to recompute
every noiseless uptake.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import Dataset, Lithology, SorptionRecord
from .isotherms import IsothermKind, R_GAS, evaluate

SUPPORTED = (IsothermKind.LANGMUIR, IsothermKind.SIPS, IsothermKind.FREUNDLICH, IsothermKind.HENRY)


@dataclass
class LithologyProfile:
    kind: str
    ssa_range: tuple[float, float]
    pore_diameter_range: tuple[float, float]
    pore_volume_range: tuple[float, float]
    capacity_base: float  # mmol/g
    capacity_per_ssa: float  # mmol/g per m^2/g
    k0: float  # bar^-1, pre-exponential at the reference pore diameter
    pore_exponent: float = 0.0  # K0 scales as (d_ref / d) ** pore_exponent
    exponent_range: tuple[float, float] = (1.0, 1.0)
    dh: float = -8000.0  # J/mol
    d_ref: float = 2.0  # nm


def default_profiles() -> dict[str, LithologyProfile]:
    # Clay surface-area span and the per-lithology kinds follow the reported
    # best-fit models (Sips clays, Langmuir shales, Freundlich coals).
    return {
        "clay": LithologyProfile("sips", (2.96, 273.1), (1.5, 20.0), (0.01, 0.2),
                                 capacity_base=0.05, capacity_per_ssa=0.004, k0=8e-4,
                                 pore_exponent=0.5, exponent_range=(1.3, 1.6), dh=-8000.0),
        "shale": LithologyProfile("langmuir", (0.01, 0.05), (2.0, 30.0), (0.005, 0.05),
                                  capacity_base=0.1, capacity_per_ssa=4.0, k0=1e-3,
                                  pore_exponent=0.5, dh=-6000.0),
        "coal": LithologyProfile("freundlich", (20.0, 300.0), (0.5, 5.0), (0.02, 0.1),
                                 capacity_base=0.2, capacity_per_ssa=0.003, k0=2e-3,
                                 pore_exponent=0.3, exponent_range=(1.8, 2.2), dh=-7000.0),
    }


@dataclass
class GeneratorSpec:
    n_samples: int = 155
    proportions: dict[str, float] = field(default_factory=lambda: {"clay": 50, "shale": 60, "coal": 45})
    profiles: dict[str, LithologyProfile] = field(default_factory=default_profiles)
    pressures: list[float] = field(default_factory=lambda: np.geomspace(0.1, 200.0, 10).tolist())
    temperatures: list[float] = field(default_factory=lambda: [273.15, 298.15, 323.15])
    points_per_sample: int | None = None  # None -> full pressure x temperature grid
    noise_sigma: float = 0.01  # multiplicative
    hetero_slope: float = 0.0  # additive noise sd per bar
    seed: int = 0

    def __post_init__(self):
        self.profiles = {k: v if isinstance(v, LithologyProfile) else LithologyProfile(**v)
                         for k, v in self.profiles.items()}
        for name, prof in self.profiles.items():
            Lithology.parse(name)
            if IsothermKind.parse(prof.kind) not in SUPPORTED:
                raise ValueError(f"profile kind {prof.kind!r} not supported")
            for lo, hi in (prof.ssa_range, prof.pore_diameter_range, prof.pore_volume_range):
                if not 0 < lo <= hi:
                    raise ValueError("profile ranges must be positive and ordered")
        if not self.pressures or min(self.pressures) < 1e-3 or max(self.pressures) > 200.0:
            raise ValueError("pressure grid must lie within [1e-3, 200] bar")
        if not self.temperatures or min(self.temperatures) <= 0:
            raise ValueError("temperatures must be positive kelvin")
        if self.n_samples < 1 or self.noise_sigma < 0 or self.hetero_slope < 0:
            raise ValueError("invalid generator settings")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        if "profiles" in d:
            d["profiles"] = {k: LithologyProfile(**{f: tuple(x) if isinstance(x, list) else x for f, x in v.items()})
                             for k, v in d["profiles"].items()}
        return cls(**d)


def _counts(spec: GeneratorSpec) -> dict[str, int]:
    names = [n for n in spec.proportions if spec.proportions[n] > 0]
    total = sum(spec.proportions[n] for n in names)
    raw = {n: spec.n_samples * spec.proportions[n] / total for n in names}
    counts = {n: int(math.floor(v)) for n, v in raw.items()}
    leftover = spec.n_samples - sum(counts.values())
    for n in sorted(names, key=lambda n: -(raw[n] - counts[n]))[:leftover]:
        counts[n] += 1
    return counts


def material_parameters(material: dict, temperature: float) -> tuple[IsothermKind, np.ndarray]:
    """Isotherm kind and parameter vector for one material at ``temperature``."""
    kind = IsothermKind.parse(material["kind"])
    k = material["k0"] * math.exp(-material["dh"] / (R_GAS * temperature))
    cap = material["capacity"]
    if kind is IsothermKind.LANGMUIR:
        return kind, np.array([cap, k])
    if kind is IsothermKind.SIPS:
        return kind, np.array([cap, k, material["exponent"]])
    if kind is IsothermKind.FREUNDLICH:
        return kind, np.array([cap * k, material["exponent"]])
    return kind, np.array([cap * k])


def clean_uptake(material: dict, pressure, temperature):
    kind, theta = material_parameters(material, float(temperature))
    return evaluate(kind, theta, pressure, temperature)


def generate(spec: GeneratorSpec) -> tuple[Dataset, dict]:
    """Draw a synthetic dataset and its ground-truth sidecar."""
    rng = np.random.default_rng(spec.seed)
    grid = [(float(p), float(t)) for t in spec.temperatures for p in spec.pressures]
    records: list[SorptionRecord] = []
    materials: list[dict] = []
    clean: list[float] = []
    for lith, count in _counts(spec).items():
        prof = spec.profiles[lith]
        for j in range(count):
            ssa = float(rng.uniform(*prof.ssa_range))
            d = float(math.exp(rng.uniform(math.log(prof.pore_diameter_range[0]), math.log(prof.pore_diameter_range[1]))))
            pv = float(rng.uniform(*prof.pore_volume_range))
            material = {
                "sample_id": f"{lith.upper()}-{j + 1:03d}",
                "lithology": lith,
                "kind": IsothermKind.parse(prof.kind).value,
                "ssa": ssa,
                "pore_diameter": d,
                "pore_volume": pv,
                "capacity": prof.capacity_base + prof.capacity_per_ssa * ssa,
                "k0": prof.k0 * (prof.d_ref / d) ** prof.pore_exponent,
                "exponent": float(rng.uniform(*prof.exponent_range)),
                "dh": prof.dh,
            }
            materials.append(material)
            if spec.points_per_sample is None:
                points = grid
            else:
                pick = rng.choice(len(grid), size=min(spec.points_per_sample, len(grid)), replace=False)
                points = [grid[i] for i in np.sort(pick)]
            for p, t in points:
                q0 = float(clean_uptake(material, p, t))
                q = q0 * (1.0 + spec.noise_sigma * rng.standard_normal()) if spec.noise_sigma else q0
                if spec.hetero_slope:
                    q += spec.hetero_slope * p * rng.standard_normal()
                clean.append(q0)
                records.append(SorptionRecord(material["sample_id"], Lithology(lith), p, t, q,
                                              ssa=ssa, pore_volume=pv, pore_diameter=d))
    truth = {
        "materials": materials,
        "clean_uptake": clean,
        "noise_sigma": spec.noise_sigma,
        "hetero_slope": spec.hetero_slope,
        "seed": spec.seed,
    }
    return Dataset(tuple(records), {}, f"synth(seed={spec.seed})"), truth


def noise_sd(truth: dict, ds: Dataset) -> np.ndarray:
    """Standard deviation of the noise injected into each record."""
    q0 = np.asarray(truth["clean_uptake"])
    p = ds.column("pressure")
    return np.sqrt((truth["noise_sigma"] * q0) ** 2 + (truth["hetero_slope"] * p) ** 2)
