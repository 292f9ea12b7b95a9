"""Sorption records, CSV ingestion and dataset quality metrics.

Canonical units are bar, kelvin, mmol/g, m^2/g, cm^3/g and nm.  A CSV
header may declare a source unit in brackets, e.g. ``temperature[C]``;
values are converted on load.  Rows that violate hard invariants are
quarantined into ``Dataset.rejects`` instead of aborting the load.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

UPTAKE_LIMITS = (0.0, 50.0)  # mmol/g, exclusive on both ends

MANDATORY = ("sample_id", "lithology", "pressure", "temperature", "uptake")
OPTIONAL = ("ssa", "pore_volume", "pore_diameter")
CANONICAL = MANDATORY + OPTIONAL
NUMERIC = ("pressure", "temperature", "uptake") + OPTIONAL

CANONICAL_UNITS = {
    "pressure": "bar",
    "temperature": "K",
    "uptake": "mmol/g",
    "ssa": "m2/g",
    "pore_volume": "cm3/g",
    "pore_diameter": "nm",
}

ALIASES = {
    "id": "sample_id",
    "sample": "sample_id",
    "sample_name": "sample_id",
    "lith": "lithology",
    "rock_type": "lithology",
    "material": "lithology",
    "p": "pressure",
    "pressure_bar": "pressure",
    "t": "temperature",
    "temp": "temperature",
    "temperature_k": "temperature",
    "temperature_c": "temperature",
    "q": "uptake",
    "h2_uptake": "uptake",
    "adsorption": "uptake",
    "bet": "ssa",
    "bet_surface_area": "ssa",
    "surface_area": "ssa",
    "specific_surface_area": "ssa",
    "pv": "pore_volume",
    "total_pore_volume": "pore_volume",
    "pore_size": "pore_diameter",
    "d_pore": "pore_diameter",
    "mean_pore_diameter": "pore_diameter",
}

# Implicit units carried by a few alias spellings.
_ALIAS_UNITS = {"temperature_c": "C", "temperature_k": "K", "pressure_bar": "bar"}

_FACTORS = {
    "pressure": {"bar": 1.0, "pa": 1e-5, "kpa": 1e-2, "mpa": 10.0, "atm": 1.01325, "psi": 0.0689476},
    "uptake": {"mmol/g": 1.0, "mol/kg": 1.0, "umol/g": 1e-3},
    "ssa": {"m2/g": 1.0},
    "pore_volume": {"cm3/g": 1.0, "ml/g": 1.0, "mm3/g": 1e-3},
    "pore_diameter": {"nm": 1.0, "a": 0.1, "angstrom": 0.1, "um": 1e3},
}

_MISSING = {"", "na", "nan", "n/a", "null", "none", "-"}


class DataError(ValueError):
    """Raised for unrecoverable ingestion problems (missing file or column)."""


class Lithology(str, enum.Enum):
    CLAY = "clay"
    SHALE = "shale"
    COAL = "coal"

    @classmethod
    def parse(cls, label: "str | Lithology") -> "Lithology":
        if isinstance(label, cls):
            return label
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise ValueError(f"unknown lithology label {label!r}") from None


def is_valid_uptake(uptake: float) -> bool:
    lo, hi = UPTAKE_LIMITS
    return lo < uptake < hi


@dataclass(frozen=True)
class SorptionRecord:
    sample_id: str
    lithology: Lithology
    pressure: float
    temperature: float
    uptake: float
    ssa: float | None = None
    pore_volume: float | None = None
    pore_diameter: float | None = None
    extra: Mapping[str, float | None] = field(default_factory=dict)

    def __post_init__(self):
        if not str(self.sample_id).strip():
            raise ValueError("empty sample_id")
        object.__setattr__(self, "lithology", Lithology.parse(self.lithology))
        if not math.isfinite(self.pressure) or self.pressure < 0:
            raise ValueError(f"pressure must be >= 0 bar, got {self.pressure}")
        if not math.isfinite(self.temperature) or self.temperature <= 0:
            raise ValueError(f"temperature must be > 0 K, got {self.temperature}")
        if not math.isfinite(self.uptake):
            raise ValueError("uptake must be finite")
        for name in OPTIONAL:
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @property
    def valid(self) -> bool:
        return is_valid_uptake(self.uptake)

    def get(self, name: str) -> float | None:
        if name in CANONICAL:
            return getattr(self, name)
        return self.extra.get(name)


@dataclass(frozen=True)
class Reject:
    row: int
    reason: str


@dataclass(frozen=True)
class Dataset:
    records: tuple[SorptionRecord, ...]
    column_map: Mapping[str, str] = field(default_factory=dict)
    provenance: str = ""
    rejects: tuple[Reject, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def extra_columns(self) -> list[str]:
        names: dict[str, None] = {}
        for rec in self.records:
            names.update(dict.fromkeys(rec.extra))
        return list(names)

    def column(self, name: str) -> np.ndarray:
        """Numeric column as float array, NaN where missing."""
        return np.array([np.nan if (v := r.get(name)) is None else v for r in self.records], dtype=float)

    @property
    def lithologies(self) -> list[Lithology]:
        return [r.lithology for r in self.records]

    def lithology_counts(self) -> dict[str, int]:
        counts = Counter(r.lithology.value for r in self.records)
        return {lith.value: counts.get(lith.value, 0) for lith in Lithology}

    def sample_counts(self) -> dict[str, int]:
        seen = {(r.lithology.value, r.sample_id) for r in self.records}
        counts = Counter(lith for lith, _ in seen)
        return {lith.value: counts.get(lith.value, 0) for lith in Lithology}

    def valid_only(self) -> "Dataset":
        return Dataset(tuple(r for r in self.records if r.valid), self.column_map,
                       self.provenance, self.rejects)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices), self.column_map,
                       self.provenance, self.rejects)

    def to_csv(self, path: str | Path) -> None:
        """Write canonical columns (with unit suffixes) at 12 significant digits."""
        extras = self.extra_columns
        header = [f"{name}[{CANONICAL_UNITS[name]}]" if name in CANONICAL_UNITS else name
                  for name in CANONICAL] + extras
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for rec in self.records:
                row = [rec.sample_id, rec.lithology.value]
                row += [_fmt(getattr(rec, n)) for n in NUMERIC]
                row += [_fmt(rec.extra.get(n)) for n in extras]
                writer.writerow(row)


def _fmt(value: float | None) -> str:
    return "" if value is None else format(value, ".12g")


_HEADER = re.compile(r"^\s*(?P<name>[^\[]+?)\s*(?:\[(?P<unit>[^\]]*)\])?\s*$")


def _split_header(header: str) -> tuple[str, str | None]:
    m = _HEADER.match(header)
    if not m:
        return header.strip(), None
    unit = m.group("unit")
    return m.group("name").strip(), (unit.strip() if unit else None)


def _resolve(name: str, column_map: Mapping[str, str]) -> tuple[str, str | None]:
    if name in column_map:
        return column_map[name], None
    key = name.strip().lower().replace(" ", "_")
    if key in CANONICAL:
        return key, None
    if key in ALIASES:
        return ALIASES[key], _ALIAS_UNITS.get(key)
    return name, None


def _converter(field_name: str, unit: str | None):
    if unit is None or field_name not in CANONICAL_UNITS:
        return lambda v: v
    u = unit.strip().lower().replace("°", "").replace("²", "2").replace("³", "3").replace(" ", "")
    if field_name == "temperature":
        if u in ("k", "kelvin"):
            return lambda v: v
        if u in ("c", "degc", "celsius"):
            return lambda v: v + 273.15
        raise DataError(f"unsupported temperature unit {unit!r}")
    factors = _FACTORS[field_name]
    if u not in factors:
        raise DataError(f"unsupported {field_name} unit {unit!r}")
    f = factors[u]
    return lambda v: v * f


def _number(cell: str) -> float | None:
    text = cell.strip()
    if text.lower() in _MISSING:
        return None
    return float(text)


def load_csv(path: str | Path, column_map: Mapping[str, str] | None = None, *,
             strict: bool = False) -> Dataset:
    """Load a sorption CSV into a :class:`Dataset`.

    ``column_map`` maps source header names (without unit suffix) to
    canonical field names; unmapped headers fall back to the alias table,
    and any remaining column is kept as a numeric extra property.  With
    ``strict=True`` the first rejected row raises instead of being
    quarantined.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    column_map = dict(column_map or {})
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]

    fields: list[tuple[int, str, object]] = []
    seen: set[str] = set()
    for idx, raw in enumerate(header):
        name, unit = _split_header(raw)
        target, implied = _resolve(name, column_map)
        if target in seen:
            raise DataError(f"column {raw!r} duplicates field {target!r}")
        seen.add(target)
        fields.append((idx, target, _converter(target, unit or implied)))
    missing = [m for m in MANDATORY if m not in seen]
    if missing:
        raise DataError(f"missing mandatory column(s): {', '.join(missing)}")

    records: list[SorptionRecord] = []
    rejects: list[Reject] = []
    for row_no, row in enumerate(body, start=1):
        if not any(c.strip() for c in row):
            continue
        try:
            records.append(_parse_row(row, fields))
        except ValueError as exc:
            if strict:
                raise DataError(f"row {row_no}: {exc}") from exc
            rejects.append(Reject(row_no, str(exc)))
    return Dataset(tuple(records), column_map, str(path), tuple(rejects))


def _parse_row(row, fields) -> SorptionRecord:
    values: dict[str, object] = {}
    extra: dict[str, float | None] = {}
    for idx, target, convert in fields:
        cell = row[idx] if idx < len(row) else ""
        if target == "sample_id":
            values[target] = cell.strip()
            continue
        if target == "lithology":
            values[target] = Lithology.parse(cell)
            continue
        try:
            number = _number(cell)
        except ValueError:
            raise ValueError(f"unparseable numeric cell {cell!r} in column {target!r}") from None
        number = None if number is None else convert(number)
        if target in CANONICAL:
            values[target] = number
        else:
            extra[target] = number
    for name in MANDATORY[2:]:
        if values.get(name) is None:
            raise ValueError(f"missing value for {name!r}")
    return SorptionRecord(extra=extra, **values)


@dataclass
class QualityReport:
    completeness: dict[str, float]
    outlier_flags: list[bool]
    n_records: int
    n_samples: dict[str, int]
    n_records_by_lithology: dict[str, int]
    n_invalid_uptake: int
    n_rejects: int

    @property
    def outlier_fraction(self) -> float:
        return sum(self.outlier_flags) / len(self.outlier_flags) if self.outlier_flags else 0.0

    def to_dict(self) -> dict:
        return {
            "completeness": self.completeness,
            "n_records": self.n_records,
            "n_samples": self.n_samples,
            "n_records_by_lithology": self.n_records_by_lithology,
            "n_invalid_uptake": self.n_invalid_uptake,
            "n_rejects": self.n_rejects,
            "outlier_fraction": self.outlier_fraction,
            "outlier_rows": [i for i, f in enumerate(self.outlier_flags) if f],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def quality_report(ds: Dataset, contamination: float = 0.1, seed: int = 0,
                   multivariate: bool = True) -> QualityReport:
    """Completeness, outlier flags and per-lithology counts.

    Outliers combine univariate extreme flags with isolation-forest flags
    (``multivariate=False`` keeps only the univariate part).
    """
    from .features import detect_outliers

    if len(ds) == 0:
        raise DataError("quality report needs a non-empty dataset")
    n = len(ds)
    completeness: dict[str, float] = {"sample_id": 1.0, "lithology": 1.0}
    numeric: list[np.ndarray] = []
    for name in list(NUMERIC) + ds.extra_columns:
        col = ds.column(name)
        present = np.isfinite(col)
        completeness[name] = float(present.mean())
        if present.any():
            numeric.append(np.where(present, col, np.median(col[present])))
    matrix = np.column_stack(numeric)
    report = detect_outliers(matrix, contamination=contamination if multivariate else 0.0, seed=seed)
    return QualityReport(
        completeness=completeness,
        outlier_flags=[bool(f) for f in report.flags],
        n_records=n,
        n_samples=ds.sample_counts(),
        n_records_by_lithology=ds.lithology_counts(),
        n_invalid_uptake=sum(not r.valid for r in ds.records),
        n_rejects=len(ds.rejects),
    )
