"""Command-line pipeline: ``gen-data -> fit -> thermo -> train -> explain -> report``.

Each stage reads the artifacts of earlier stages from ``--out`` and writes
its own JSON/CSV files plus ``manifest_<stage>.json``.  A manifest records
the SHA-256 of the run configuration, the seed, library versions and the
hash of every file the stage read or wrote.  Stages refuse inputs produced
under a different configuration unless ``--force`` is given.

Exit codes: 0 success, 1 validation error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import pinn
from .domain import DataError, Dataset, load_csv
from .evaluation import EvaluationError, calibration, metrics, physics_consistency, residual_tests
from .features import FeaturePipeline, RawInputs, stratified_split
from .fitting import FitConfig, FitError, FitResult, fit_all
from .interpret import ale, h_matrix, kernel_shap
from .isotherms import KIND_ORDER, DomainError, IsothermKind
from .nncore import TrainingFault
from .synth import GeneratorSpec, generate
from .thermo import ThermoError, affinity, isosteric_heat, vant_hoff

STAGES = ("gen-data", "fit", "thermo", "train", "explain", "report")
UPSTREAM = {"gen-data": (), "fit": ("gen-data",), "thermo": ("fit",), "train": ("gen-data",),
            "explain": ("train",), "report": ("train",)}
FLOAT_FMT = ".12g"


class ValidationError(ValueError):
    """Bad configuration, missing or mismatched inputs."""


# ------------------------------------------------------------------------ config


@dataclass
class FitSection:
    kinds: list[str] | None = None
    de_population: int = 30
    de_generations: int = 300
    local_max_iter: int = 200
    max_samples: int | None = None  # fit only the first N samples (in file order)


@dataclass
class ThermoSection:
    loading_fractions: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.4, 0.6, 0.8])


@dataclass
class TrainSection:
    preset: str = "baseline"
    overrides: dict = field(default_factory=dict)
    test_fraction: float = 0.2
    n_features: int = 25


@dataclass
class ExplainSection:
    n_explain: int = 20
    n_background: int = 50
    ale_bins: int = 20
    h_features: int = 5
    h_grid: int = 20
    n_coalitions: int = 2048


@dataclass
class ReportSection:
    n_mc: int = 100
    sweep_pressures: int = 50
    sweep_temperatures: int = 10
    n_sweep_materials: int = 10
    residual_draws: int = 2000


@dataclass
class RunConfig:
    seed: int = 0
    synth: dict = field(default_factory=dict)  # GeneratorSpec overrides
    fit: FitSection = field(default_factory=FitSection)
    thermo: ThermoSection = field(default_factory=ThermoSection)
    train: TrainSection = field(default_factory=TrainSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    report: ReportSection = field(default_factory=ReportSection)

    SECTIONS = {"fit": FitSection, "thermo": ThermoSection, "train": TrainSection,
                "explain": ExplainSection, "report": ReportSection}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = {"seed": int(d.get("seed", 0)), "synth": dict(d.get("synth", {}))}
        for name, section in cls.SECTIONS.items():
            body = dict(d.get(name, {}))
            bad = set(body) - {f.name for f in dataclasses.fields(section)}
            if bad:
                raise ValidationError(f"unknown keys in [{name}]: {sorted(bad)}")
            kw[name] = section(**body)
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def load_config(path: str | None, seed: int | None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


# --------------------------------------------------------------------- artifacts


def _clean(value):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """One stage invocation: tracks the files it reads and writes for the manifest."""

    def __init__(self, stage: str, cfg: RunConfig, out: Path, force: bool):
        self.stage, self.cfg, self.out, self.force = stage, cfg, out, force
        self.config_hash = cfg.sha256()
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.notes: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def check_upstream(self) -> None:
        for stage in UPSTREAM[self.stage]:
            mpath = self.path(f"manifest_{stage}.json")
            if not mpath.is_file():
                raise ValidationError(f"missing {mpath.name}; run `sorbkit {stage}` first")
            manifest = json.loads(mpath.read_text())
            if manifest["config_sha256"] != self.config_hash:
                msg = f"{stage} artifacts were produced with config {manifest['config_sha256'][:12]}, " \
                      f"current config is {self.config_hash[:12]}"
                if not self.force:
                    raise ValidationError(msg + " (use --force to override)")
                self.notes.append("forced: " + msg)
            for name, digest in manifest["outputs"].items():
                p = self.path(name)
                if not p.is_file() or file_sha256(p) != digest:
                    msg = f"{name} is missing or differs from the {stage} manifest"
                    if not self.force:
                        raise ValidationError(msg + " (use --force to override)")
                    self.notes.append("forced: " + msg)

    def read(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise ValidationError(f"missing input {p}")
        self.inputs[name] = file_sha256(p)
        return p

    def read_json(self, name: str):
        return json.loads(self.read(name).read_text())

    def _record(self, name: str) -> None:
        self.outputs[name] = file_sha256(self.path(name))

    def write_json(self, name: str, body: dict) -> None:
        doc = {"config_sha256": self.config_hash, "stage": self.stage, **_clean(body)}
        self.path(name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self._record(name)

    def write_csv(self, name: str, header: list[str], rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(v, FLOAT_FMT) if isinstance(v, (float, np.floating)) else v for v in row])
        self._record(name)

    def adopt(self, name: str) -> None:
        """Register a file written by library code."""
        self._record(name)

    def write_manifest(self) -> None:
        import scipy
        import sklearn

        manifest = {
            "stage": self.stage,
            "config_sha256": self.config_hash,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "versions": {"sorbkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "scikit-learn": sklearn.__version__, "python": platform.python_version()},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "notes": self.notes,
        }
        self.path(f"manifest_{self.stage}.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")


def _threads() -> int:
    raw = os.environ.get("SORBKIT_THREADS", "1") or "1"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"SORBKIT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# ------------------------------------------------------------------------ stages


def stage_gen_data(run: Run, args) -> None:
    spec_kw = {"seed": run.cfg.seed, **run.cfg.synth}
    try:
        spec = GeneratorSpec.from_dict(spec_kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad synth settings: {exc}") from exc
    ds, truth = generate(spec)
    ds.to_csv(run.path("data.csv"))
    run.adopt("data.csv")
    run.write_json("truth.json", {"spec": spec.to_dict(), **truth})
    print(f"gen-data: {len(ds)} records, {len(truth['materials'])} samples")


def _load_dataset(run: Run, args) -> Dataset:
    if args.input:
        path = Path(args.input)
        run.inputs[str(path)] = file_sha256(path) if path.is_file() else ""
    else:
        path = run.read("data.csv")
    ds = load_csv(path)
    if ds.rejects:
        print(f"{len(ds.rejects)} row(s) quarantined, first: row {ds.rejects[0].row}: {ds.rejects[0].reason}")
    if len(ds) == 0:
        raise ValidationError(f"{path} contains no usable records")
    return ds


def _groups(ds: Dataset) -> dict[tuple[str, float], list[int]]:
    out: dict[tuple[str, float], list[int]] = {}
    for i, r in enumerate(ds.records):
        out.setdefault((r.sample_id, r.temperature), []).append(i)
    return out


def stage_fit(run: Run, args) -> None:
    if not args.input:
        run.check_upstream()
    ds = _load_dataset(run, args).valid_only()
    if len(ds) == 0:
        raise ValidationError("no records with a physically valid uptake")
    sec = run.cfg.fit
    cfg = FitConfig(de_population=sec.de_population, de_generations=sec.de_generations,
                    local_max_iter=sec.local_max_iter, seed=run.cfg.seed)
    groups = _groups(ds)
    samples = list(dict.fromkeys(sid for sid, _ in groups))
    if sec.max_samples is not None:
        samples = samples[:sec.max_samples]
    keep = set(samples)
    p_all, q_all = ds.column("pressure"), ds.column("uptake")
    entries = []
    for (sid, t), idx in groups.items():
        if sid not in keep:
            continue
        results = fit_all((p_all[idx], q_all[idx], np.full(len(idx), t)), cfg, kinds=sec.kinds,
                          threads=_threads())
        entries.append({"sample_id": sid, "lithology": ds.records[idx[0]].lithology.value,
                        "temperature": t, "n_points": len(idx), "results": [r.to_dict() for r in results]})
    run.write_json("fits.json", {"groups": entries})
    rows = [(e["sample_id"], e["temperature"], e["results"][0]["kind"], e["results"][0]["r2"]) for e in entries]
    run.write_csv("best_fits.csv", ["sample_id", "temperature", "kind", "r2"], rows)
    print(f"fit: {len(entries)} isotherm(s) across {len(samples)} sample(s)")


def _common_kind(by_t: dict[float, list[FitResult]]) -> tuple[IsothermKind, dict[float, FitResult]] | None:
    """Kind fitted successfully at every temperature with the best mean R^2 (kind order breaks ties)."""
    best = None
    for kind in KIND_ORDER:
        chosen = {}
        for t, results in by_t.items():
            hit = [r for r in results if r.kind is kind and r.ok and math.isfinite(r.r2)]
            if not hit:
                break
            chosen[t] = hit[0]
        else:
            try:
                [affinity(r) for r in chosen.values()]
            except ThermoError:
                continue
            score = float(np.mean([r.r2 for r in chosen.values()]))
            if best is None or score > best[0] + 1e-12:
                best = (score, kind, chosen)
    return None if best is None else (best[1], best[2])


def stage_thermo(run: Run, args) -> None:
    run.check_upstream()
    fits = run.read_json("fits.json")
    by_sample: dict[str, dict[float, list[FitResult]]] = {}
    for g in fits["groups"]:
        by_sample.setdefault(g["sample_id"], {})[float(g["temperature"])] = [FitResult.from_dict(r) for r in g["results"]]
    out, rows = [], []
    for sid, by_t in by_sample.items():
        entry: dict = {"sample_id": sid, "temperatures": sorted(by_t)}
        picked = _common_kind(by_t) if len(by_t) >= 2 else None
        if picked is None:
            entry["error"] = "need one isotherm kind fitted at two or more temperatures"
            out.append(entry)
            continue
        kind, chosen = picked
        entry["kind"] = kind.value
        try:
            vh = vant_hoff({t: affinity(r) for t, r in chosen.items()})
            entry["vant_hoff"] = vh.to_dict()
            cap = min(float(r.theta[0]) for r in chosen.values())
            loadings = [f * cap for f in run.cfg.thermo.loading_fractions]
            curve = isosteric_heat({t: (kind, r.theta) for t, r in chosen.items()}, loadings)
            entry["isosteric"] = curve.to_dict()
            rows.extend((sid, kind.value, q, h) for q, h in zip(curve.loadings, curve.qst))
        except (ThermoError, DomainError, ValueError) as exc:
            entry["error"] = str(exc)
        out.append(entry)
    run.write_json("thermo.json", {"samples": out})
    run.write_csv("isosteric.csv", ["sample_id", "kind", "loading", "qst"], rows)
    ok = sum("vant_hoff" in e for e in out)
    print(f"thermo: Van't Hoff analysis for {ok}/{len(out)} sample(s)")


def _split(raw: RawInputs, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of a sample-level split stratified by lithology."""
    samples = list(dict.fromkeys(raw.sample_id.tolist()))
    lith = {s: l for s, l in zip(raw.sample_id.tolist(), raw.lithology.tolist())}
    tr, te = stratified_split([lith[s] for s in samples], fraction, seed)
    train_ids = {samples[i] for i in tr}
    is_train = np.array([s in train_ids for s in raw.sample_id.tolist()])
    return np.flatnonzero(is_train), np.flatnonzero(~is_train)


@dataclass
class Fitted:
    raw: RawInputs
    y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    pipeline: FeaturePipeline


def _fit_features(run: Run, ds: Dataset) -> Fitted:
    raw = RawInputs.from_dataset(ds)
    y = ds.column("uptake")
    tr, va = _split(raw, run.cfg.train.test_fraction, run.cfg.seed)
    if len(va) == 0:
        raise ValidationError("validation split is empty; need more samples per lithology")
    pipe = FeaturePipeline.fit(raw.take(tr), y[tr], k=run.cfg.train.n_features, seed=run.cfg.seed)
    return Fitted(raw, y, tr, va, pipe)


def _pinn_config(run: Run) -> pinn.PinnConfig:
    sec = run.cfg.train
    try:
        return pinn.PinnConfig.preset(sec.preset, seed=run.cfg.seed, **sec.overrides)
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationError(f"bad training settings: {exc}") from exc


def stage_train(run: Run, args) -> None:
    run.check_upstream()
    ds = load_csv(run.read("data.csv")).valid_only()
    if len(ds) == 0:
        raise ValidationError("no usable records")
    f = _fit_features(run, ds)
    cfg = _pinn_config(run)
    dtr = pinn.prepare(f.pipeline, f.raw.take(f.train_idx), f.y[f.train_idx])
    dva = pinn.prepare(f.pipeline, f.raw.take(f.val_idx), f.y[f.val_idx], collocation=False)
    net, history = pinn.train(pinn.build(cfg, dtr.x.shape[1]), dtr, dva, cfg)
    pinn.save(net, run.path("model"), {"features": f.pipeline.names, "config_sha256": run.config_hash})
    run.adopt("model.json")
    run.adopt("model.bin")
    cols = list(history[0])
    run.write_csv("history.csv", cols, ([row[c] for c in cols] for row in history))
    val = metrics(dva.y, pinn.predict(net, dva.x).q_pred)
    run.write_json("train.json", {"features": f.pipeline.sidecar(), "n_train": len(f.train_idx),
                                  "n_val": len(f.val_idx), "epochs": len(history),
                                  "validation": val.to_dict()})
    print(f"train: {len(history)} epochs, validation R2 = {val.r2:.4f}")


def _trained(run: Run) -> tuple[pinn.PinnNet, Fitted]:
    ds = load_csv(run.read("data.csv")).valid_only()
    run.read("model.bin")
    net, header = pinn.load(run.read("model.json").with_suffix(""))
    f = _fit_features(run, ds)
    if f.pipeline.names != header.get("features"):
        raise ValidationError("feature pipeline does not reproduce the trained model's inputs")
    return net, f


def stage_explain(run: Run, args) -> None:
    run.check_upstream()
    net, f = _trained(run)
    sec = run.cfg.explain
    rng = np.random.default_rng([run.cfg.seed, 7])
    x_tr = f.pipeline.transform(f.raw.take(f.train_idx))
    x_va = f.pipeline.transform(f.raw.take(f.val_idx))
    names = f.pipeline.names
    model = lambda X: pinn.predict(net, X).q_pred
    bg = x_tr[np.sort(rng.choice(len(x_tr), size=min(sec.n_background, len(x_tr)), replace=False))]
    ex = x_va[np.sort(rng.choice(len(x_va), size=min(sec.n_explain, len(x_va)), replace=False))]
    shap = kernel_shap(model, ex, bg, n_coalitions=sec.n_coalitions, seed=run.cfg.seed, feature_names=names)
    order = shap.ranking()
    run.write_csv("shap_importance.csv", ["rank", "feature", "mean_abs_shap"],
                  ((r + 1, names[j], shap.global_importance[j]) for r, j in enumerate(order)))
    run.write_csv("shap_values.csv", names, shap.values.tolist())
    curves, ale_rows = [], []
    for j, name in enumerate(names):
        if np.ptp(x_va[:, j]) == 0:
            continue
        c = ale(model, x_va, j, n_bins=sec.ale_bins, name=name)
        curves.append({"feature": name, "monotonicity": c.monotonicity, "effect_strength": c.effect_strength})
        ale_rows.extend((name, e, v, s) for e, v, s in zip(c.bin_edges[1:], c.effects, c.standard_error))
    run.write_csv("ale.csv", ["feature", "upper_edge", "effect", "standard_error"], ale_rows)
    top = [j for j in order if np.ptp(x_va[:, j]) > 0][:sec.h_features]
    hm = h_matrix(model, x_va, features=top, names=names, grid_size=sec.h_grid, seed=run.cfg.seed)
    run.write_csv("h_matrix.csv", ["feature_a", "feature_b", "h2", "class"],
                  ((a, b, v, c) for (a, b), v, c in zip(hm.pairs, hm.pairs.values(), hm.classification().values())))
    run.write_json("explain.json", {"shap": {"base_value": shap.base_value, "exact": shap.exact,
                                             "ridge_fallback": shap.ridge_fallback,
                                             "ranking": [names[j] for j in order],
                                             "global_importance": dict(zip(names, shap.global_importance))},
                                    "ale": curves, "h2": hm.to_dict()})
    print(f"explain: top features {', '.join(names[j] for j in order[:3])}")


def stage_report(run: Run, args) -> None:
    run.check_upstream()
    net, f = _trained(run)
    sec = run.cfg.report
    x_va = f.pipeline.transform(f.raw.take(f.val_idx))
    y_va = f.y[f.val_idx]
    unc = pinn.predict_with_uncertainty(net, x_va, n_mc=sec.n_mc, seed=run.cfg.seed)
    m = metrics(y_va, unc.mean)
    resid = y_va - unc.mean
    tests = residual_tests(resid, regressors=unc.mean, draws=sec.residual_draws, seed=run.cfg.seed)
    cal = calibration(y_va, unc.mean, unc.sigma_total)
    raw_va = f.raw.take(f.val_idx)
    first = list(dict.fromkeys(raw_va.sample_id.tolist()))[:sec.n_sweep_materials]
    rows_of = {s: int(np.flatnonzero(raw_va.sample_id == s)[0]) for s in first}
    wrappers = [pinn.PinnModel(net, f.pipeline, raw_va.take([rows_of[s]])) for s in first]
    p_lo, p_hi = float(f.raw.pressure.min()), float(f.raw.pressure.max())
    t_lo, t_hi = float(f.raw.temperature.min()), float(f.raw.temperature.max())
    sweep_p = np.geomspace(max(p_lo, 1e-3), max(p_hi, 2e-3), sec.sweep_pressures)
    sweep_t = np.linspace(t_lo, t_hi, sec.sweep_temperatures)
    phys = physics_consistency(wrappers, sweep_p, sweep_t)
    run.write_csv("parity.csv", ["sample_id", "pressure", "temperature", "observed", "predicted",
                                 "sigma_aleatoric", "sigma_epistemic", "lower", "upper"],
                  zip(raw_va.sample_id, raw_va.pressure, raw_va.temperature, y_va, unc.mean,
                      unc.sigma_aleatoric, unc.sigma_epistemic, unc.lower, unc.upper))
    run.write_json("report.json", {"metrics": m.to_dict(), "residual_tests": tests.to_dict(),
                                   "calibration": cal.to_dict(), "physics_consistency": phys.to_dict()})
    print(f"report: R2 = {m.r2:.4f}, RMSE = {m.rmse:.4g}, physics score = {phys.score:.4f}")


HANDLERS = {"gen-data": stage_gen_data, "fit": stage_fit, "thermo": stage_thermo, "train": stage_train,
            "explain": stage_explain, "report": stage_report}


# --------------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--out", default="sorbkit_out", help="artifact directory")
    common.add_argument("--force", action="store_true", help="accept inputs from a different configuration")
    parser = _Parser(prog="sorbkit", description="Hydrogen sorption modelling pipeline")
    parser.add_argument("--version", action="version", version=f"sorbkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"gen-data": "generate a synthetic corpus", "fit": "fit every isotherm model per sample and temperature",
             "thermo": "Van't Hoff and isosteric heat analysis", "train": "train the physics-informed network",
             "explain": "SHAP, ALE and H^2 explanations", "report": "metrics, residual tests and calibration"}
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "fit":
            p.add_argument("--input", help="sorption CSV to fit instead of the generated corpus")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out, args.force)
        HANDLERS[args.command](run, args)
        run.write_manifest()
    except (ValidationError, DataError, FitError, ThermoError, EvaluationError, DomainError) as exc:
        print(f"sorbkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingFault, FloatingPointError, ArithmeticError, np.linalg.LinAlgError, OSError, RuntimeError) as exc:
        print(f"sorbkit {args.command}: runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
