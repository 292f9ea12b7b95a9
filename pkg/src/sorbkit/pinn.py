"""Physics-informed uptake network with three output heads.

The trunk is a stack of residual blocks.  Three heads sit on top of it:

* a scalar uptake prediction (trained on a standardised target),
* four physics parameters ``(q_max, K0, dH, n)`` squashed into fixed bounds,
* a scalar pre-variance turned into ``sigma^2 = softplus(.) + 1e-6``.

Training minimises an equal mix of Huber loss and heteroscedastic Gaussian
NLL plus an adaptively weighted sum of physics penalties (positivity,
saturation, monotonicity in pressure, Van't Hoff consistency, molecular
sieving).  Penalties are evaluated in units of the target's standard
deviation so their weight is comparable with the standardised data loss.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import nncore as nn
from .features import KINETIC_DIAMETER_NM, FeaturePipeline, RawInputs
from .isotherms import R_GAS
from .nncore import Dense, LayerSpec, Module, OptimState, ScheduleConfig, Tensor, TrainingFault, Trunk

PRESETS = {
    "baseline": {"widths": [128, 256, 128, 64], "physics_weight": 0.01, "max_epochs": 300},
    "moderate": {"widths": [256, 512, 256, 128], "physics_weight": 0.05, "max_epochs": 500},
    "high": {"widths": [512, 1024, 512, 256, 128], "physics_weight": 0.1, "max_epochs": 1000},
}

# squashing ranges of the physics head
Q_MAX_RANGE = (1e-3, 100.0)  # mmol/g
K0_RANGE = (1e-6, 100.0)  # bar^-1
DH_RANGE = (-50_000.0, 0.0)  # J/mol
N_RANGE = (1.0, 10.0)  # exponent, open at 1
VARIANCE_FLOOR = 1e-6
PRESSURE_STEP = 1.05
PHYSICS_TERMS = ("saturation", "monotonicity", "positivity", "vant_hoff", "sieving")


@dataclass
class PinnConfig:
    widths: list[int] = field(default_factory=lambda: list(PRESETS["baseline"]["widths"]))
    physics_weight: float = 0.01
    max_epochs: int = 300
    patience: int = 50
    warmup_epochs: int = 50
    dropout_p: float = 0.1
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    lr_min: float = 1e-6
    restart_period: int = 50
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    activation: str = "swish"
    norm: str = "layer"
    huber_delta: float = 1.0
    accumulation: int = 1
    max_recoveries: int = 3

    def __post_init__(self):
        LayerSpec(self.widths, self.activation, self.dropout_p, self.norm)
        if self.physics_weight < 0:
            raise ValueError("physics_weight must be >= 0")
        if self.max_epochs < 1 or self.patience < 0 or self.batch_size < 1 or self.accumulation < 1:
            raise ValueError("invalid training schedule")

    @classmethod
    def preset(cls, name: str, **overrides) -> "PinnConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def layer_spec(self) -> LayerSpec:
        return LayerSpec(self.widths, self.activation, self.dropout_p, self.norm, True)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PinnConfig":
        return cls(**d)


@dataclass
class PinnOutputs:
    q_pred: np.ndarray  # mmol/g
    physics_params: np.ndarray  # columns q_max, K0, dH, n
    sigma2_aleatoric: np.ndarray  # (mmol/g)^2


@dataclass
class LossBreakdown:
    data_loss: float
    physics_saturation: float
    physics_monotonicity: float
    physics_positivity: float
    physics_vant_hoff: float
    physics_sieving: float
    total: float
    lambda_effective: float

    @property
    def physics_sum(self) -> float:
        return (self.physics_saturation + self.physics_monotonicity + self.physics_positivity
                + self.physics_vant_hoff + self.physics_sieving)


@dataclass
class PinnData:
    """Scaled features plus the raw channels the physics penalties need."""

    x: np.ndarray
    y: np.ndarray | None
    pressure: np.ndarray
    temperature: np.ndarray
    pore_diameter: np.ndarray
    group: np.ndarray  # integer composition id; rows sharing it differ only in (p, T)
    x_up: np.ndarray | None = None  # features at PRESSURE_STEP * p
    # collocation twins: same rows at a random pressure p' and at PRESSURE_STEP * p'
    x_col: np.ndarray | None = None
    x_col_up: np.ndarray | None = None
    collocate: Callable[[np.random.Generator], tuple[np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "PinnData":
        idx = np.asarray(idx, dtype=int)
        pick = lambda a: None if a is None else a[idx]
        return PinnData(self.x[idx], pick(self.y), self.pressure[idx], self.temperature[idx],
                        self.pore_diameter[idx], self.group[idx], pick(self.x_up), pick(self.x_col),
                        pick(self.x_col_up))


def composition_groups(raw: RawInputs) -> np.ndarray:
    keys = list(zip(raw.lithology.tolist(), *(np.round(getattr(raw, f), 12).tolist()
                                              for f in ("ssa", "pore_volume", "pore_diameter"))))
    lookup: dict = {}
    return np.array([lookup.setdefault(k, len(lookup)) for k in keys], dtype=int)


def prepare(pipeline: FeaturePipeline, raw: RawInputs, y=None, collocation: bool = True) -> PinnData:
    """Feature rows for ``raw`` plus the pressure-stepped twins used by the monotonicity penalty.

    With ``collocation`` the training loop also redraws, every epoch, one
    pressure per row (log-uniform) and one temperature per row (uniform),
    both over the observed ranges, and penalises decreases between that
    point and its stepped twin.  Monotonicity is then enforced between
    measured pressures and temperatures as well as at them.
    """
    p = np.asarray(raw.pressure, float)
    x = pipeline.transform(raw)
    x_up = pipeline.transform(raw.with_pressure(p * PRESSURE_STEP))
    d = np.asarray(raw.pore_diameter, float)
    d = np.where(np.isfinite(d), d, np.inf)  # unknown pore size never triggers the sieving penalty
    collocate = None
    if collocation and len(raw):
        lo, hi = math.log(max(float(p.min()), 1e-3)), math.log(max(float(p.max()), 1e-3))
        t = np.asarray(raw.temperature, float)
        t_lo, t_hi = float(t.min()), float(t.max())

        def collocate(rng: np.random.Generator):
            pc = np.exp(rng.uniform(lo, hi, size=len(raw)))
            at_t = raw.with_temperature(rng.uniform(t_lo, t_hi, size=len(raw)))
            return (pipeline.transform(at_t.with_pressure(pc)),
                    pipeline.transform(at_t.with_pressure(pc * PRESSURE_STEP)))

    return PinnData(x, None if y is None else np.asarray(y, float), p, np.asarray(raw.temperature, float),
                    d, composition_groups(raw), x_up, collocate=collocate)


# ------------------------------------------------------------------------ network


class PinnNet(Module):
    def __init__(self, config: PinnConfig, n_features: int):
        if n_features < 1:
            raise ValueError("need at least one input feature")
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.n_features = n_features
        self.trunk = Trunk(n_features, config.layer_spec, rng)
        width = self.trunk.width
        self.head_q = Dense(width, 1, rng)
        self.head_physics = Dense(width, 4, rng)
        # zero weights: every row starts with the same parameters, hence exactly Van't Hoff consistent
        self.head_physics.weight.data[:] = 0.0
        self.head_variance = Dense(width, 1, rng)
        self.dropout_rng = np.random.default_rng([config.seed, 1])
        for m in self.modules():
            if isinstance(m, nn.Dropout):
                m.rng = self.dropout_rng
        self.y_shift = 0.0
        self.y_scale = 1.0

    def set_dropout_repeat(self, repeat: int) -> None:
        for m in self.modules():
            if isinstance(m, nn.Dropout):
                m.repeat = repeat

    def dropout_active(self, active: bool) -> None:
        for m in self.modules():
            if isinstance(m, nn.Dropout):
                m.training = active

    def heads(self, x) -> dict[str, Tensor]:
        """Raw head tensors for a (possibly stacked) batch, in standardised target units."""
        h = self.trunk(nn.as_tensor(x))
        q = nn.reshape(self.head_q(h), (-1,))
        z = self.head_physics(h)
        s2 = nn.reshape(nn.softplus(self.head_variance(h)), (-1,)) + VARIANCE_FLOOR
        return {"q": q, "z": z, "s2": s2}


def _log_squash(z: Tensor, lo: float, hi: float) -> Tensor:
    a, b = math.log(lo), math.log(hi)
    span = (b - a) * (1.0 - 2e-12)
    return nn.exp_safe(nn.sigmoid(z) * span + (a + 1e-12 * (b - a)))


def physics_parameters(z: Tensor) -> dict[str, Tensor]:
    """Squash the physics head into ``(q_max, K0, dH, n)`` inside their bounds."""
    n_lo, n_hi = N_RANGE
    return {
        "q_max": _log_squash(z[:, 0], *Q_MAX_RANGE),
        "K0": _log_squash(z[:, 1], *K0_RANGE),
        "dH": nn.sigmoid(z[:, 2]) * (DH_RANGE[0] - DH_RANGE[1]) + DH_RANGE[1],
        "n": nn.sigmoid(z[:, 3]) * ((n_hi - n_lo) * (1.0 - 2e-9)) + (n_lo + 1e-9 * (n_hi - n_lo)),
    }


def build(config: PinnConfig, n_features: int) -> PinnNet:
    """Construct the network; ``net.n_parameters()`` reports its size."""
    return PinnNet(config, n_features)


def _pairs(group: np.ndarray, temperature: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same = (group[:, None] == group[None, :]) & (temperature[:, None] != temperature[None, :])
    i, j = np.nonzero(np.triu(same, k=1))
    return i, j


def physics_loss(q, q_max, ln_k, dh, temperature, pore_diameter, group, q_up=None,
                 pairs=None) -> dict[str, Tensor]:
    """Physics penalty terms.

    ``q``, ``q_max`` and ``q_up`` (uptake at ``1.05 p``) share one unit;
    ``pairs`` optionally adds further ``(q(p'), q(1.05 p'))`` tensors to the
    monotonicity average;
    ``ln_k`` is the log affinity at each row's own temperature and ``dh``
    the enthalpy in J/mol.  Van't Hoff consistency is scored over row pairs
    of equal ``group`` at different temperatures.
    """
    q, q_max = nn.as_tensor(q), nn.as_tensor(q_max)
    temperature = np.asarray(temperature, float)
    group = np.asarray(group)
    d = np.asarray(pore_diameter, float)
    zero = Tensor(np.array(0.0))
    terms = {
        "positivity": nn.mean(nn.square(nn.relu(-q))),
        "saturation": nn.mean(nn.square(nn.relu(q - q_max))),
        "monotonicity": zero,
        "vant_hoff": zero,
        "sieving": zero,
    }
    drops = [q - nn.as_tensor(q_up)] if q_up is not None else []
    drops += [nn.as_tensor(a) - nn.as_tensor(b) for a, b in (pairs or ())]
    if drops:
        terms["monotonicity"] = nn.mean(nn.square(nn.relu(drops[0] if len(drops) == 1 else nn.concat(drops))))
    i, j = _pairs(group, temperature)
    if i.size:
        ln_k, dh = nn.as_tensor(ln_k), nn.as_tensor(dh)
        dh_pair = (dh[i] + dh[j]) * 0.5
        inv = (1.0 / temperature[i] - 1.0 / temperature[j]) / R_GAS
        terms["vant_hoff"] = nn.mean(nn.square(ln_k[i] - ln_k[j] + dh_pair * inv))
    gap = np.maximum(KINETIC_DIAMETER_NM - d, 0.0)
    if np.any(gap > 0):
        terms["sieving"] = nn.mean(nn.square(q) * gap)
    return terms


def _stacked_heads(net: PinnNet, batch: PinnData, with_physics: bool = True) -> tuple[dict, int]:
    blocks = [batch.x]
    if with_physics:
        blocks += [a for a in (batch.x_up, batch.x_col, batch.x_col_up) if a is not None]
    net.set_dropout_repeat(len(blocks))  # one dropout mask per row shared by all its twins
    out = net.heads(np.vstack(blocks) if len(blocks) > 1 else batch.x)
    net.set_dropout_repeat(1)
    return out, len(blocks)


def penalty_scale(net: PinnNet, batch: PinnData) -> np.ndarray:
    """Per-row ``1 / sigma`` that whitens the uptake penalties (a constant during differentiation)."""
    out, _ = _stacked_heads(net, batch)
    return 1.0 / np.sqrt(out["s2"].data)


def _forward_terms(net: PinnNet, batch: PinnData, lam: float, delta: float, with_physics: bool = True,
                   scale: np.ndarray | None = None):
    """Loss tensor and per-term floats for one batch; ``scale`` overrides the whitening factors."""
    n = len(batch)
    out, n_blocks = _stacked_heads(net, batch, with_physics)
    q_all, z_all, s2_all = out["q"], out["z"], out["s2"]
    paired = n_blocks > 1
    q, s2 = (q_all[:n], s2_all[:n]) if paired else (q_all, s2_all)
    y = (batch.y - net.y_shift) / net.y_scale
    huber = nn.huber(q, Tensor(y), delta)
    nll = nn.mean(nn.log_safe(s2) + nn.square(q - y) / s2) * 0.5
    data = (huber + nll) * 0.5
    values = {"data_loss": data.item(), "huber": huber.item()}
    if not with_physics:
        return data, values
    z = z_all[:n] if paired else z_all
    par = physics_parameters(z)
    # uptake penalties are measured in units of each row's predicted noise level (held constant),
    # the same whitening the likelihood applies to data misfit
    inv_sd = 1.0 / np.sqrt(s2_all.data) if scale is None else np.asarray(scale, float)
    unit = inv_sd[:n]
    offset = net.y_shift / net.y_scale
    q_phys = (q + offset) * unit
    ln_k = nn.log_safe(par["K0"]) - par["dH"] * (1.0 / (R_GAS * batch.temperature))
    k = 1
    q_up = None
    if batch.x_up is not None:
        q_up, k = (q_all[n:2 * n] + offset) * unit, 2
    pairs = []
    if batch.x_col is not None and batch.x_col_up is not None:
        u_col = inv_sd[k * n:(k + 1) * n]
        pairs.append((q_all[k * n:(k + 1) * n] * u_col, q_all[(k + 1) * n:(k + 2) * n] * u_col))
    terms = physics_loss(q_phys, par["q_max"] * (unit / net.y_scale), ln_k, par["dH"], batch.temperature,
                         batch.pore_diameter, batch.group, q_up=q_up, pairs=pairs)
    phys = terms["positivity"] + terms["saturation"] + terms["monotonicity"] + terms["vant_hoff"] + terms["sieving"]
    total = data + phys * lam
    values.update({f"physics_{k}": t.item() for k, t in terms.items()})
    values["total"] = total.item()
    return total, values


def loss(net: PinnNet, batch: PinnData, lam: float, scale: np.ndarray | None = None) -> Tensor:
    """Training objective for one batch at fixed ``lambda_effective``.

    Its gradient treats the whitening factors as constants; pass ``scale``
    (from :func:`penalty_scale`) to evaluate the objective with them frozen.
    """
    return _forward_terms(net, batch, lam, net.config.huber_delta, scale=scale)[0]


# ----------------------------------------------------------------------- training


def _r2(y, pred) -> float:
    ss = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else math.nan


def _val_loss(net: PinnNet, val: PinnData) -> tuple[float, float]:
    net.eval()
    data, _ = _forward_terms(net, val, 0.0, net.config.huber_delta, with_physics=False)
    pred = predict(net, val.x).q_pred
    return data.item(), _r2(val.y, pred)


def _start_capacity_above(net: PinnNet, q: float) -> None:
    """Set the capacity-channel bias so the untrained head predicts roughly ``q``.

    Starting below the observed uptakes would make the saturation penalty
    drag predictions down before the capacity head has caught up.
    """
    lo, hi = (math.log(v) for v in Q_MAX_RANGE)
    frac = min(max((math.log(min(max(q, Q_MAX_RANGE[0]), Q_MAX_RANGE[1])) - lo) / (hi - lo), 1e-6), 1 - 1e-6)
    net.head_physics.bias.data[0] = math.log(frac / (1.0 - frac))


def train(net: PinnNet, train_data: PinnData, val_data: PinnData, config: PinnConfig | None = None):
    """Fit the network; returns ``(net, history)`` with the best-validation weights restored.

    ``lambda_effective`` for epoch ``e`` is ``lambda * min(1, e / warmup)``
    times ``1 + r`` where ``r`` is the previous epoch's physics-to-data loss
    ratio clamped to [0, 2].  It is constant within an epoch.
    """
    cfg = config or net.config
    if val_data is None or len(val_data) == 0:
        raise ValueError("validation set is empty")
    if train_data.y is None or val_data.y is None:
        raise ValueError("training and validation targets are required")
    y = train_data.y
    net.y_shift = float(np.mean(y))
    net.y_scale = float(np.std(y)) or 1.0
    _start_capacity_above(net, 2.0 * float(np.max(y)))
    sched = ScheduleConfig(cfg.lr, cfg.lr_min, cfg.restart_period, 2, cfg.warmup_epochs)
    state = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    params = net.parameters()
    order_rng = np.random.default_rng([cfg.seed, 2])
    colloc_rng = np.random.default_rng([cfg.seed, 4])
    best = nn.state_arrays(net)
    last_good = best
    best_val, wait, ratio = math.inf, 0, 0.0
    lr_factor, recoveries = 1.0, 0
    history: list[dict] = []
    n = len(train_data)
    epoch = 0
    while epoch < cfg.max_epochs:
        ramp = min(1.0, epoch / cfg.warmup_epochs) if cfg.warmup_epochs > 0 else 1.0
        lam = cfg.physics_weight * ramp * (1.0 + ratio)
        state.lr = nn.lr_schedule(epoch, sched) * lr_factor
        net.train()
        sums = dict.fromkeys(("data_loss", "huber", "total") + tuple(f"physics_{t}" for t in PHYSICS_TERMS), 0.0)
        epoch_data = train_data
        if train_data.collocate is not None:
            xc, xcu = train_data.collocate(colloc_rng)
            epoch_data = replace(train_data, x_col=xc, x_col_up=xcu)
        try:
            perm = order_rng.permutation(n)
            batches = [perm[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
            for b, idx in enumerate(batches):
                total, values = _forward_terms(net, epoch_data.take(idx), lam, cfg.huber_delta)
                total.backward()
                for k, v in values.items():
                    sums[k] += v * len(idx)
                if (b + 1) % cfg.accumulation == 0 or b == len(batches) - 1:
                    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                    nn.optimizer_step(params, grads, state)
                    net.zero_grad()
        except TrainingFault:
            recoveries += 1
            if recoveries > cfg.max_recoveries:
                raise TrainingFault(f"non-finite values persisted after {cfg.max_recoveries} recoveries")
            nn.load_state(net, last_good)
            net.zero_grad()
            lr_factor *= 0.5
            state = OptimState(lr=cfg.lr * lr_factor, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
            continue
        means = {k: v / n for k, v in sums.items()}
        phys_sum = sum(means[f"physics_{t}"] for t in PHYSICS_TERMS)
        row = dict(means)  # "total" is the batch-size weighted mean of the optimised objective
        row["lambda_effective"] = lam
        row["lr"] = state.lr
        val_loss, val_r2 = _val_loss(net, val_data)
        row.update({"epoch": epoch, "val_data_loss": val_loss, "val_r2": val_r2})
        history.append(row)
        # the NLL half of the data loss can go negative, so violations are measured against the Huber half
        ratio = float(np.clip(phys_sum / (means.pop("huber") + 1e-8), 0.0, 2.0))
        last_good = nn.state_arrays(net)
        if val_loss < best_val:
            best_val, wait, best = val_loss, 0, last_good
        else:
            wait += 1
            if wait > cfg.patience:
                break
        epoch += 1
    nn.load_state(net, best)
    net.eval()
    return net, history


def breakdown(row: dict) -> LossBreakdown:
    return LossBreakdown(row["data_loss"], row["physics_saturation"], row["physics_monotonicity"],
                         row["physics_positivity"], row["physics_vant_hoff"], row["physics_sieving"],
                         row["total"], row["lambda_effective"])


# ---------------------------------------------------------------------- inference


def _outputs(net: PinnNet, x) -> PinnOutputs:
    out = net.heads(x)
    par = physics_parameters(out["z"])
    phys = np.column_stack([par[k].data for k in ("q_max", "K0", "dH", "n")])
    # uptake is bounded below by zero; training still sees the unclamped head through the positivity term
    q = np.maximum(net.y_shift + net.y_scale * out["q"].data, 0.0)
    return PinnOutputs(q, phys, net.y_scale**2 * out["s2"].data)


def predict(net: PinnNet, x) -> PinnOutputs:
    """Deterministic forward pass (dropout off)."""
    net.eval()
    return _outputs(net, np.asarray(x, float))


@dataclass
class Uncertainty:
    mean: np.ndarray
    sigma_aleatoric: np.ndarray
    sigma_epistemic: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    z: float

    @property
    def sigma_total(self) -> np.ndarray:
        return np.sqrt(self.sigma_aleatoric**2 + self.sigma_epistemic**2)


def predict_with_uncertainty(net: PinnNet, x, n_mc: int = 100, z: float = 1.96, seed: int = 0,
                             max_rows: int = 65_536) -> Uncertainty:
    """Monte Carlo dropout: mean and spread over ``n_mc`` stochastic passes.

    Interval is ``mean +/- z sqrt(sigma_aleatoric^2 + sigma_epistemic^2)``;
    normalisation layers stay in inference mode.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    x = np.asarray(x, float)
    n = x.shape[0]
    net.eval()
    net.dropout_active(True)
    saved = [m.rng for m in net.modules() if isinstance(m, nn.Dropout)]
    rng = np.random.default_rng([seed, 3])
    for m in net.modules():
        if isinstance(m, nn.Dropout):
            m.rng = rng
    q = np.empty((n_mc, n))
    s2 = np.empty((n_mc, n))
    try:
        per_chunk = max(1, max_rows // max(n, 1))
        for start in range(0, n_mc, per_chunk):
            k = min(per_chunk, n_mc - start)
            out = _outputs(net, np.tile(x, (k, 1)))
            q[start:start + k] = out.q_pred.reshape(k, n)
            s2[start:start + k] = out.sigma2_aleatoric.reshape(k, n)
    finally:
        for m, r in zip((m for m in net.modules() if isinstance(m, nn.Dropout)), saved):
            m.rng = r
        net.eval()
    mean = q.mean(axis=0)
    shifted = q - q[0]  # pivot on the first pass: identical passes give exactly zero spread
    epi = np.sqrt(np.maximum(np.mean(shifted**2, axis=0) - np.mean(shifted, axis=0) ** 2, 0.0))
    ale = np.sqrt(s2.mean(axis=0))
    half = z * np.sqrt(ale**2 + epi**2)
    return Uncertainty(mean, ale, epi, mean - half, mean + half, z)


class PinnModel:
    """Callable wrapper mapping (pressure, temperature) sweeps for one material to predictions."""

    def __init__(self, net: PinnNet, pipeline: FeaturePipeline, material: RawInputs):
        self.net, self.pipeline = net, pipeline
        self.material = material.take([0])

    def _raw(self, p, t) -> RawInputs:
        p, t = np.broadcast_arrays(np.asarray(p, float), np.asarray(t, float))
        base = self.material.take(np.zeros(p.size, dtype=int))
        return base.with_pressure(p.ravel()).with_temperature(t.ravel())

    def predict(self, p, t):
        shape = np.broadcast_shapes(np.shape(p), np.shape(t))
        out = predict(self.net, self.pipeline.transform(self._raw(p, t)))
        return out.q_pred.reshape(shape), out.physics_params[:, 0].reshape(shape)

    def __call__(self, p, t):
        return self.predict(p, t)


def save(net: PinnNet, stem, extra: dict | None = None) -> None:
    header = {"config": net.config.to_dict(), "n_features": net.n_features,
              "y_shift": net.y_shift, "y_scale": net.y_scale, **(extra or {})}
    nn.save_checkpoint(stem, net, header)


def load(stem) -> tuple[PinnNet, dict]:
    header, arrays = nn.load_checkpoint(stem)
    net = build(PinnConfig.from_dict(header["config"]), int(header["n_features"]))
    nn.load_state(net, arrays)
    net.y_shift, net.y_scale = float(header["y_shift"]), float(header["y_scale"])
    net.eval()
    return net, header


def monotonicity_violation_rate(model, pressures: Sequence[float], temperatures: Sequence[float]) -> float:
    """Fraction of adjacent pressure pairs on the sweep where predicted uptake decreases."""
    p = np.asarray(pressures, float)
    t = np.asarray(temperatures, float)
    grid_p, grid_t = np.meshgrid(p, t)
    out = model.predict(grid_p, grid_t)
    q = out[0] if isinstance(out, tuple) else out
    return float(np.mean(np.diff(q, axis=1) < 0))
