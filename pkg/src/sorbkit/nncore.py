"""Reverse-mode automatic differentiation and network building blocks.

A :class:`Tensor` wraps a float64 array.  Operations on tensors that require
gradients record a parent list and a backward closure; :meth:`Tensor.backward`
walks the graph in reverse topological order.  Every op checks its output for
non-finite values and raises :class:`TrainingFault` so a training loop can
roll back instead of propagating NaN.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

EXP_CLAMP = 30.0
LOG_FLOOR = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


class TrainingFault(FloatingPointError):
    """Non-finite value met during a forward pass or an optimizer step."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None) -> None:
        """Accumulate ``d self / d leaf`` into ``leaf.grad`` for every leaf requiring grad."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for par in node._parents:
                if par.requires_grad and id(par) not in seen:
                    stack.append((par, False))
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, float)
        if seed.shape != self.shape:
            raise ValueError(f"seed gradient shape {seed.shape} != {self.shape}")
        pending: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for par, pg in zip(node._parents, node._backward(g)):
                if pg is None or not par.requires_grad:
                    continue
                key = id(par)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise TrainingFault("non-finite value in forward pass")
    if any(p.requires_grad for p in parents):
        return Tensor(out, True, tuple(parents), backward)
    return Tensor(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data**2, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def swish(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _make(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def gelu(a) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du),)

    return _make(out, (a,), back)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * expit(x),))


def exp_safe(a) -> Tensor:
    """``exp`` with the argument clamped to [-30, 30]; zero gradient outside."""
    a = as_tensor(a)
    inside = np.abs(a.data) <= EXP_CLAMP
    out = np.exp(np.clip(a.data, -EXP_CLAMP, EXP_CLAMP))
    return _make(out, (a,), lambda g: (g * out * inside,))


def log_safe(a) -> Tensor:
    """``log(max(x, 1e-12))``; zero gradient below the floor."""
    a = as_tensor(a)
    above = a.data > LOG_FLOOR
    safe = np.maximum(a.data, LOG_FLOOR)
    return _make(np.log(safe), (a,), lambda g: (g * above / safe,))


# ------------------------------------------------------------------ reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(count))


def huber(pred, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: quadratic within ``delta``, linear beyond."""
    pred, target = as_tensor(pred), as_tensor(target)
    r = pred.data - target.data
    small = np.abs(r) <= delta
    elem = np.where(small, 0.5 * r**2, delta * (np.abs(r) - 0.5 * delta))
    n = float(r.size)

    def back(g):
        d = np.where(small, r, delta * np.sign(r)) * (g / n)
        return _unbroadcast(d, pred.shape), _unbroadcast(-d, target.shape)

    return _make(np.asarray(elem.mean()), (pred, target), back)


# ------------------------------------------------------------------- structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` as one node."""
    x, w = as_tensor(x), as_tensor(w)
    out = x.data @ w.data
    if b is None:
        return _make(out, (x, w), lambda g: (g @ w.data.T, x.data.T @ g))
    b = as_tensor(b)
    out = out + b.data
    return _make(out, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {"swish": swish, "relu": relu, "gelu": gelu}


# ---------------------------------------------------------------------- layers


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    out.extend(m.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterable["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for m in value:
                    if isinstance(m, Module):
                        yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def xavier_uniform(n_in: int, n_out: int, rng: np.random.Generator, gain: float = 0.5) -> np.ndarray:
    limit = gain * math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 0.5):
        self.weight = Tensor(xavier_uniform(n_in, n_out, rng, gain), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        centred = x - mean(x, axis=1, keepdims=True)
        var = mean(square(centred), axis=1, keepdims=True)
        return centred / sqrt(var + self.eps) * self.gain + self.shift


class BatchNorm(Module):
    """Batch statistics in training mode, running averages in eval mode."""

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.eps, self.momentum = eps, momentum
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def __call__(self, x: Tensor) -> Tensor:
        if self.training and x.shape[0] > 1:
            mu = mean(x, axis=0, keepdims=True)
            centred = x - mu
            var = mean(square(centred), axis=0, keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1 - m) * self.running_var + m * var.data[0]
            return centred / sqrt(var + self.eps) * self.gain + self.shift
        norm = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return norm * self.gain + self.shift


class Dropout(Module):
    """Inverted dropout.  ``repeat`` tiles one mask over stacked copies of a batch."""

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p, self.rng = p, rng
        self.repeat = 1

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        n = x.shape[0] // self.repeat
        keep = (self.rng.random((n,) + x.shape[1:]) >= self.p) / (1.0 - self.p)
        if self.repeat > 1:
            keep = np.tile(keep, (self.repeat,) + (1,) * (x.data.ndim - 1))
        return x * keep


@dataclass
class LayerSpec:
    widths: list[int]
    activation: str = "swish"
    dropout_p: float = 0.1
    norm: str = "layer"
    residual: bool = True

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a non-empty list of positive sizes")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.norm not in ("batch", "layer", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")


class ResidualBlock(Module):
    """affine -> norm -> activation -> dropout, plus a (projected) skip connection."""

    def __init__(self, n_in: int, n_out: int, spec: LayerSpec, rng: np.random.Generator):
        self.dense = Dense(n_in, n_out, rng)
        self.norm = {"layer": LayerNorm, "batch": BatchNorm}[spec.norm](n_out) if spec.norm != "none" else None
        self.activation = spec.activation
        self.dropout = Dropout(spec.dropout_p, rng)
        self.residual = spec.residual
        self.proj = Dense(n_in, n_out, rng, bias=False) if spec.residual and n_in != n_out else None

    def __call__(self, x: Tensor) -> Tensor:
        h = self.dense(x)
        if self.norm is not None:
            h = self.norm(h)
        h = self.dropout(ACTIVATIONS[self.activation](h))
        if not self.residual:
            return h
        return h + (self.proj(x) if self.proj is not None else x)


class Trunk(Module):
    def __init__(self, n_in: int, spec: LayerSpec, rng: np.random.Generator):
        sizes = [n_in] + list(spec.widths)
        self.blocks = [ResidualBlock(a, b, spec, rng) for a, b in zip(sizes, sizes[1:])]

    @property
    def width(self) -> int:
        return self.blocks[-1].dense.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


# ------------------------------------------------------------------- optimizer


@dataclass
class OptimState:
    """Decoupled-weight-decay Adam state."""

    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(params: Sequence[Tensor] | Sequence[np.ndarray], grads: Sequence[np.ndarray] | None,
                   state: OptimState) -> float:
    """One AdamW update in place; returns the pre-clipping global gradient norm."""
    arrays = [p.data if isinstance(p, Tensor) else p for p in params]
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    grads = [np.asarray(g, float) for g in grads]
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    if len(state.m) != len(arrays) or any(m.shape != a.shape for m, a in zip(state.m, arrays)):
        raise ValueError("optimizer state does not match parameters")
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if not math.isfinite(norm):
        raise TrainingFault("non-finite gradient")
    if norm > state.clip_norm > 0:
        factor = state.clip_norm / norm
        grads = [g * factor for g in grads]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.step, 1.0 - b2**state.step
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if state.weight_decay:
            a *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


@dataclass
class ScheduleConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    period: int = 50  # first restart period T_0 (epochs), doubling after each restart
    period_mult: int = 2
    warmup_epochs: int = 50


def lr_schedule(epoch: int, cfg: ScheduleConfig) -> float:
    """Linear warmup from ``0.1 lr_max``, then cosine annealing with warm restarts."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_max * (0.1 + 0.9 * epoch / cfg.warmup_epochs)
    t = epoch - cfg.warmup_epochs
    period = cfg.period
    while t >= period:
        t -= period
        period *= cfg.period_mult
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / period))


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(stem: str | Path, module: Module, header: dict | None = None) -> None:
    """Write ``stem.json`` (header, names, shapes) and ``stem.bin`` (little-endian float64)."""
    stem = Path(stem)
    named = module.named_parameters()
    buffers = [(f"{n}.running_{k}", getattr(m, f"running_{k}")) for n, m in _batchnorms(module) for k in ("mean", "var")]
    entries = [(n, p.data) for n, p in named] + buffers
    meta = {"header": header or {}, "dtype": "<f8",
            "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries]}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    flat = np.concatenate([a.ravel() for _, a in entries]) if entries else np.empty(0)
    stem.with_suffix(".bin").write_bytes(flat.astype("<f8").tobytes())


def load_checkpoint(stem: str | Path, module: Module | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; when ``module`` is given its parameters are overwritten in place."""
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays, pos = {}, 0
    for entry in meta["tensors"]:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = flat[pos:pos + size].reshape(entry["shape"]).copy()
        pos += size
    if pos != flat.size:
        raise ValueError("checkpoint payload size does not match its header")
    if module is not None:
        load_state(module, arrays)
    return meta["header"], arrays


def _batchnorms(module: Module, prefix: str = "") -> list[tuple[str, BatchNorm]]:
    out = []
    for name, value in vars(module).items():
        if isinstance(value, BatchNorm):
            out.append((prefix + name, value))
        elif isinstance(value, Module):
            out.extend(_batchnorms(value, f"{prefix}{name}."))
        elif isinstance(value, list):
            for i, m in enumerate(value):
                if isinstance(m, Module):
                    out.extend(_batchnorms(m, f"{prefix}{name}.{i}."))
    return out


def state_arrays(module: Module) -> dict[str, np.ndarray]:
    out = {n: p.data.copy() for n, p in module.named_parameters()}
    for n, bn in _batchnorms(module):
        out[f"{n}.running_mean"] = bn.running_mean.copy()
        out[f"{n}.running_var"] = bn.running_var.copy()
    return out


def load_state(module: Module, arrays: dict[str, np.ndarray]) -> None:
    for n, p in module.named_parameters():
        if arrays[n].shape != p.shape:
            raise ValueError(f"shape mismatch for {n}")
        p.data[...] = arrays[n]
    for n, bn in _batchnorms(module):
        bn.running_mean = arrays[f"{n}.running_mean"].copy()
        bn.running_var = arrays[f"{n}.running_var"].copy()


def numeric_gradient(loss: Callable[[], float], params: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar ``loss()`` with respect to each parameter array."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def spec_dict(spec: LayerSpec) -> dict:
    return asdict(spec)
