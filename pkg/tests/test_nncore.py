import math

import numpy as np
import pytest

from sorbkit import nncore as nn
from sorbkit.nncore import (
    BatchNorm,
    Dense,
    Dropout,
    LayerNorm,
    LayerSpec,
    OptimState,
    ResidualBlock,
    ScheduleConfig,
    Tensor,
    TrainingFault,
    Trunk,
    load_checkpoint,
    lr_schedule,
    numeric_gradient,
    optimizer_step,
    save_checkpoint,
)


def rel_error(a, n):
    a, n = np.ravel(a), np.ravel(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)))


def check(loss_fn, params, tol=1e-4, h=1e-5):
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    numeric = numeric_gradient(lambda: loss_fn().item(), params, h)
    worst = max(rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, worst
    return worst


def test_swish_derivative_at_zero():
    x = Tensor(np.array(0.0), requires_grad=True)
    nn.swish(x).backward()
    assert x.grad == 0.5


def test_safe_ops():
    assert np.isfinite(nn.exp_safe(Tensor(1000.0)).data)
    assert nn.exp_safe(Tensor(1000.0)).item() == math.exp(30.0)
    assert nn.log_safe(Tensor(0.0)).item() == math.log(1e-12)
    x = Tensor(np.array([-2.0, 0.5]), requires_grad=True)
    nn.sum_(nn.log_safe(x)).backward()
    assert x.grad.tolist() == [0.0, 2.0]


@pytest.mark.parametrize("op", ["swish", "relu", "gelu", "softplus", "sigmoid", "exp_safe", "log_safe",
                                "square", "sqrt"])
def test_unary_op_gradients(op):
    rng = np.random.default_rng(0)
    data = rng.uniform(0.2, 2.0, size=(4, 3)) if op in ("log_safe", "sqrt") else rng.normal(size=(4, 3))
    data[np.abs(data) < 0.05] = 0.3  # keep relu away from its kink
    x = Tensor(data, requires_grad=True)
    w = rng.normal(size=(4, 3))
    check(lambda: nn.sum_(getattr(nn, op)(x) * w), [x])


def test_binary_and_structural_gradients():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, size=(1, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    def loss():
        mixed = (a - b) * b / (b + 1.0) + a
        stacked = nn.concat([mixed, mixed[:, 1:2] * 2.0], axis=1)
        out = nn.matmul(stacked[:, :3], w) + nn.mean(nn.reshape(stacked, (-1,)))
        return nn.huber(out, Tensor(np.zeros((5, 2))), delta=0.7) + nn.mean(out, axis=0)[1]

    check(loss, [a, b, w])


def test_three_layer_network_gradients():
    rng = np.random.default_rng(2)
    l1, l2, l3 = Dense(3, 5, rng, gain=1.0), Dense(5, 4, rng, gain=1.0), Dense(4, 4, rng, gain=1.0)
    params = l1.parameters() + l2.parameters() + l3.parameters()
    assert sum(p.data.size for p in params) == 64
    x = Tensor(rng.normal(size=(8, 3)))
    y = Tensor(rng.normal(size=(8, 4)))

    def loss():
        h = nn.gelu(l2(nn.swish(l1(x))))
        return nn.huber(nn.softplus(l3(h)), y) + nn.mean(nn.square(h))

    check(loss, params)


@pytest.mark.parametrize("norm", ["layer", "batch", "none"])
def test_residual_block_gradients(norm):
    rng = np.random.default_rng(3)
    spec = LayerSpec([6, 4], dropout_p=0.3, norm=norm)
    trunk = Trunk(3, spec, rng)
    for block in trunk.blocks:
        if block.norm is not None and hasattr(block.norm, "running_var"):
            block.norm.running_mean = rng.normal(size=block.norm.running_mean.shape)
            block.norm.running_var = rng.uniform(0.5, 2.0, size=block.norm.running_var.shape)
    trunk.eval()
    x = Tensor(rng.normal(size=(7, 3)))
    check(lambda: nn.mean(nn.square(trunk(x))), trunk.parameters())


def test_batchnorm_training_mode_gradients_and_statistics():
    rng = np.random.default_rng(4)
    bn = BatchNorm(3)
    x = Tensor(rng.normal(2.0, 3.0, size=(32, 3)), requires_grad=True)
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)
    w = rng.normal(size=(32, 3))
    check(lambda: nn.sum_(bn(x) * w), [x] + bn.parameters())


def test_layernorm_statistics():
    x = Tensor(np.random.default_rng(5).normal(3.0, 2.0, size=(4, 50)))
    out = LayerNorm(50)(x).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-3)


def test_dropout_modes():
    rng = np.random.default_rng(6)
    drop = Dropout(0.3, rng)
    x = Tensor(np.full((1, 5), 2.0))
    drop.eval()
    assert drop(x) is x
    drop.train()
    avg = np.mean([drop(x).data for _ in range(10_000)], axis=0)
    np.testing.assert_allclose(avg, 2.0, rtol=0.02)
    drop.repeat = 2
    out = drop(Tensor(np.ones((4, 5)))).data
    assert np.array_equal(out[:2], out[2:])
    with pytest.raises(ValueError):
        Dropout(1.0, rng)


def test_nan_guard_and_shape_errors():
    with pytest.raises(TrainingFault):
        Tensor(np.array([1.0])) / Tensor(np.array([0.0]))
    with pytest.raises(ValueError):
        nn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_optimizer_zero_gradient_is_identity():
    p = np.array([1.0, -2.0])
    optimizer_step([p], [np.zeros(2)], OptimState(lr=0.1, weight_decay=0.0))
    assert p.tolist() == [1.0, -2.0]


def test_optimizer_first_step_hand_oracle():
    # m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    p = np.array([0.0])
    optimizer_step([p], [np.array([1.0])], OptimState(lr=0.1, weight_decay=0.0, clip_norm=0.0))
    assert p[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)


def test_weight_decay_is_decoupled():
    p = np.array([2.0])
    optimizer_step([p], [np.array([0.0])], OptimState(lr=0.1, weight_decay=0.5))
    assert p[0] == pytest.approx(2.0 * (1 - 0.05))


def test_clipping_equals_prescaled_gradient():
    g = np.array([6.0, 8.0])  # norm 10
    a, b = np.array([1.0, 1.0]), np.array([1.0, 1.0])
    norm = optimizer_step([a], [g], OptimState(lr=0.01, weight_decay=0.0, clip_norm=1.0))
    optimizer_step([b], [g / 10.0], OptimState(lr=0.01, weight_decay=0.0, clip_norm=0.0))
    assert norm == 10.0 and np.array_equal(a, b)
    with pytest.raises(TrainingFault):
        optimizer_step([a], [np.array([np.nan, 0.0])], OptimState())


def test_optimizer_is_deterministic():
    def run():
        p = np.array([0.3, -0.7])
        st = OptimState(lr=0.05)
        for i in range(5):
            optimizer_step([p], [np.array([math.sin(i), math.cos(i)])], st)
        return p

    assert run().tobytes() == run().tobytes()


def test_lr_schedule():
    cfg = ScheduleConfig(lr_max=1e-3, lr_min=1e-5, period=40, warmup_epochs=50)
    assert lr_schedule(0, cfg) == pytest.approx(1e-4)
    assert lr_schedule(25, cfg) == pytest.approx(1e-3 * 0.55)
    assert lr_schedule(50, cfg) == 1e-3
    assert lr_schedule(70, cfg) == pytest.approx((1e-3 + 1e-5) / 2)
    assert lr_schedule(90, cfg) == 1e-3  # restart: next period 80 epochs
    assert lr_schedule(130, cfg) == pytest.approx((1e-3 + 1e-5) / 2)
    assert lr_schedule(170, cfg) == 1e-3
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    spec = LayerSpec([5, 3], norm="batch")
    a = Trunk(4, spec, rng)
    a(Tensor(rng.normal(size=(6, 4))))  # update running statistics
    save_checkpoint(tmp_path / "ck", a, {"seed": 7})
    b = Trunk(4, spec, np.random.default_rng(99))
    header, arrays = load_checkpoint(tmp_path / "ck", b)
    assert header == {"seed": 7}
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    assert np.array_equal(a.blocks[0].norm.running_mean, b.blocks[0].norm.running_mean)
    raw = (tmp_path / "ck.bin").read_bytes()
    assert len(raw) == 8 * len(np.concatenate([v.ravel() for v in arrays.values()]))


def test_same_seed_same_initialisation():
    spec = LayerSpec([8, 4])
    a, b = Trunk(3, spec, np.random.default_rng(1)), Trunk(3, spec, np.random.default_rng(1))
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


def test_xavier_limits():
    w = nn.xavier_uniform(100, 50, np.random.default_rng(0), gain=0.5)
    assert np.abs(w).max() <= 0.5 * math.sqrt(6 / 150)


def test_residual_block_projection():
    rng = np.random.default_rng(8)
    block = ResidualBlock(3, 5, LayerSpec([5]), rng)
    assert block.proj is not None
    same = ResidualBlock(5, 5, LayerSpec([5]), rng)
    assert same.proj is None
    with pytest.raises(ValueError):
        LayerSpec([], dropout_p=0.1)
