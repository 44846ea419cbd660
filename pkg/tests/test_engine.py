import math

import numpy as np
import pytest

from isofuse.engine import (
    Optimizer,
    OptimizerSpec,
    ParamStore,
    add_bias,
    backward,
    concat,
    constant,
    matmul,
    mean_all,
    mul,
    relu,
    rows,
    scheduled_lr,
    sine,
    square,
    sum_all,
)
from isofuse.errors import ConfigError, NumericalError, UsageError


def affine(x, w, b):
    return add_bias(matmul(x, w), b)


# ---------------------------------------------------------------- linear layer


def test_linear_identity():
    store = ParamStore()
    w = store.add("w", np.eye(3))
    b = store.add("b", np.zeros(3))
    x = constant(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    out = affine(x, w, b)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_linear_zero_weights_returns_bias():
    store = ParamStore()
    w = store.add("w", np.zeros((4, 1)))
    b = store.add("b", np.array([5.0]))
    x = constant(np.random.default_rng(0).normal(size=(7, 4)).astype(np.float32))
    out = affine(x, w, b)
    np.testing.assert_array_equal(out.data, np.full((7, 1), 5.0, dtype=np.float32))


def test_linear_matches_elementwise_sum_oracle():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    x = rng.normal(size=(5, 2)).astype(np.float32)

    # oracle: explicit per-element summation, no vectorized product
    expect = np.empty((5, 3), dtype=np.float64)
    for i in range(5):
        for j in range(3):
            acc = 0.0
            for k in range(2):
                acc += float(x[i, k]) * float(w[k, j])
            expect[i, j] = acc + float(b[j])

    store = ParamStore()
    out = affine(constant(x), store.add("w", w), store.add("b", b))
    np.testing.assert_allclose(out.data, expect, rtol=1e-6)


def test_linear_dim_mismatch_is_config_error():
    store = ParamStore()
    w = store.add("w", np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        matmul(constant(np.zeros((1, 4), dtype=np.float32)), w)


# ---------------------------------------------------------------- activations


def test_relu_values():
    out = relu(constant(np.array([-2.0, 0.0, 3.0], dtype=np.float32)))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 3.0])


def test_sine_omega32_analytic_points():
    x = constant(np.array([0.0, math.pi / 64.0]))
    out = sine(x, 32.0)
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)


# ---------------------------------------------------------------- backward


def test_backward_square_of_parameter():
    store = ParamStore(np.float64)
    p = store.add("p", np.array(3.0))
    loss = square(p)
    backward(loss)
    assert p.grad == pytest.approx(6.0)


def test_backward_constant_loss_leaves_grads_zero():
    store = ParamStore(np.float64)
    p = store.add("p", np.array([1.0, 2.0]))
    backward(constant(np.array(7.0)))
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])


def test_backward_rejects_nonscalar_root():
    store = ParamStore(np.float64)
    p = store.add("p", np.array([1.0, 2.0]))
    with pytest.raises(UsageError):
        backward(square(p))


def test_backward_accumulates_additively():
    store = ParamStore(np.float64)
    p = store.add("p", np.array(2.0))
    loss = square(p)
    backward(loss)
    once = p.grad.copy()
    backward(loss)
    np.testing.assert_array_equal(p.grad, 2.0 * once)


def _mlp_loss(store, x, target):
    h = relu(affine(x, store["w0"], store["b0"]))
    out = affine(h, store["w1"], store["b1"])
    return mean_all(square(add_bias(out, constant(-target, dtype=out.dtype))))


def test_backward_matches_central_differences():
    # two-layer MLP, float64 graph, h=1e-3 (float32 differences at this step
    # are dominated by rounding; see the float32 sanity check below)
    rng = np.random.default_rng(42)
    store = ParamStore(np.float64)
    store.add("w0", rng.normal(size=(4, 8)) * 0.5)
    store.add("b0", rng.normal(size=8) * 0.1)
    store.add("w1", rng.normal(size=(8, 2)) * 0.5)
    store.add("b1", rng.normal(size=2) * 0.1)
    x = constant(rng.normal(size=(16, 4)))
    target = rng.normal(size=2)

    store.zero_grad()
    backward(_mlp_loss(store, x, target))

    h = 1e-3
    checked = 0
    for name in store.names():
        p = store[name]
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(_mlp_loss(store, x, target).data)
            flat[idx] = orig - h
            dn = float(_mlp_loss(store, x, target).data)
            flat[idx] = orig
            fd = (up - dn) / (2 * h)
            if abs(gflat[idx]) > 1e-6:
                assert abs(fd - gflat[idx]) / abs(gflat[idx]) < 1e-3, name
                checked += 1
    assert checked > 30


def test_backward_float32_sanity():
    # same graph in float32: agreement within coarse absolute tolerance only
    rng = np.random.default_rng(3)
    store = ParamStore(np.float32)
    store.add("w0", rng.normal(size=(3, 6)) * 0.5)
    store.add("b0", np.zeros(6))
    store.add("w1", rng.normal(size=(6, 1)) * 0.5)
    store.add("b1", np.zeros(1))
    x = constant(rng.normal(size=(8, 3)).astype(np.float32))
    target = np.zeros(1)
    store.zero_grad()
    backward(_mlp_loss(store, x, target))
    h = 1e-2
    w = store["w0"]
    orig = w.data[0, 0]
    w.data[0, 0] = orig + h
    up = float(_mlp_loss(store, x, target).data)
    w.data[0, 0] = orig - h
    dn = float(_mlp_loss(store, x, target).data)
    w.data[0, 0] = orig
    assert abs((up - dn) / (2 * h) - w.grad[0, 0]) < 1e-2


def test_concat_routes_gradients():
    store = ParamStore(np.float64)
    a = store.add("a", np.ones((2, 2)))
    b = store.add("b", np.ones((2, 3)))
    out = concat([a, b], axis=1)
    backward(sum_all(mul(out, out)))
    np.testing.assert_allclose(a.grad, 2.0 * np.ones((2, 2)))
    np.testing.assert_allclose(b.grad, 2.0 * np.ones((2, 3)))


def test_rows_slices_and_scatters_gradient():
    store = ParamStore(np.float64)
    p = store.add("p", np.arange(12.0).reshape(6, 2))
    mid = rows(p, 2, 4)
    np.testing.assert_array_equal(mid.data, p.data[2:4])
    backward(sum_all(mul(mid, mid)))
    expected = np.zeros((6, 2))
    expected[2:4] = 2.0 * p.data[2:4]
    np.testing.assert_allclose(p.grad, expected)
    with pytest.raises(ConfigError):
        rows(p, 4, 2)
    with pytest.raises(ConfigError):
        rows(p, 0, 7)


# ---------------------------------------------------------------- optimizers


def test_step_zero_gradient_keeps_parameters():
    store = ParamStore()
    p = store.add("p", np.array([1.0, -2.0]))
    opt = Optimizer(store, OptimizerSpec(kind="adamw", lr=0.1, weight_decay=0.0))
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_step_single_scalar_closed_form():
    # one step, constant gradient g: update is -lr * g / (|g| + eps)
    g = 0.37
    lr = 0.05
    eps = 1e-8
    store = ParamStore(np.float64)
    p = store.add("p", np.array(1.0))
    p.grad[...] = g
    opt = Optimizer(store, OptimizerSpec(kind="adam", lr=lr, eps=eps))
    opt.step()
    expect = 1.0 - lr * g / (abs(g) + eps)
    assert p.data == pytest.approx(expect, rel=1e-12)
    assert store.step_count == 1


def test_step_decay_only():
    lr, wd = 0.01, 0.5
    store = ParamStore(np.float64)
    p = store.add("p", np.array([2.0, -4.0]))
    opt = Optimizer(store, OptimizerSpec(kind="adamw", lr=lr, weight_decay=wd))
    opt.step()
    np.testing.assert_allclose(p.data, np.array([2.0, -4.0]) * (1 - lr * wd))


def test_step_nan_gradient_aborts_with_name():
    store = ParamStore()
    p = store.add("theta.w0", np.array([1.0]))
    p.grad[...] = np.nan
    opt = Optimizer(store, OptimizerSpec())
    with pytest.raises(NumericalError, match="theta.w0"):
        opt.step()


def test_plain_adam_rejects_decay():
    with pytest.raises(ConfigError):
        OptimizerSpec(kind="adam", weight_decay=0.1)


def test_spec_validation():
    with pytest.raises(ConfigError):
        OptimizerSpec(beta1=1.0)
    with pytest.raises(ConfigError):
        OptimizerSpec(lr=0.0)
    with pytest.raises(ConfigError):
        OptimizerSpec(eps=0.0)


# ---------------------------------------------------------------- schedule


def test_cosine_schedule_endpoints_and_midpoint():
    spec = OptimizerSpec(schedule="cosine", lr=2.0, lr_floor=0.0, total_steps=100)
    assert scheduled_lr(spec, 0) == pytest.approx(2.0)
    assert scheduled_lr(spec, 100) == pytest.approx(0.0, abs=1e-15)
    assert scheduled_lr(spec, 50) == pytest.approx(1.0)


def test_constant_schedule():
    spec = OptimizerSpec(schedule="constant", lr=0.5)
    assert scheduled_lr(spec, 12345, total_steps=1) == 0.5


def test_cosine_zero_total_steps_is_config_error():
    spec = OptimizerSpec(schedule="cosine", lr=1.0)
    with pytest.raises(ConfigError):
        scheduled_lr(spec, 0, total_steps=0)


def test_cosine_monotone_nonincreasing():
    spec = OptimizerSpec(schedule="cosine", lr=1.0, lr_floor=0.1, total_steps=977)
    values = [scheduled_lr(spec, s) for s in range(978)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(0.1)


# ---------------------------------------------------------------- determinism


def _train_once(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("w", rng.normal(size=(3, 3)).astype(np.float32))
    store.add("b", np.zeros(3))
    x = constant(rng.normal(size=(32, 3)).astype(np.float32))
    opt = Optimizer(
        store,
        OptimizerSpec(kind="adamw", lr=1e-2, weight_decay=1e-4,
                      schedule="cosine", total_steps=50),
    )
    for _ in range(50):
        store.zero_grad()
        loss = mean_all(square(affine(x, store["w"], store["b"])))
        backward(loss)
        opt.step()
    return store["w"].data.copy(), store["b"].data.copy()


def test_training_is_bit_deterministic():
    w1, b1 = _train_once(7)
    w2, b2 = _train_once(7)
    assert w1.tobytes() == w2.tobytes()
    assert b1.tobytes() == b2.tobytes()
