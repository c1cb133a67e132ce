import math

import numpy as np
import pytest

from acwm.autodiff import (BatchNormStats, GraphConsumedError, NonDeterministicError, NonFiniteError,
                           OneCycleConfig, OptimizerState, ShapeError, Tensor, adamw_step, backprop,
                           clip_grad_norm, grad_check, kernel_forward, onecycle_lr_at, ops)
from acwm.autodiff import checkpoint as ckpt_io
from acwm.autodiff.optim import MissingGradError
from acwm.autodiff.tensor import make_node


def _t(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


# kernels

def test_conv1d_cross_correlation_example():
    x = _t([[[1, 2, 3]]], grad=False)
    w = _t([[[1, 0, -1]]], grad=False)
    y = kernel_forward("conv1d", x, {"weight": w})
    np.testing.assert_array_equal(y.data, [[[-2.0]]])


def test_conv1d_stride_padding_shape(rng):
    x = _t(rng.standard_normal((2, 3, 11)))
    w = _t(rng.standard_normal((5, 3, 3)))
    assert ops.conv1d(x, w, stride=2, padding=1).shape == (2, 5, 6)


def test_conv1d_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 9)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    y = ops.conv1d(_t(x), _t(w), _t(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(4):
            for j in range(y.shape[2]):
                ref[n, o, j] = np.sum(xp[n, :, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)


def test_linear_identity():
    x = _t(np.arange(6).reshape(2, 3))
    y = kernel_forward("linear", x, {"weight": _t(np.eye(3)), "bias": _t(np.zeros(3))})
    np.testing.assert_array_equal(y.data, x.data)


def test_batchnorm_constant_batch_is_zero():
    x = _t(np.full((4, 3, 5), 2.5))
    y = ops.batchnorm1d(x, _t(np.ones(3)), _t(np.zeros(3)), BatchNormStats.create(3), train=True)
    np.testing.assert_allclose(y.data, 0.0, atol=1e-6)


def test_batchnorm_running_stats_momentum(rng):
    x = rng.standard_normal((8, 2, 4)).astype(np.float32) + 3.0
    st = BatchNormStats.create(2)
    ops.batchnorm1d(_t(x), _t(np.ones(2)), _t(np.zeros(2)), st, train=True)
    np.testing.assert_allclose(st.mean, 0.1 * x.mean(axis=(0, 2)), rtol=1e-5)


def test_batchnorm_train_batch_size_one_rejected():
    with pytest.raises(ShapeError):
        ops.batchnorm1d(_t(np.ones((1, 2, 4))), _t(np.ones(2)), _t(np.zeros(2)),
                        BatchNormStats.create(2), train=True)


def test_kernel_errors():
    with pytest.raises(ShapeError):
        ops.linear(_t(np.ones((2, 3))), _t(np.ones((4, 5))))
    with pytest.raises(NonFiniteError):
        ops.linear(_t([[np.nan, 1.0]]), _t(np.eye(2)))
    with pytest.raises(ValueError):
        kernel_forward("softmax", _t([1.0]))


# backprop

def test_linear_weight_grad_is_outer_product(rng):
    x = rng.standard_normal((1, 4)).astype(np.float32)
    w = _t(rng.standard_normal((3, 4)))
    y = ops.linear(_t(x, grad=False), w)
    backprop(y, np.ones((1, 3), np.float32))
    np.testing.assert_allclose(w.grad, np.outer(np.ones(3), x[0]), rtol=1e-6)


def test_constant_subgraph_writes_no_grads():
    a = _t([1.0, 2.0], grad=False)
    y = ops.total(ops.square(a))
    backprop(y)
    assert a.grad is None


def test_residual_reuse_accumulates(rng):
    x = _t(rng.standard_normal((2, 3)))
    w = _t(rng.standard_normal((3, 3)), grad=False)
    fx = ops.linear(x, w)
    y = ops.residual_add(x, fx)
    seed = np.ones((2, 3), np.float32)
    backprop(y, seed)
    np.testing.assert_allclose(x.grad, seed + seed @ w.data, rtol=1e-5)


def test_double_backward_rejected():
    x = _t([1.0, 2.0])
    y = ops.total(ops.square(x))
    backprop(y)
    with pytest.raises(GraphConsumedError):
        backprop(y)


def test_non_finite_gradient_detected():
    x = _t([1.0])
    y = make_node(x.data.copy(), (x,), lambda g: (np.full_like(g, np.inf),))
    with pytest.raises(NonFiniteError):
        backprop(ops.total(y))


def test_backprop_linearity_over_graph_copies(rng):
    w = _t(rng.standard_normal((3, 4)))
    xa, xb = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))

    def f(x):
        return ops.total(ops.relu(ops.linear(_t(x, grad=False), w)))

    backprop(f(xa))
    ga = w.grad.copy()
    w.grad = None
    backprop(f(xb))
    gb = w.grad.copy()
    w.grad = None
    backprop(ops.add(f(xa), f(xb)))
    np.testing.assert_allclose(w.grad, ga + gb, rtol=1e-6, atol=1e-7)


# grad_check

def test_grad_check_square():
    x = _t([0.3, -1.2, 2.0])
    rep = grad_check(lambda: ops.total(ops.square(x)), {"x": x}, eps=1e-4, tol=1e-4)
    assert rep.passed and rep.max_rel_err <= 1e-4


def test_grad_check_constant():
    x = _t([0.3, -1.2])
    rep = grad_check(lambda: ops.total(Tensor(np.ones(2, np.float32))), {"x": x})
    assert rep.passed and rep.max_rel_err == 0.0


def test_grad_check_detects_corrupted_backward():
    x = _t([0.3, -1.2, 2.0])

    def bad_square(t):
        return make_node(t.data * t.data, (t,), lambda g: (g * t.data,))  # missing factor 2

    rep = grad_check(lambda: ops.total(bad_square(x)), {"x": x})
    assert not rep.passed


def test_grad_check_detects_nondeterminism():
    x = _t([1.0])
    r = np.random.default_rng(0)
    with pytest.raises(NonDeterministicError):
        grad_check(lambda: ops.total(ops.mul(x, float(r.standard_normal()))), {"x": x})


# optimizer and schedule

def test_adamw_zero_grad_no_decay_is_identity():
    p = {"w": _t([1.0, -2.0])}
    p["w"].grad = np.zeros(2, np.float32)
    adamw_step(OptimizerState(lr=0.1), p)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adamw_first_step():
    p = {"w": _t([1.0])}
    p["w"].grad = np.ones(1, np.float32)
    adamw_step(OptimizerState(lr=0.1), p)
    assert abs(float(p["w"].data[0]) - 0.9) < 1e-6


def test_adamw_decoupled_decay():
    p = {"w": _t([1.0])}
    p["w"].grad = np.zeros(1, np.float32)
    adamw_step(OptimizerState(lr=0.1, weight_decay=0.1), p)
    assert abs(float(p["w"].data[0]) - 0.99) < 1e-7


def test_adamw_deterministic(rng):
    g = rng.standard_normal(5).astype(np.float32)
    outs = []
    for _ in range(2):
        p = {"w": _t(np.linspace(-1, 1, 5))}
        st = OptimizerState(lr=1e-2, weight_decay=1e-2)
        for _ in range(3):
            p["w"].grad = g.copy()
            adamw_step(st, p)
        outs.append(p["w"].data.tobytes())
    assert outs[0] == outs[1]


def test_adamw_missing_grad():
    with pytest.raises(MissingGradError):
        adamw_step(OptimizerState(), {"w": _t([1.0])})


def test_onecycle_endpoints_and_peak():
    cfg = OneCycleConfig()
    assert onecycle_lr_at(0, 100, 1e-3) == pytest.approx(1e-3 / 25)
    assert onecycle_lr_at(30, 100, 1e-3) == 1e-3
    assert onecycle_lr_at(100, 100, 1e-3) == pytest.approx(1e-3 / 1e4)
    lrs = [onecycle_lr_at(s, 100, 1e-3, cfg) for s in range(101)]
    assert lrs.count(1e-3) == 1
    assert all(b >= a for a, b in zip(lrs[:31], lrs[1:31]))
    assert all(b <= a for a, b in zip(lrs[30:], lrs[31:]))


def test_onecycle_warmup_value():
    start = 1e-3 / 25
    expected = start + (1e-3 - start) * (1 - math.cos(math.pi * 15 / 30)) / 2
    got = onecycle_lr_at(15, 100, 1e-3)
    assert got == pytest.approx(expected, rel=1e-12)
    assert 4e-5 < got < 1e-3


def test_onecycle_errors():
    with pytest.raises(ValueError):
        onecycle_lr_at(0, 0, 1e-3)
    with pytest.raises(ValueError):
        onecycle_lr_at(5, 4, 1e-3)


def test_clip_grad_norm():
    p = {"a": _t([0.0, 0.0]), "b": _t([0.0])}
    p["a"].grad = np.array([3.0, 0.0], np.float32)
    p["b"].grad = np.array([4.0], np.float32)
    pre, post = clip_grad_norm(p, 1.0)
    assert pre == pytest.approx(5.0) and post == pytest.approx(1.0, rel=1e-6)
    np.testing.assert_allclose(p["b"].grad, [0.8], rtol=1e-6)


# checkpoint container

def test_checkpoint_roundtrip_bitwise(tmp_path, rng):
    arrays = {"enc.w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.zeros(2, np.float32)}
    path = tmp_path / "m.acwm"
    ckpt_io.save(path, arrays, {"k": 1})
    assert path.read_bytes()[:5] == b"ACWM1"
    back = ckpt_io.load(path)
    assert list(back.arrays) == list(arrays)
    for k in arrays:
        assert back.arrays[k].tobytes() == arrays[k].tobytes()
    assert back.config == {"k": 1}


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.acwm"
    ckpt_io.save(path, {"w": np.ones(3, np.float32)})
    buf = path.read_bytes()
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.from_bytes(b"XXXXX" + buf[5:])
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.from_bytes(buf[:-2])
