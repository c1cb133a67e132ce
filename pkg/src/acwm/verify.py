"""Finite-difference verification suite over every differentiable kernel,
network block and loss, on small random instances."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import grad_check
from .autodiff.ops import BatchNormStats
from .autodiff.tensor import Tensor
from .models import ActionProjector, Classifier, DynamicsPredictor, Encoder, ModelConfig, WorldModel
from .objectives import AsymmetricLossCfg, WorldModelLossCfg, asymmetric_loss, prediction_mse, world_model_loss
from .regularizers import SigregConfig, SliceSet, sigreg, vicreg

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict]]


def _p(rng, *shape, scale=1.0) -> Tensor:
    return Tensor((scale * rng.standard_normal(shape)).astype(np.float32), requires_grad=True)


def _probe(rng, shape) -> Tensor:
    """Fixed random cotangent so that sum(y * c) exercises every output entry."""
    return Tensor(rng.standard_normal(shape).astype(np.float32))


def case_conv1d(rng):
    x, w, b = _p(rng, 3, 2, 11), _p(rng, 4, 2, 3, scale=0.5), _p(rng, 4)
    c = _probe(rng, ops.conv1d(x, w, b, 2, 1).shape)
    return (lambda: ops.total(ops.mul(ops.conv1d(x, w, b, stride=2, padding=1), c))), dict(x=x, w=w, b=b)


def case_conv1d_pointwise(rng):
    x, w = _p(rng, 3, 5, 7), _p(rng, 4, 5, 1, scale=0.5)
    c = _probe(rng, (3, 4, 7))
    return (lambda: ops.total(ops.mul(ops.conv1d(x, w), c))), dict(x=x, w=w)


def case_linear(rng):
    x, w, b = _p(rng, 5, 6), _p(rng, 3, 6), _p(rng, 3)
    c = _probe(rng, (5, 3))
    return (lambda: ops.total(ops.mul(ops.linear(x, w, b), c))), dict(x=x, w=w, b=b)


def case_batchnorm_train(rng):
    x, g, b = _p(rng, 4, 3, 6), Tensor((1 + 0.2 * rng.standard_normal(3)).astype(np.float32), requires_grad=True), _p(rng, 3)
    c = _probe(rng, (4, 3, 6))

    def f():
        return ops.total(ops.mul(ops.batchnorm1d(x, g, b, BatchNormStats.create(3), True), c))
    return f, dict(x=x, g=g, b=b)


def case_batchnorm_eval(rng):
    x, g, b = _p(rng, 4, 3, 6), _p(rng, 3), _p(rng, 3)
    st = BatchNormStats.create(3)
    st.mean = rng.standard_normal(3).astype(np.float32)
    st.var = rng.uniform(0.5, 2.0, 3).astype(np.float32)
    c = _probe(rng, (4, 3, 6))
    return (lambda: ops.total(ops.mul(ops.batchnorm1d(x, g, b, st, False), c))), dict(x=x, g=g, b=b)


def case_relu_pool_residual(rng):
    x, r = _p(rng, 3, 4, 8), _p(rng, 3, 4, 8)
    c = _probe(rng, (3, 4))
    return (lambda: ops.total(ops.mul(ops.global_meanpool(ops.relu(ops.residual_add(x, r))), c))), dict(x=x, r=r)


def case_concat_rows(rng):
    a, b = _p(rng, 4, 3), _p(rng, 4, 2)
    c = _probe(rng, (2, 5))
    return (lambda: ops.total(ops.mul(ops.rows(ops.concat([a, b], axis=1), 1, 3), c))), dict(a=a, b=b)


def _tiny_cfg() -> ModelConfig:
    return ModelConfig(in_channels=2, stem_width=4, stage_blocks=[1, 1], stage_widths=[8, 8],
                       latent_dim=6, predictor_hidden=8, projector_layers=3, num_classes=3)


def case_encoder(rng):
    cfg = _tiny_cfg()
    enc = Encoder(cfg, rng)
    # zero-initialized gammas would hide the residual branch gradients
    for k, p in enc.named_parameters().items():
        if k.endswith("gamma"):
            p.data = (1 + 0.2 * rng.standard_normal(p.shape)).astype(np.float32)
    x = _p(rng, 4, 2, cfg.min_samples() * 2)
    c = _probe(rng, (4, cfg.latent_dim))
    params = enc.named_parameters()
    params["x"] = x
    return (lambda: ops.total(ops.mul(enc(x), c))), params


def _jitter_biases(module, rng) -> None:
    """Zero-initialized biases put ReLU inputs exactly on the kink for all-zero
    actions, where the function is not differentiable."""
    for k, p in module.named_parameters().items():
        if k.endswith("bias"):
            p.data = (0.1 * rng.standard_normal(p.shape)).astype(np.float32)


def case_projector(rng):
    proj = ActionProjector(3, 5, rng)
    _jitter_biases(proj, rng)
    a = rng.integers(-1, 2, (6, 3))
    c = _probe(rng, (6, 5))
    return (lambda: ops.total(ops.mul(proj(a), c))), proj.named_parameters()


def case_predictor(rng):
    pred = DynamicsPredictor(5, 7, rng)
    pred.fc_out.weight.data = (0.3 * rng.standard_normal(pred.fc_out.weight.shape)).astype(np.float32)
    h, e = _p(rng, 4, 5), _p(rng, 4, 5)
    c = _probe(rng, (4, 5))
    params = pred.named_parameters()
    params.update(h=h, e=e)
    return (lambda: ops.total(ops.mul(pred(h, e), c))), params


def case_classifier(rng):
    clf = Classifier(5, 3, rng)
    h = _p(rng, 4, 5)
    c = _probe(rng, (4, 3))
    params = clf.named_parameters()
    params["h"] = h
    return (lambda: ops.total(ops.mul(clf(h), c))), params


def case_prediction_mse(rng):
    a, b = _p(rng, 6, 4), _p(rng, 6, 4)
    return (lambda: prediction_mse(a, b)), dict(a=a, b=b)


def case_sigreg(rng):
    H = _p(rng, 16, 5)
    sl = SliceSet.draw(5, 8, int(rng.integers(1 << 30)))
    return (lambda: sigreg(H, sl)), dict(H=H)


def case_vicreg(rng):
    a, b = _p(rng, 10, 4, scale=0.7), _p(rng, 10, 4, scale=0.7)
    return (lambda: vicreg(a, b)[0]), dict(a=a, b=b)


def case_asl(rng):
    z = _p(rng, 8, 3, scale=2.0)
    y = rng.integers(0, 2, (8, 3))
    return (lambda: asymmetric_loss(z, y, AsymmetricLossCfg())), dict(z=z)


def case_world_model_loss(rng):
    cfg = ModelConfig(in_channels=2, stem_width=4, stage_blocks=[1, 1], stage_widths=[8, 8],
                      latent_dim=5, predictor_hidden=8, num_classes=3)
    wm = WorldModel(cfg, seed=int(rng.integers(1 << 30)))
    _jitter_biases(wm.projector, rng)
    wm.predictor.fc_out.weight.data = (0.3 * rng.standard_normal(wm.predictor.fc_out.weight.shape)).astype(np.float32)
    ht, hn = _p(rng, 8, 5), _p(rng, 8, 5)
    a = rng.integers(-1, 2, (8, 3))
    sl = SliceSet.draw(5, 6, int(rng.integers(1 << 30)))
    lc = WorldModelLossCfg(0.3, SigregConfig(6))
    params = {**wm.projector.named_parameters("proj."), **wm.predictor.named_parameters("pred.")}
    params.update(ht=ht, hn=hn)
    return (lambda: world_model_loss(ht, hn, a, wm, lc, sl).total), params


CASES: dict[str, Case] = {
    "conv1d": case_conv1d,
    "conv1d_pointwise": case_conv1d_pointwise,
    "linear": case_linear,
    "batchnorm_train": case_batchnorm_train,
    "batchnorm_eval": case_batchnorm_eval,
    "relu_pool_residual": case_relu_pool_residual,
    "concat_rows": case_concat_rows,
    "encoder": case_encoder,
    "projector": case_projector,
    "predictor": case_predictor,
    "classifier": case_classifier,
    "prediction_mse": case_prediction_mse,
    "sigreg": case_sigreg,
    "vicreg": case_vicreg,
    "asymmetric_loss": case_asl,
    "world_model_loss": case_world_model_loss,
}


@dataclass
class SuiteRow:
    case: str
    seed: int
    max_rel_err: float
    passed: bool


def gradient_suite(seeds=range(20), tol: float = 1e-3, eps: float = 1e-5, cases: dict[str, Case] | None = None,
                   progress=None) -> tuple[list[SuiteRow], float]:
    """Run every case for every seed; returns rows and elapsed seconds."""
    t0 = time.perf_counter()
    rows = []
    for name, case in (cases or CASES).items():
        for s in seeds:
            f, params = case(np.random.default_rng([s, len(name)]))
            rep = grad_check(f, params, eps=eps, tol=tol, seed=s)
            rows.append(SuiteRow(name, int(s), rep.max_rel_err, rep.passed))
        if progress:
            worst = max(r.max_rel_err for r in rows if r.case == name)
            progress(f"[gradcheck] {name}: worst rel err {worst:.2e}")
    return rows, time.perf_counter() - t0
