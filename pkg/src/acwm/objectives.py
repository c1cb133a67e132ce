"""Training objectives and the lambda-balancing diagnostic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import ops
from .autodiff.ops import _sigmoid
from .autodiff.tensor import ShapeError, Tensor, as_tensor, backprop, make_node
from .models import WorldModel
from .regularizers import SigregConfig, SliceSet, sigreg, slices_for_step


@dataclass(frozen=True)
class WorldModelLossCfg:
    lam: float = 0.05
    sigreg: SigregConfig = field(default_factory=SigregConfig)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class LossBreakdown:
    total: Tensor
    pred: Tensor
    reg: Tensor
    lam: float

    def values(self) -> dict[str, float]:
        return {"loss_total": float(self.total.data), "loss_pred": float(self.pred.data),
                "loss_reg": float(self.reg.data)}


def prediction_mse(h_pred: Tensor, h_next: Tensor) -> Tensor:
    if h_pred.shape != h_next.shape:
        raise ShapeError(f"prediction {h_pred.shape} vs target {h_next.shape}")
    return ops.mean(ops.square(ops.sub(h_pred, h_next)))


def combine(pred: Tensor, reg: Tensor, lam: float) -> LossBreakdown:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    total = ops.add(ops.mul(pred, 1.0 - lam), ops.mul(reg, lam))
    return LossBreakdown(total, pred, reg, lam)


def world_model_loss(h_t: Tensor, h_next: Tensor, a, model: WorldModel,
                     cfg: WorldModelLossCfg, slices: SliceSet) -> LossBreakdown:
    """(1 - lam) * MSE(Dyn(h_t, Proj(a)), h_next) + lam * (SIGReg(H_t) + SIGReg(H_next)).

    Both latents carry gradients; there is no stop-gradient on the target.
    """
    if not 0.0 <= cfg.lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {cfg.lam}")
    if h_t.shape != h_next.shape:
        raise ShapeError(f"h_t {h_t.shape} and h_next {h_next.shape} differ")
    a = np.asarray(a.data if isinstance(a, Tensor) else a)
    if a.shape[0] != h_t.shape[0]:
        raise ShapeError("action batch size differs from latent batch size")
    h_pred = model.predict_next(h_t, a)
    pred = prediction_mse(h_pred, h_next)
    reg = ops.add(sigreg(h_t, slices), sigreg(h_next, slices))
    return combine(pred, reg, cfg.lam)


def naive_ssl_loss(h_t: Tensor, h_next: Tensor, model: WorldModel,
                   cfg: WorldModelLossCfg, slices: SliceSet) -> LossBreakdown:
    """World-model loss with every action replaced by the zero vector."""
    zeros = np.zeros((h_t.shape[0], model.cfg.num_classes), dtype=np.float32)
    return world_model_loss(h_t, h_next, zeros, model, cfg, slices)


@dataclass(frozen=True)
class AsymmetricLossCfg:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing parameters must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")


def _softplus(z):
    return np.logaddexp(0.0, z)


def asymmetric_loss(logits, y, cfg: AsymmetricLossCfg = AsymmetricLossCfg()) -> Tensor:
    """Asymmetric multi-label loss, mean over all B*C entries.

    Positives: -(1-p)^gamma_pos * log p. Negatives use the shifted probability
    p_m = max(p - margin, 0): -p_m^gamma_neg * log(1 - p_m).
    """
    logits = as_tensor(logits)
    y = np.asarray(y)
    if y.shape != logits.shape:
        raise ShapeError(f"targets {y.shape} vs logits {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("asymmetric_loss targets must be binary")
    z = logits.data.astype(np.float64)
    y = y.astype(np.float64)
    gp, gn, m = cfg.gamma_pos, cfg.gamma_neg, cfg.margin
    p = _sigmoid(z)
    q = _sigmoid(-z)  # 1 - p without cancellation
    log_p = -_softplus(-z)
    if m > 0:
        pm = np.maximum(p - m, 0.0)
        one_minus_pm = np.minimum(q + m, 1.0)
        log_1m = np.log(one_minus_pm)
    else:
        pm = p
        one_minus_pm = q
        log_1m = -_softplus(z)
    pos = -y * q ** gp * log_p
    neg = -(1 - y) * pm ** gn * log_1m
    N = z.size
    value = float((pos + neg).sum() / N)

    def vjp(g):
        g = float(g)
        # d pos / dz = -y * [(1-p)^(gp+1) - gp (1-p)^gp p log p]
        dpos = -y * (q ** (gp + 1) - gp * q ** gp * p * log_p)
        # d neg / dz = -(1-y) [gn pm^(gn-1) log(1-pm) - pm^gn / (1-pm)] * p (1-p) 1[p > m]
        active = (p > m) if m > 0 else np.ones_like(p, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            if gn > 0:
                t1 = gn * np.where(pm > 0, pm ** (gn - 1), 0.0) * log_1m * p * q
            else:
                t1 = 0.0
            t2 = pm ** gn * np.where(one_minus_pm > 0, p * q / one_minus_pm, p)
        dneg = -(1 - y) * active * (t1 - t2)
        return ((g / N) * (dpos + dneg)).astype(logits.data.dtype),

    return make_node(np.asarray(value, dtype=logits.data.dtype), (logits,), vjp)


def binary_cross_entropy(logits, y) -> float:
    """Mean BCE computed directly from logits (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


# ---------------------------------------------------------------------------
# lambda diagnostic


@dataclass
class GradRatioReport:
    ratios: list[float]
    weighted_ratios: list[float]
    lam: float

    @property
    def mean_ratio(self) -> float:
        finite = [r for r in self.ratios if math.isfinite(r)]
        return float(np.mean(finite)) if len(finite) == len(self.ratios) and finite else math.inf

    @property
    def mean_weighted_ratio(self) -> float:
        finite = [r for r in self.weighted_ratios if math.isfinite(r)]
        return float(np.mean(finite)) if len(finite) == len(self.weighted_ratios) and finite else math.inf

    def suggested_lambda(self) -> float:
        """lambda that makes the weighted ratio 1 given the measured raw ratio r:
        (1 - lam) r = lam  =>  lam = r / (1 + r)."""
        r = self.mean_ratio
        return 1.0 if math.isinf(r) else r / (1.0 + r)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "grad_ratio", "weighted_grad_ratio"])
            for i, (r, wr) in enumerate(zip(self.ratios, self.weighted_ratios)):
                w.writerow([i, repr(r), repr(wr)])


def _grad_norm_of(loss: Tensor, params: dict[str, Tensor]) -> float:
    for p in params.values():
        p.grad = None
    backprop(loss, retain_graph=True)
    sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values()
             if p.grad is not None)
    for p in params.values():
        p.grad = None
    return math.sqrt(sq)


def term_grad_ratio(pred: Tensor, reg: Tensor, params: dict[str, Tensor]) -> float:
    """||grad pred|| / ||grad reg|| over ``params``; infinite if the
    regularization gradient vanishes."""
    gp = _grad_norm_of(pred, params)
    gr = _grad_norm_of(reg, params)
    if gr == 0.0:
        return math.inf
    return gp / gr


def grad_ratio_diagnostic(model: WorldModel, batches: Iterable, steps: int,
                          cfg: WorldModelLossCfg, seed: int = 0) -> GradRatioReport:
    """Measure the raw and lambda-weighted gradient ratio of the prediction and
    regularization terms over the encoder parameters for ``steps`` batches.

    ``batches`` yields (X_t, X_next, a) arrays. The model is left unchanged.
    """
    if not 0.0 < cfg.lam < 1.0:
        raise ValueError("lambda must lie strictly inside (0, 1) for the diagnostic")
    params = model.encoder.named_parameters()
    saved = model.state_dict()
    model.train()
    ratios, weighted = [], []
    for i, (Xt, Xn, a) in enumerate(batches):
        if i >= steps:
            break
        h_t = model.encoder(Xt)
        h_n = model.encoder(Xn)
        sl = slices_for_step(h_t.shape[1], cfg.sigreg, seed, i)
        br = world_model_loss(h_t, h_n, a, model, cfg, sl)
        r = term_grad_ratio(br.pred, br.reg, params)
        ratios.append(r)
        weighted.append(r * (1.0 - cfg.lam) / cfg.lam)
    model.load_state_dict(saved)
    model.zero_grad()
    return GradRatioReport(ratios, weighted, cfg.lam)
