"""AdamW, the one-cycle learning-rate schedule and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import AutodiffError, NonFiniteError, Tensor


class MissingGradError(AutodiffError):
    pass


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: OptimizerState, params: Mapping[str, Tensor], grads=None,
               lr: float | None = None) -> OptimizerState:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    ``grads`` defaults to each parameter's ``.grad``. Raises before touching any
    parameter if a gradient is missing or non-finite.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for k in params:
        g = grads.get(k)
        if g is None:
            raise MissingGradError(f"no gradient populated for parameter {k!r}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {k!r}")

    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        dt = p.data.dtype
        g = np.asarray(grads[k], dtype=dt)
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (b1 * m + (1 - b1) * g).astype(dt)
        v = (b2 * v + (1 - b2) * g * g).astype(dt)
        state.m[k], state.v[k] = m, v
        mhat = m / dt.type(c1)
        vhat = v / dt.type(c2)
        update = mhat / (np.sqrt(vhat) + dt.type(state.eps)) + dt.type(state.weight_decay) * p.data
        p.data = (p.data - dt.type(lr) * update).astype(dt)
    return state


@dataclass(frozen=True)
class OneCycleConfig:
    pct_start: float = 0.3
    div_start: float = 25.0
    div_final: float = 1e4


def onecycle_lr_at(step: int, total_steps: int, max_lr: float,
                   cfg: OneCycleConfig = OneCycleConfig()) -> float:
    """Cosine warmup from ``max_lr/div_start`` to ``max_lr``, then cosine anneal
    to ``max_lr/div_final``. The peak sits at step ``round(pct_start * total)``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    start = max_lr / cfg.div_start
    final = max_lr / cfg.div_final
    warm = min(max(1, round(cfg.pct_start * total_steps)), total_steps)
    if step <= warm:
        frac = step / warm
        return start + (max_lr - start) * (1.0 - math.cos(math.pi * frac)) / 2.0
    frac = (step - warm) / (total_steps - warm)
    return final + (max_lr - final) * (1.0 + math.cos(math.pi * frac)) / 2.0


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(sq)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> tuple[float, float]:
    """Scale all grads so their global L2 norm is at most ``max_norm``.

    Returns (norm before clipping, norm after).
    """
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if norm <= max_norm or norm == 0.0:
        return norm, norm
    scale = max_norm / (norm + 1e-6)
    for p in params.values():
        if p.grad is not None:
            p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm, global_grad_norm(params)
