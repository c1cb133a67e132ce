"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import AutodiffError, Tensor, backprop


class NonDeterministicError(AutodiffError):
    pass


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_coords: int
    per_param: dict[str, float] = field(default_factory=dict)


def _params_dict(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {f"p{i}": p for i, p in enumerate(params)}


def grad_check(f: Callable[[], Tensor], params, eps: float = 1e-3, tol: float = 1e-3,
               max_coords: int = 24, atol: float = 1e-7, floor_frac: float = 1e-3,
               seed: int = 0,
               fd_dtype=np.float64) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f`` with central differences.

    Analytic gradients are taken at the parameters' own precision. The finite
    differences are evaluated with the parameters cast to ``fd_dtype`` so the
    reference is not dominated by float32 rounding. Per coordinate the error is
    ``|g_a - g_fd| / max(|g_a|, |g_fd|, floor)`` where ``floor`` is
    ``floor_frac`` times the largest analytic gradient entry (at least
    ``atol``), so coordinates whose true gradient is exactly zero are judged
    against the scale of the whole gradient. Parameters with more than
    ``max_coords`` entries are checked on a seeded random sample.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = _params_dict(params)
    for p in named.values():
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    backprop(out)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in named.items()}

    gscale = max((float(np.max(np.abs(a))) for a in analytic.values() if a.size), default=0.0)
    floor = max(atol, floor_frac * gscale)

    originals = {k: p.data for k, p in named.items()}
    for k, p in named.items():
        p.data = originals[k].astype(fd_dtype)
    rng = np.random.default_rng(seed)
    try:
        v1, v2 = float(f().data), float(f().data)
        if v1 != v2:
            raise NonDeterministicError(f"f is not deterministic: {v1!r} != {v2!r}")
        worst = 0.0
        per_param: dict[str, float] = {}
        n_coords = 0
        for k, p in named.items():
            flat = p.data.reshape(-1)
            size = flat.size
            idx = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
            ga = analytic[k].reshape(-1)
            perr = 0.0
            for i in idx:
                old = flat[i]
                flat[i] = old + eps
                fp = float(f().data)
                flat[i] = old - eps
                fm = float(f().data)
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                a = float(ga[i])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                perr = max(perr, err)
            per_param[k] = perr
            worst = max(worst, perr)
            n_coords += len(idx)
    finally:
        for k, p in named.items():
            p.data = originals[k]
            p.grad = None
    return GradCheckReport(max_rel_err=worst, passed=bool(worst <= tol), n_coords=n_coords,
                           per_param=per_param)
