"""Anti-collapse penalties on a batch of latents.

SIGReg projects the batch onto random unit directions and, per direction,
measures the Gaussian-weighted squared distance between the empirical
characteristic function and that of N(0, 1) (the Epps-Pulley statistic).
For samples x_1..x_n it has the closed form

    T = 1/n^2 sum_jk exp(-(x_j - x_k)^2 / 2) - sqrt(2)/n sum_j exp(-x_j^2 / 4) + 1/sqrt(3)

VICReg is kept as the ablation baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.optim import OptimizerState, adamw_step
from .autodiff.tensor import NonFiniteError, ShapeError, Tensor, as_tensor, backprop, make_node

SQRT2 = math.sqrt(2.0)
INV_SQRT3 = 1.0 / math.sqrt(3.0)
# pairwise block budget (elements) before the statistic is evaluated slice by slice
_PAIRWISE_BUDGET = 1 << 23


@dataclass(frozen=True)
class SigregConfig:
    num_slices: int = 64
    resample_each_step: bool = True

    def __post_init__(self):
        if self.num_slices < 1:
            raise ValueError("num_slices must be >= 1")


@dataclass(frozen=True)
class SliceSet:
    """K unit directions in R^D, fixed by (seed, step)."""

    directions: np.ndarray  # [D, K], unit columns
    seed: int
    step: int

    @classmethod
    def draw(cls, dim: int, num_slices: int, seed: int, step: int = 0) -> "SliceSet":
        rng = np.random.default_rng([seed, step])
        u = rng.standard_normal((dim, num_slices))
        u /= np.linalg.norm(u, axis=0, keepdims=True)
        return cls(u.astype(np.float32), seed, step)

    @property
    def dim(self) -> int:
        return self.directions.shape[0]

    @property
    def num_slices(self) -> int:
        return self.directions.shape[1]


def slices_for_step(dim: int, cfg: SigregConfig, seed: int, step: int) -> SliceSet:
    return SliceSet.draw(dim, cfg.num_slices, seed, step if cfg.resample_each_step else 0)


def _ep_columns(P: np.ndarray):
    """Statistic per column of P [n, K] plus the per-sample kernel sums needed
    for the gradient: row sums of E and E @ p, E_jl = exp(-(p_j - p_l)^2 / 2)."""
    n, K = P.shape
    rowsum = np.empty((n, K))
    Ep = np.empty((n, K))
    pair = np.empty(K)
    step = max(1, _PAIRWISE_BUDGET // max(n * n, 1))
    for k0 in range(0, K, step):
        p = P[:, k0:k0 + step]
        d = p[:, None, :] - p[None, :, :]
        E = np.exp(-0.5 * d * d)
        rowsum[:, k0:k0 + step] = E.sum(axis=1)
        Ep[:, k0:k0 + step] = np.einsum("jlk,lk->jk", E, p)
        pair[k0:k0 + step] = rowsum[:, k0:k0 + step].sum(axis=0)
    single = np.exp(-0.25 * P * P)
    T = pair / (n * n) - SQRT2 / n * single.sum(axis=0) + INV_SQRT3
    return T, rowsum, Ep, single


def _epps_pulley_columns(P: Tensor) -> Tensor:
    """Epps-Pulley statistic of each column of P [n, K]; returns [K]."""
    if P.ndim != 2:
        raise ShapeError(f"expected [n, K] projections, got {P.shape}")
    n = P.shape[0]
    if n < 1:
        raise ValueError("Epps-Pulley statistic needs at least one sample")
    if not np.all(np.isfinite(P.data)):
        raise NonFiniteError("non-finite projected values")
    p64 = P.data.astype(np.float64)
    T, rowsum, Ep, single = _ep_columns(p64)
    # clamp the rounding-level negatives; T >= 0 analytically
    T = np.maximum(T, 0.0)

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        dp = (-2.0 / (n * n)) * (p64 * rowsum - Ep) + (SQRT2 / (2.0 * n)) * p64 * single
        return ((dp * g[None, :]).astype(P.data.dtype),)

    return make_node(T.astype(P.data.dtype), (P,), vjp)


def epps_pulley_statistic(x) -> Tensor:
    """Closed-form Epps-Pulley statistic of a 1-d sample, differentiable in x."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-d sample, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("Epps-Pulley statistic needs at least one sample")
    col = make_node(x.data[:, None], (x,), lambda g: (g[:, 0],))
    stat = _epps_pulley_columns(col)
    return make_node(stat.data[0], (stat,), lambda g: (np.reshape(g, (1,)),))


def epps_pulley_reference(x: np.ndarray) -> float:
    """Plain float64 closed form, no graph; used for reporting."""
    T, *_ = _ep_columns(np.asarray(x, dtype=np.float64).reshape(-1, 1))
    return float(T[0])


def sigreg(H, slices: SliceSet | np.ndarray) -> Tensor:
    """Mean Epps-Pulley statistic of H [n, D] projected on each slice direction."""
    H = as_tensor(H)
    U = slices.directions if isinstance(slices, SliceSet) else np.asarray(slices)
    if H.ndim != 2:
        raise ShapeError(f"sigreg expects [n, D], got {H.shape}")
    if U.shape[0] != H.shape[1]:
        raise ShapeError(f"slice dimension {U.shape[0]} != latent dimension {H.shape[1]}")
    P = ops.matmul(H, Tensor(U.astype(H.data.dtype)))
    return ops.mean(_epps_pulley_columns(P))


@dataclass(frozen=True)
class VicregWeights:
    inv: float = 25.0
    var: float = 25.0
    cov: float = 1.0
    gamma: float = 1.0
    eps: float = 1e-4


def vicreg(Ha, Hb, weights: VicregWeights = VicregWeights()) -> tuple[Tensor, dict[str, float]]:
    """VICReg loss on two views; returns (loss, unweighted term values).

    Invariance is the MSE between views; the variance term is the mean hinge
    ``relu(gamma - std_d)`` averaged over both views; the covariance term is the
    squared off-diagonal covariance divided by D, summed over both views.
    """
    Ha, Hb = as_tensor(Ha), as_tensor(Hb)
    if Ha.shape != Hb.shape or Ha.ndim != 2:
        raise ShapeError(f"vicreg expects matching [n, D] views, got {Ha.shape} and {Hb.shape}")
    n, D = Ha.shape
    if n < 2:
        raise ValueError("vicreg needs at least two samples per view")
    dt = Ha.data.dtype
    a = Ha.data.astype(np.float64)
    b = Hb.data.astype(np.float64)
    diff = a - b
    inv = float(np.mean(diff * diff))
    offdiag = ~np.eye(D, dtype=bool)

    def view_terms(x):
        xc = x - x.mean(axis=0)
        std = np.sqrt((xc * xc).sum(axis=0) / (n - 1) + weights.eps)
        hinge = np.maximum(weights.gamma - std, 0.0)
        cov = xc.T @ xc / (n - 1)
        cov_off = np.where(offdiag, cov, 0.0)
        return xc, std, hinge, cov_off

    xa, sa, ha, ca = view_terms(a)
    xb, sb, hb, cb = view_terms(b)
    var = float(ha.mean() + hb.mean()) / 2.0
    cov = float((ca ** 2).sum() + (cb ** 2).sum()) / D
    total = weights.inv * inv + weights.var * var + weights.cov * cov
    terms = {"invariance": inv, "variance": var, "covariance": cov}

    def view_grad(xc, std, hinge, cov_off):
        active = (hinge > 0).astype(np.float64)
        g_var = -(weights.var / (2.0 * D)) * active * xc / ((n - 1) * std)
        g_cov = (weights.cov * 4.0 / (D * (n - 1))) * (xc @ cov_off)
        g = g_var + g_cov
        return g - g.mean(axis=0)

    def vjp(g):
        g = float(g)
        g_inv = weights.inv * 2.0 * diff / (n * D)
        ga = g * (g_inv + view_grad(xa, sa, ha, ca))
        gb = g * (-g_inv + view_grad(xb, sb, hb, cb))
        return ga.astype(dt), gb.astype(dt)

    out = make_node(np.asarray(total, dtype=dt), (Ha, Hb), vjp)
    return out, terms


def decollapse(H0: np.ndarray, steps: int = 200, num_slices: int = 64, lr: float = 0.05,
               seed: int = 0) -> tuple[np.ndarray, list[float]]:
    """Optimize a batch of latents directly under SIGReg alone with Adam;
    returns the final batch and the per-step loss trace."""
    H = Tensor(np.asarray(H0, dtype=np.float32).copy(), requires_grad=True)
    st = OptimizerState(lr=lr)
    trace = []
    for s in range(steps):
        H.grad = None
        loss = sigreg(H, SliceSet.draw(H.shape[1], num_slices, seed, s))
        backprop(loss)
        adamw_step(st, {"H": H})
        trace.append(float(loss.data))
    return H.data, trace
