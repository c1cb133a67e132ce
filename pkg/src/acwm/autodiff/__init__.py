"""Minimal reverse-mode autodiff on NumPy."""

from .checkpoint import Checkpoint, CheckpointError
from .gradcheck import GradCheckReport, NonDeterministicError, grad_check
from .ops import (BatchNormStats, batchnorm1d, concat, conv1d, global_meanpool,
                  kernel_forward, linear, matmul, mean, relu, residual_add, rows, sigmoid, square,
                  total)
from .optim import (OneCycleConfig, OptimizerState, adamw_step, clip_grad_norm,
                    global_grad_norm, onecycle_lr_at)
from .tensor import (AutodiffError, GraphConsumedError, NonFiniteError, ShapeError, Tensor,
                     backprop)

__all__ = [
    "AutodiffError", "BatchNormStats", "Checkpoint", "CheckpointError", "GradCheckReport",
    "GraphConsumedError", "NonDeterministicError", "NonFiniteError", "OneCycleConfig",
    "OptimizerState", "ShapeError", "Tensor", "adamw_step", "backprop", "batchnorm1d",
    "clip_grad_norm", "concat", "conv1d", "global_grad_norm", "global_meanpool", "grad_check",
    "kernel_forward", "linear", "matmul", "mean", "onecycle_lr_at", "relu", "residual_add", "rows",
    "sigmoid", "square", "total",
]
