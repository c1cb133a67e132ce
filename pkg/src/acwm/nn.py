"""Module base class and parameterized layers on top of the autodiff kernels."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autodiff import ops
from .autodiff.ops import BatchNormStats
from .autodiff.tensor import Tensor


class Module:
    """Container that tracks parameters, batchnorm statistics and submodules
    in attribute-assignment order, so parameter iteration is deterministic."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_stats", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, BatchNormStats):
            self._stats[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, m in self._modules.items():
            out.update(m.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_stats(self, prefix: str = "") -> dict[str, BatchNormStats]:
        out = {prefix + k: v for k, v in self._stats.items()}
        for name, m in self._modules.items():
            out.update(m.named_stats(f"{prefix}{name}."))
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        sd = {k: p.data.copy() for k, p in self.named_parameters().items()}
        for k, s in self.named_stats().items():
            sd[k + ".running_mean"] = s.mean.copy()
            sd[k + ".running_var"] = s.var.copy()
        return sd

    def load_state_dict(self, sd: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        stats = self.named_stats()
        expected = set(params) | {k + s for k in stats for s in (".running_mean", ".running_var")}
        missing = expected - set(sd)
        extra = set(sd) - expected
        if missing or extra:
            raise KeyError(f"state dict mismatch; missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for k, p in params.items():
            if sd[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {sd[k].shape} vs {p.shape}")
            p.data = np.array(sd[k], dtype=np.float32)
        for k, s in stats.items():
            s.mean = np.array(sd[k + ".running_mean"], dtype=np.float32)
            s.var = np.array(sd[k + ".running_var"], dtype=np.float32)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def digest(self) -> str:
        """SHA-256 over parameters and running statistics, in iteration order."""
        h = hashlib.sha256()
        for k, v in self.state_dict().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f4").tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv1d(Module):
    def __init__(self, cin, cout, kernel_size, rng, stride=1, padding=None, bias=False):
        super().__init__()
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        self.weight = _param(he_normal(rng, (cout, cin, kernel_size), cin * kernel_size))
        self.bias = _param(np.zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels, zero_init=False, momentum=0.1):
        super().__init__()
        self.gamma = _param(np.zeros(channels) if zero_init else np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.stats = BatchNormStats.create(channels, momentum=momentum)

    def forward(self, x):
        return ops.batchnorm1d(x, self.gamma, self.beta, self.stats, train=self.training)


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, bias=True, init="he"):
        super().__init__()
        if init == "zeros":
            w = np.zeros((fan_out, fan_in))
        elif init == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, (fan_out, fan_in))
        else:
            w = he_normal(rng, (fan_out, fan_in), fan_in)
        self.weight = _param(w)
        self.bias = _param(np.zeros(fan_out)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)
