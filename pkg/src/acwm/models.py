"""The four networks: encoder, action projector, latent dynamics predictor and
classifier head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor
from .nn import BatchNorm1d, Conv1d, Linear, Module

STEM_KERNEL = 5
BLOCK_KERNEL = 5
BOTTLENECK_EXPANSION = 4


@dataclass
class ModelConfig:
    in_channels: int = 12
    stem_width: int = 32
    stage_blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    stage_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    latent_dim: int = 64
    predictor_hidden: int = 512
    projector_layers: int = 3
    num_classes: int = 4

    def __post_init__(self):
        self.stage_blocks = list(self.stage_blocks)
        self.stage_widths = list(self.stage_widths)
        extents = [self.in_channels, self.stem_width, self.latent_dim, self.predictor_hidden,
                   self.projector_layers, self.num_classes, *self.stage_blocks, *self.stage_widths]
        if any(int(v) < 1 for v in extents):
            raise ValueError("all model extents must be positive")
        if len(self.stage_blocks) != len(self.stage_widths) or not self.stage_blocks:
            raise ValueError("stage_blocks and stage_widths must be non-empty and equal length")

    @classmethod
    def full_scale(cls, in_channels: int = 12, num_classes: int = 76) -> "ModelConfig":
        """The 50-layer-class xResNet1d layout with a 256-dim latent."""
        return cls(in_channels=in_channels, stem_width=32, stage_blocks=[3, 4, 6, 3],
                   stage_widths=[256, 512, 1024, 2048], latent_dim=256,
                   predictor_hidden=512, projector_layers=3, num_classes=num_classes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def min_samples(self) -> int:
        """Shortest input length that survives every strided layer."""
        n_strides = 2 + (len(self.stage_widths) - 1)
        return max(STEM_KERNEL, 2 ** n_strides)


class ConvBN(Module):
    def __init__(self, cin, cout, k, rng, stride=1, act=True, zero_init=False):
        super().__init__()
        self.conv = Conv1d(cin, cout, k, rng, stride=stride)
        self.bn = BatchNorm1d(cout, zero_init=zero_init)
        self.act = act

    def forward(self, x):
        y = self.bn(self.conv(x))
        return ops.relu(y) if self.act else y


class Bottleneck(Module):
    """1x1 reduce -> k-wide (strided) -> 1x1 expand, last BN zero-initialised so
    every block starts as its shortcut."""

    def __init__(self, cin, cout, stride, rng):
        super().__init__()
        mid = max(cout // BOTTLENECK_EXPANSION, 1)
        self.reduce = ConvBN(cin, mid, 1, rng)
        self.spatial = ConvBN(mid, mid, BLOCK_KERNEL, rng, stride=stride)
        self.expand = ConvBN(mid, cout, 1, rng, act=False, zero_init=True)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = ConvBN(cin, cout, 1, rng, stride=stride, act=False)

    def forward(self, x):
        y = self.expand(self.spatial(self.reduce(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.relu(ops.residual_add(y, skip))


class Encoder(Module):
    """xResNet1d-style encoder: three-conv stem, bottleneck stages, global mean
    pool, linear map to the latent dimension."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        w = cfg.stem_width
        self.stem0 = ConvBN(cfg.in_channels, w, STEM_KERNEL, rng, stride=2)
        self.stem1 = ConvBN(w, w, STEM_KERNEL, rng)
        self.stem2 = ConvBN(w, w, STEM_KERNEL, rng, stride=2)
        self.blocks = []
        cin = w
        for si, (nb, width) in enumerate(zip(cfg.stage_blocks, cfg.stage_widths)):
            for bi in range(nb):
                stride = 2 if (si > 0 and bi == 0) else 1
                block = Bottleneck(cin, width, stride, rng)
                setattr(self, f"stage{si}_block{bi}", block)
                self.blocks.append(block)
                cin = width
        self.head = Linear(cin, cfg.latent_dim, rng, init="uniform")

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"encoder expects [B, {self.cfg.in_channels}, L], got {x.shape}")
        if x.shape[2] < self.cfg.min_samples():
            raise ShapeError(f"input length {x.shape[2]} too short; need >= {self.cfg.min_samples()}")
        y = self.stem2(self.stem1(self.stem0(x)))
        for b in self.blocks:
            y = b(y)
        return self.head(ops.global_meanpool(y))


class ActionProjector(Module):
    """MLP on the raw ternary action vector: C -> D -> ... -> D."""

    def __init__(self, num_classes: int, dim: int, rng, n_layers: int = 3):
        super().__init__()
        self.num_classes = num_classes
        self.layers = []
        fan_in = num_classes
        for i in range(n_layers):
            layer = Linear(fan_in, dim, rng, init="he" if i < n_layers - 1 else "uniform")
            setattr(self, f"fc{i}", layer)
            self.layers.append(layer)
            fan_in = dim

    def forward(self, a) -> Tensor:
        ad = a.data if isinstance(a, Tensor) else np.asarray(a)
        if ad.ndim != 2 or ad.shape[1] != self.num_classes:
            raise ShapeError(f"action batch must be [B, {self.num_classes}], got {ad.shape}")
        if not np.all(np.isin(ad, (-1, 0, 1))):
            raise ValueError("action entries must be in {-1, 0, 1}")
        y = a if isinstance(a, Tensor) else Tensor(ad.astype(np.float32))
        for i, layer in enumerate(self.layers):
            y = layer(y)
            if i < len(self.layers) - 1:
                y = ops.relu(y)
        return y


class DynamicsPredictor(Module):
    """h_next = h + MLP([h, e]); the output layer starts at zero so the initial
    dynamics are the identity."""

    def __init__(self, dim: int, hidden: int, rng):
        super().__init__()
        self.dim = dim
        self.fc_in = Linear(2 * dim, hidden, rng)
        self.fc_out = Linear(hidden, dim, rng, init="zeros")

    def forward(self, h: Tensor, e: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape != e.shape or h.shape[1] != self.dim:
            raise ShapeError(f"predictor expects matching [B, {self.dim}] inputs, got {h.shape} and {e.shape}")
        delta = self.fc_out(ops.relu(self.fc_in(ops.concat([h, e], axis=1))))
        return ops.residual_add(h, delta)


class Classifier(Module):
    """Affine head producing logits; sigmoid is left to losses and metrics."""

    def __init__(self, dim: int, num_classes: int, rng):
        super().__init__()
        self.dim = dim
        self.fc = Linear(dim, num_classes, rng, init="uniform")

    def forward(self, h: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape[1] != self.dim:
            raise ShapeError(f"classifier expects [B, {self.dim}], got {h.shape}")
        return self.fc(h)


class WorldModel(Module):
    """Encoder, projector and predictor trained jointly during pretraining."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng)
        self.projector = ActionProjector(cfg.num_classes, cfg.latent_dim, rng, cfg.projector_layers)
        self.predictor = DynamicsPredictor(cfg.latent_dim, cfg.predictor_hidden, rng)

    def predict_next(self, h: Tensor, a) -> Tensor:
        return self.predictor(h, self.projector(a))


def encoder_forward(X, encoder: Encoder, mode: str = "eval") -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    encoder.train(mode == "train")
    return encoder(X)


def action_project(a, projector: ActionProjector) -> Tensor:
    return projector(a)


def dynamics_predict(h: Tensor, e: Tensor, predictor: DynamicsPredictor) -> Tensor:
    return predictor(h, e)


def classify(h: Tensor, classifier: Classifier) -> Tensor:
    return classifier(h)
