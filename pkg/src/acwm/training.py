"""World-model pretraining, the supervised baseline, linear probing and finetuning.

Every procedure returns a :class:`~acwm.autodiff.checkpoint.Checkpoint` whose
arrays are prefixed by module (``encoder.``, ``projector.``, ``predictor.``,
``classifier.``) and whose config echoes the model and training settings, plus
a :class:`RunLog`.
"""

from __future__ import annotations

import csv
import json
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.checkpoint import Checkpoint
from .autodiff.optim import OneCycleConfig, OptimizerState, adamw_step, clip_grad_norm, global_grad_norm, onecycle_lr_at
from .autodiff.tensor import NonFiniteError, Tensor, backprop
from .cohort.pairs import actions, pair_indices
from .cohort.split import subsample_patients
from .cohort.store import Cohort
from .models import Classifier, Encoder, ModelConfig, WorldModel
from .nn import Module
from .objectives import (AsymmetricLossCfg, WorldModelLossCfg, asymmetric_loss, prediction_mse,
                         term_grad_ratio, world_model_loss)
from .regularizers import SigregConfig, VicregWeights, slices_for_step, vicreg

OBJECTIVES = ("world_model", "naive_ssl", "supervised")
REGULARIZERS = ("sigreg", "vicreg")
DEFAULT_LR = {"world_model": 1e-3, "naive_ssl": 1e-3, "supervised": 1e-4}
STEP_COLUMNS = ["step", "epoch", "lr", "loss_total", "loss_pred", "loss_reg", "grad_ratio",
                "grad_norm", "grad_norm_clipped", "wall_time"]
EPOCH_COLUMNS = ["epoch", "train_loss", "val_loss", "val_auroc", "wall_time"]

# Offsets that decorrelate the RNG streams derived from one seed.
_SPLIT_STREAM = 101
_SUBSET_STREAM = 202
_HEAD_STREAM = 303
# batch statistics of the regularizers need at least two pairs per batch
_MIN_PAIRS = 2


class TrainError(RuntimeError):
    """Training cannot start (bad inputs) or had to abort (divergence)."""


class DivergenceError(TrainError):
    pass


@dataclass
class TrainConfig:
    objective: str = "world_model"
    epochs: int = 10
    batch_size: int = 128
    max_lr: float | None = None
    lam: float = 0.05
    num_slices: int = 64
    resample_slices: bool = True
    regularizer: str = "sigreg"
    grad_clip: float | None = None
    weight_decay: float = 1e-2
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data_fraction: float = 1.0
    val_fraction: float = 0.1
    asl: AsymmetricLossCfg = field(default_factory=AsymmetricLossCfg)
    onecycle: OneCycleConfig = field(default_factory=OneCycleConfig)
    grad_ratio_epochs: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.num_slices < 1:
            raise ValueError("epochs must be >= 0, batch_size and num_slices >= 1")
        if self.max_lr is not None and self.max_lr < 0:
            raise ValueError("max_lr must be non-negative")
        if self.grad_clip is not None and self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative (0 disables clipping)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError(f"data_fraction must lie in (0, 1], got {self.data_fraction}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.objective] if self.max_lr is None else self.max_lr

    @property
    def clip(self) -> float:
        """Global-norm clip threshold; 0 means off. Supervised runs clip at 1 by default."""
        if self.grad_clip is not None:
            return self.grad_clip
        return 1.0 if self.objective == "supervised" else 0.0

    def loss_cfg(self) -> WorldModelLossCfg:
        return WorldModelLossCfg(self.lam, SigregConfig(self.num_slices, self.resample_slices))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "asl" in d:
            d["asl"] = AsymmetricLossCfg(**d["asl"])
        if "onecycle" in d:
            d["onecycle"] = OneCycleConfig(**d["onecycle"])
        return cls(**d)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def log_step(self, **row) -> None:
        if self.steps and row["step"] <= self.steps[-1]["step"]:
            raise ValueError("step counter must increase")
        self.steps.append({k: row.get(k, "") for k in STEP_COLUMNS})

    def log_epoch(self, **row) -> None:
        self.epochs.append({k: row.get(k, "") for k in EPOCH_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.steps], dtype=np.float64)

    def write(self, directory, stem: str = "runlog") -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        for suffix, rows, cols in (("", self.steps, STEP_COLUMNS), ("_epochs", self.epochs, EPOCH_COLUMNS)):
            p = d / f"{stem}{suffix}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                for r in rows:
                    w.writerow({k: _fmt(v) for k, v in r.items()})
            out.append(p)
        return out[0], out[1]

    @classmethod
    def read(cls, directory, stem: str = "runlog") -> "RunLog":
        d = Path(directory)
        log = cls()
        for suffix, target in (("", log.steps), ("_epochs", log.epochs)):
            with open(d / f"{stem}{suffix}.csv", newline="") as fh:
                for r in csv.DictReader(fh):
                    target.append({k: (float(v) if v != "" else "") for k, v in r.items()})
        return log


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# checkpoint helpers


def make_checkpoint(modules: dict[str, Module], cfg: TrainConfig, extra: dict | None = None) -> Checkpoint:
    arrays = {}
    for prefix, m in modules.items():
        for k, v in m.state_dict().items():
            arrays[f"{prefix}.{k}"] = v
    config = {"model": cfg.model.to_dict(), "train": cfg.to_dict(), "modules": list(modules)}
    if extra:
        config.update(extra)
    return Checkpoint(arrays, config, {})


def _model_cfg(ckpt: Checkpoint) -> ModelConfig:
    try:
        return ModelConfig.from_dict(ckpt.config["model"])
    except KeyError as exc:
        raise TrainError("checkpoint config lacks a model section") from exc


def load_encoder(ckpt: Checkpoint) -> Encoder:
    cfg = _model_cfg(ckpt)
    enc = Encoder(cfg, np.random.default_rng(0))
    sd = ckpt.subset("encoder")
    if not sd:
        raise TrainError("checkpoint holds no encoder")
    enc.load_state_dict(sd)
    return enc


def load_world_model(ckpt: Checkpoint) -> WorldModel:
    wm = WorldModel(_model_cfg(ckpt), seed=0)
    for name in ("encoder", "projector", "predictor"):
        sd = ckpt.subset(name)
        if not sd:
            raise TrainError(f"checkpoint holds no {name}")
        getattr(wm, name).load_state_dict(sd)
    return wm


def load_classifier(ckpt: Checkpoint) -> Classifier:
    cfg = _model_cfg(ckpt)
    clf = Classifier(cfg.latent_dim, cfg.num_classes, np.random.default_rng(0))
    sd = ckpt.subset("classifier")
    if not sd:
        raise TrainError("checkpoint holds no classifier")
    clf.load_state_dict(sd)
    return clf


def random_init_checkpoint(cfg: TrainConfig) -> Checkpoint:
    """Untrained world model, for random-encoder baselines."""
    wm = WorldModel(cfg.model, seed=cfg.seed)
    return make_checkpoint({"encoder": wm.encoder, "projector": wm.projector,
                            "predictor": wm.predictor}, cfg)


# ---------------------------------------------------------------------------
# data plumbing


def restrict(cohort: Cohort, cfg: TrainConfig) -> Cohort:
    """Apply the configured patient fraction."""
    if cfg.data_fraction >= 1.0:
        return cohort
    keep = subsample_patients(cohort.patients(), cfg.data_fraction, cfg.seed + _SUBSET_STREAM)
    if len(keep) < 2:
        raise TrainError(f"data fraction {cfg.data_fraction} leaves {len(keep)} patient(s); need >= 2")
    return cohort.select_patients(keep)


def train_val_split(cohort: Cohort, cfg: TrainConfig) -> tuple[Cohort, Cohort | None]:
    """Hold out round(val_fraction * patients) training patients for diagnostics."""
    pts = np.array(sorted(cohort.patients()))
    n_val = int(round(cfg.val_fraction * len(pts)))
    if n_val == 0 or n_val >= len(pts):
        return cohort, None
    perm = np.random.default_rng(cfg.seed + _SPLIT_STREAM).permutation(len(pts))
    val = set(pts[perm[:n_val]].tolist())
    train = [p for p in pts if p not in val]
    return cohort.select_patients(train), cohort.select_patients(sorted(val))


def batch_slices(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1) -> list[np.ndarray]:
    """Seeded permutation cut into batches; a trailing batch smaller than
    ``min_size`` is merged into the previous one."""
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < min_size:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _n_batches(n: int, batch_size: int, min_size: int) -> int:
    nb = math.ceil(n / batch_size)
    if nb > 1 and n - (nb - 1) * batch_size < min_size:
        nb -= 1
    return nb


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite {what} ({value}) at step {step}; aborting before the update")


@contextmanager
def _divergence_guard(step: int):
    """Report non-finite activations or gradients inside a step as divergence."""
    try:
        yield
    except NonFiniteError as exc:
        raise DivergenceError(f"non-finite values at step {step}: {exc}") from exc


def encode(encoder: Encoder, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode latents for a stack of recordings, as a float32 array."""
    encoder.eval()
    out = []
    for i in range(0, len(X), batch_size):
        out.append(encoder(X[i:i + batch_size]).data)
    if not out:
        return np.zeros((0, encoder.cfg.latent_dim), np.float32)
    return np.concatenate(out).astype(np.float32)


# ---------------------------------------------------------------------------
# world-model pretraining


def _pair_loss(model: WorldModel, H: Tensor, n: int, a: np.ndarray, cfg: TrainConfig, step: int):
    h_t = ops.rows(H, 0, n)
    h_n = ops.rows(H, n, 2 * n)
    if cfg.objective == "naive_ssl":
        a = np.zeros_like(a)
    if cfg.regularizer == "vicreg":
        h_pred = model.predict_next(h_t, a)
        pred = prediction_mse(h_pred, h_n)
        total, _ = vicreg(h_pred, h_n, VicregWeights())
        reg = ops.sub(total, ops.mul(pred, VicregWeights().inv))
        return total, pred, reg
    loss_cfg = cfg.loss_cfg()
    sl = slices_for_step(H.shape[1], loss_cfg.sigreg, cfg.seed, step)
    br = world_model_loss(h_t, h_n, a, model, loss_cfg, sl)
    return br.total, br.pred, br.reg


def _val_pretrain_loss(model: WorldModel, cohort: Cohort, cfg: TrainConfig, batch_size: int) -> float:
    i_t, i_n = pair_indices(cohort)
    if len(i_t) < _MIN_PAIRS:
        return float("nan")
    a_all = actions(cohort, i_t, i_n).astype(np.float32)
    model.eval()
    losses, weights = [], []
    chunks = [np.arange(s, min(s + batch_size, len(i_t))) for s in range(0, len(i_t), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < _MIN_PAIRS:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    for idx in chunks:
        n = len(idx)
        H = model.encoder(np.concatenate([cohort.waveforms[i_t[idx]], cohort.waveforms[i_n[idx]]]))
        total, _, _ = _pair_loss(model, H, n, a_all[idx], cfg, 0)
        losses.append(float(total.data))
        weights.append(n)
    model.train()
    return float(np.average(losses, weights=weights))


def pretrain_world_model(cohort: Cohort, cfg: TrainConfig, progress=None) -> tuple[Checkpoint, RunLog]:
    """Train encoder, projector and predictor on consecutive-record pairs.

    Both endpoints of a batch are encoded in one forward pass, so batch-norm
    statistics cover the 2B recordings jointly.
    """
    if cfg.objective not in ("world_model", "naive_ssl"):
        raise TrainError(f"pretraining needs objective world_model or naive_ssl, got {cfg.objective!r}")
    data = restrict(cohort, cfg)
    train, val = train_val_split(data, cfg)
    i_t, i_n = pair_indices(train)
    if len(i_t) == 0:
        raise TrainError("cohort yields no transition pairs (every patient has a single record)")
    if len(i_t) < _MIN_PAIRS:
        raise TrainError(f"pretraining needs at least {_MIN_PAIRS} transition pairs, got {len(i_t)}")
    a_all = actions(train, i_t, i_n).astype(np.float32)
    W = train.waveforms

    model = WorldModel(cfg.model, seed=cfg.seed)
    params = model.named_parameters()
    enc_params = model.encoder.named_parameters()
    opt = OptimizerState(weight_decay=cfg.weight_decay)
    log = RunLog()
    nb = _n_batches(len(i_t), cfg.batch_size, _MIN_PAIRS)
    total_steps = cfg.epochs * nb
    step = 0
    t0 = time.perf_counter()
    model.train()
    for epoch in range(cfg.epochs):
        ep_losses = []
        for idx in batch_slices(len(i_t), cfg.batch_size, _epoch_rng(cfg.seed, epoch), _MIN_PAIRS):
            n = len(idx)
            X = np.concatenate([W[i_t[idx]], W[i_n[idx]]])
            with _divergence_guard(step):
                H = model.encoder(X)
                total, pred, reg = _pair_loss(model, H, n, a_all[idx], cfg, step)
                lt = float(total.data)
                _check_finite(lt, "loss", step)
                ratio = ""
                if epoch < cfg.grad_ratio_epochs and 0.0 < cfg.lam < 1.0:
                    ratio = term_grad_ratio(pred, reg, enc_params)
                model.zero_grad()
                backprop(total)
            norm = global_grad_norm(params)
            _check_finite(norm, "gradient norm", step)
            clipped = clip_grad_norm(params, cfg.clip)[1] if cfg.clip > 0 else norm
            lr = onecycle_lr_at(step, total_steps, cfg.lr, cfg.onecycle)
            adamw_step(opt, params, lr=lr)
            model.zero_grad()
            log.log_step(step=step, epoch=epoch, lr=lr, loss_total=lt, loss_pred=float(pred.data),
                         loss_reg=float(reg.data), grad_ratio=ratio, grad_norm=norm,
                         grad_norm_clipped=clipped, wall_time=time.perf_counter() - t0)
            ep_losses.append(lt)
            step += 1
        val_loss = _val_pretrain_loss(model, val, cfg, cfg.batch_size) if val is not None else ""
        log.log_epoch(epoch=epoch, train_loss=float(np.mean(ep_losses)), val_loss=val_loss,
                      wall_time=time.perf_counter() - t0)
        if progress:
            progress(f"[{cfg.objective}] epoch {epoch + 1}/{cfg.epochs} loss {np.mean(ep_losses):.4f}"
                     + (f" val {val_loss:.4f}" if val_loss != "" else ""))
    model.eval()
    ckpt = make_checkpoint({"encoder": model.encoder, "projector": model.projector,
                            "predictor": model.predictor}, cfg)
    return ckpt, log


# ---------------------------------------------------------------------------
# supervised heads


def _asl_eval(logits: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[float, float]:
    from .evaluation import macro_auroc, AurocError

    loss = float(asymmetric_loss(Tensor(logits), y, cfg.asl).data)
    try:
        auroc = macro_auroc(logits, y)[0]
    except AurocError:
        auroc = float("nan")
    return loss, auroc


def _fit_classifier(X: np.ndarray, y: np.ndarray, encoder: Encoder | None, classifier: Classifier,
                    cfg: TrainConfig, val: tuple[np.ndarray, np.ndarray] | None, tag: str,
                    progress=None) -> RunLog:
    """Shared ASL loop. With ``encoder`` None, ``X`` holds precomputed features
    and only the classifier trains."""
    modules = {"classifier": classifier} if encoder is None else {"encoder": encoder, "classifier": classifier}
    params = {f"{m}.{k}": p for m, mod in modules.items() for k, p in mod.named_parameters().items()}
    opt = OptimizerState(weight_decay=cfg.weight_decay)
    log = RunLog()
    min_size = 1 if encoder is None else 2
    if encoder is not None and len(X) < 2:
        raise TrainError("end-to-end training needs at least 2 records for batch statistics")
    if len(X) == 0:
        raise TrainError("no labeled records")
    nb = _n_batches(len(X), cfg.batch_size, min_size)
    total_steps = cfg.epochs * nb
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        if encoder is not None:
            encoder.train()
        ep = []
        for idx in batch_slices(len(X), cfg.batch_size, _epoch_rng(cfg.seed, epoch), min_size):
            with _divergence_guard(step):
                h = Tensor(X[idx]) if encoder is None else encoder(X[idx])
                loss = asymmetric_loss(classifier(h), y[idx], cfg.asl)
                lv = float(loss.data)
                _check_finite(lv, "loss", step)
                for mod in modules.values():
                    mod.zero_grad()
                backprop(loss)
            norm = global_grad_norm(params)
            _check_finite(norm, "gradient norm", step)
            clipped = clip_grad_norm(params, cfg.clip)[1] if cfg.clip > 0 else norm
            lr = onecycle_lr_at(step, total_steps, cfg.lr, cfg.onecycle)
            adamw_step(opt, params, lr=lr)
            log.log_step(step=step, epoch=epoch, lr=lr, loss_total=lv, loss_pred=lv, loss_reg=0.0,
                         grad_norm=norm, grad_norm_clipped=clipped, wall_time=time.perf_counter() - t0)
            ep.append(lv)
            step += 1
        for mod in modules.values():
            mod.zero_grad()
        row = {"epoch": epoch, "train_loss": float(np.mean(ep)), "wall_time": time.perf_counter() - t0}
        if val is not None:
            Xv, yv = val
            feats = Xv if encoder is None else encode(encoder, Xv, cfg.batch_size)
            row["val_loss"], row["val_auroc"] = _asl_eval(classifier(Tensor(feats)).data, yv, cfg)
        log.log_epoch(**row)
        if progress:
            progress(f"[{tag}] epoch {epoch + 1}/{cfg.epochs} loss {row['train_loss']:.4f}")
    if encoder is not None:
        encoder.eval()
    return log


def _new_classifier(cfg: TrainConfig) -> Classifier:
    rng = np.random.default_rng(cfg.seed + _HEAD_STREAM)
    return Classifier(cfg.model.latent_dim, cfg.model.num_classes, rng)


def _check_cohort(cohort: Cohort, cfg: TrainConfig) -> None:
    if cohort.n_classes != cfg.model.num_classes:
        raise TrainError(f"cohort has {cohort.n_classes} classes, model expects {cfg.model.num_classes}")
    if cohort.channels != cfg.model.in_channels:
        raise TrainError(f"cohort has {cohort.channels} channels, model expects {cfg.model.in_channels}")


def train_supervised(cohort: Cohort, cfg: TrainConfig, progress=None) -> tuple[Checkpoint, RunLog]:
    """End-to-end encoder + classifier from scratch under the asymmetric loss."""
    _check_cohort(cohort, cfg)
    data = restrict(cohort, cfg)
    train, val = train_val_split(data, cfg)
    encoder = Encoder(cfg.model, np.random.default_rng(cfg.seed))
    clf = _new_classifier(cfg)
    v = (val.waveforms, val.labels) if val is not None else None
    log = _fit_classifier(train.waveforms, train.labels, encoder, clf, cfg, v, "supervised", progress)
    return make_checkpoint({"encoder": encoder, "classifier": clf}, cfg), log


def _encoder_for(ckpt: Checkpoint, cfg: TrainConfig) -> Encoder:
    enc = load_encoder(ckpt)
    if enc.cfg.latent_dim != cfg.model.latent_dim or enc.cfg.in_channels != cfg.model.in_channels:
        raise TrainError(f"encoder checkpoint (D={enc.cfg.latent_dim}, channels={enc.cfg.in_channels}) does "
                         f"not match config (D={cfg.model.latent_dim}, channels={cfg.model.in_channels})")
    return enc


def linear_probe(cohort: Cohort, encoder_ckpt: Checkpoint, cfg: TrainConfig, progress=None,
                 features: np.ndarray | None = None) -> tuple[Checkpoint, RunLog]:
    """Affine head on frozen eval-mode features, computed once per record.

    ``features`` may supply those latents for ``cohort`` in record order.
    """
    _check_cohort(cohort, cfg)
    encoder = _encoder_for(encoder_ckpt, cfg)
    encoder.eval()
    before = encoder.digest()
    data = restrict(cohort, cfg)
    if features is None:
        feats_all = encode(encoder, data.waveforms, max(cfg.batch_size, 256))
    else:
        if len(features) != cohort.n_records:
            raise TrainError("precomputed features do not match the cohort")
        pos = {r: i for i, r in enumerate(cohort.record_ids)}
        feats_all = features[[pos[r] for r in data.record_ids]]
    train, val = train_val_split(data, cfg)
    pos = {r: i for i, r in enumerate(data.record_ids)}
    ftr = feats_all[[pos[r] for r in train.record_ids]]
    v = (feats_all[[pos[r] for r in val.record_ids]], val.labels) if val is not None else None
    clf = _new_classifier(cfg)
    log = _fit_classifier(ftr, train.labels, None, clf, cfg, v, "probe", progress)
    if encoder.digest() != before:
        raise TrainError("encoder parameters changed during probing")
    ckpt = make_checkpoint({"encoder": encoder, "classifier": clf}, cfg, {"encoder_digest": before})
    return ckpt, log


def finetune(cohort: Cohort, encoder_ckpt: Checkpoint, cfg: TrainConfig, progress=None) -> tuple[Checkpoint, RunLog]:
    """Unfreeze the pretrained encoder and train it with a fresh head under ASL."""
    _check_cohort(cohort, cfg)
    encoder = _encoder_for(encoder_ckpt, cfg)
    data = restrict(cohort, cfg)
    train, val = train_val_split(data, cfg)
    clf = _new_classifier(cfg)
    v = (val.waveforms, val.labels) if val is not None else None
    log = _fit_classifier(train.waveforms, train.labels, encoder, clf, cfg, v, "finetune", progress)
    return make_checkpoint({"encoder": encoder, "classifier": clf}, cfg), log

