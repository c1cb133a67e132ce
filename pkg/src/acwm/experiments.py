"""Desk-scale experiment recipes: representation comparison, low-data
regimes and the counterfactual check, on synthetic cohorts.

The preset trades full-scale settings for a CPU budget: short recordings, a
narrow encoder, and a large regularization weight, since small weights let the
prediction term shrink the latents on the synthetic generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff.checkpoint import Checkpoint
from .cohort.split import fold_cohorts, patient_split
from .cohort.store import Cohort
from .cohort.synth import SynthConfig, synth_generate
from .evaluation import EvalResult, counterfactual_apply, evaluate_protocol, predict_scores
from .models import ModelConfig
from .training import (TrainConfig, encode, finetune, linear_probe, load_classifier, load_encoder,
                       load_world_model, pretrain_world_model, random_init_checkpoint, train_supervised)


def desk_synth(n_patients: int = 2000, seed: int = 0) -> SynthConfig:
    return SynthConfig(n_patients=n_patients, samples=250, onset_prob=[0.15],
                       resolution_prob=[0.0, 0.5, 0.5, 0.5], seed=seed)


@dataclass
class DeskSetup:
    """Training recipes shared by the acceptance experiments and the CLI."""

    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain_epochs: int = 8
    lam: float = 0.95
    probe_epochs: int = 100
    probe_lr: float = 1e-2
    supervised_epochs: int = 10
    supervised_lr: float = 1e-3
    batch_size: int = 128
    test_fraction: float = 0.2

    def pretrain(self, objective: str = "world_model", seed: int = 0, fraction: float = 1.0) -> TrainConfig:
        """Pretraining recipe; on a patient fraction the epoch count scales by
        1/fraction so the optimizer step budget stays roughly constant."""
        epochs = max(self.pretrain_epochs, round(self.pretrain_epochs / fraction))
        return TrainConfig(objective=objective, epochs=epochs, batch_size=self.batch_size, lam=self.lam,
                           seed=seed, model=self.model, data_fraction=fraction, grad_ratio_epochs=0)

    def probe(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(objective="supervised", epochs=self.probe_epochs, batch_size=self.batch_size,
                           max_lr=self.probe_lr, grad_clip=0.0, seed=seed, model=self.model)

    def supervised(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(objective="supervised", epochs=self.supervised_epochs, batch_size=self.batch_size,
                           max_lr=self.supervised_lr, seed=seed, model=self.model)


def train_test(cohort: Cohort, seed: int, test_fraction: float = 0.2) -> tuple[Cohort, Cohort]:
    tr, te = fold_cohorts(cohort, patient_split(cohort, [1.0 - test_fraction, test_fraction], seed))
    return tr, te


def _evaluate(ckpt: Checkpoint, test: Cohort, method: str, seed: int, fraction: float = 1.0,
              n_bootstrap: int = 0) -> dict[str, EvalResult]:
    scores = predict_scores(ckpt, test.waveforms)
    return {p: evaluate_protocol(ckpt, test, p, n_bootstrap, seed, method=method, fraction=fraction,
                                 scores=scores)
            for p in ("triage", "monitoring")}


@dataclass
class ComparisonRun:
    seed: int
    results: dict[str, dict[str, EvalResult]]
    checkpoints: dict[str, Checkpoint]


def representation_comparison(cohort: Cohort, seed: int, setup: DeskSetup = DeskSetup(),
                              progress=None) -> ComparisonRun:
    """Linear probes on world-model, naive-SSL and random-init encoders."""
    train, test = train_test(cohort, seed, setup.test_fraction)
    encoders = {
        "world_model": pretrain_world_model(train, setup.pretrain("world_model", seed), progress)[0],
        "naive_ssl": pretrain_world_model(train, setup.pretrain("naive_ssl", seed), progress)[0],
        "random_init": random_init_checkpoint(setup.pretrain("world_model", seed)),
    }
    results, ckpts = {}, dict(encoders)
    for name, enc in encoders.items():
        probe, _ = linear_probe(train, enc, setup.probe(seed), progress)
        ckpts[f"{name}_probe"] = probe
        results[f"{name}_probe"] = _evaluate(probe, test, f"{name}_probe", seed)
    return ComparisonRun(seed, results, ckpts)


def low_data_comparison(cohort: Cohort, seed: int, fraction: float, setup: DeskSetup = DeskSetup(),
                        methods=("world_model_finetune", "world_model_probe", "supervised"),
                        progress=None) -> dict[str, dict[str, EvalResult]]:
    """Pretrain on a patient fraction of the training fold, then finetune and
    probe that checkpoint and train the supervised baseline on the same
    patients; evaluate on the full test fold."""
    train, test = train_test(cohort, seed, setup.test_fraction)
    out = {}
    pre = None
    if any(m.startswith("world_model") for m in methods):
        pre, _ = pretrain_world_model(train, setup.pretrain("world_model", seed, fraction), progress)
    for m in methods:
        if m == "world_model_finetune":
            ck, _ = finetune(train, pre, replace(setup.supervised(seed), data_fraction=fraction), progress)
        elif m == "world_model_probe":
            ck, _ = linear_probe(train, pre, replace(setup.probe(seed), data_fraction=fraction), progress)
        elif m == "supervised":
            ck, _ = train_supervised(train, replace(setup.supervised(seed), data_fraction=fraction), progress)
        else:
            raise ValueError(f"unknown method {m!r}")
        out[m] = _evaluate(ck, test, m, seed, fraction)
    return out


def counterfactual_onset_rate(world_ckpt: Checkpoint, probe_ckpt: Checkpoint, test: Cohort,
                              cls: int) -> tuple[float, int]:
    """Share of label-free test records whose class-``cls`` probe logit rises
    when the onset action for ``cls`` replaces the zero action."""
    wm = load_world_model(world_ckpt)
    clf = load_classifier(probe_ckpt)
    healthy = np.flatnonzero(test.labels.sum(axis=1) == 0)
    if len(healthy) == 0:
        raise ValueError("test cohort has no label-free records")
    X = test.waveforms[healthy]
    C = wm.cfg.num_classes
    onset = np.zeros(C, np.int8)
    onset[cls] = 1
    base = counterfactual_apply(wm, clf, X, np.zeros(C, np.int8))
    moved = counterfactual_apply(wm, clf, X, onset)
    return float(np.mean(moved.logits[:, cls] > base.logits[:, cls])), len(healthy)


def reference_latents(ckpt: Checkpoint, cohort: Cohort) -> np.ndarray:
    return encode(load_encoder(ckpt), cohort.waveforms)


def make_desk_cohort(n_patients: int = 2000, seed: int = 0) -> Cohort:
    return synth_generate(desk_synth(n_patients, seed))
