"""Macro-AUROC, patient-level bootstrap intervals, evaluation protocols,
low-data sweeps, counterfactual application and report bundles."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff.checkpoint import Checkpoint
from .autodiff.ops import _sigmoid
from .autodiff.tensor import Tensor
from .cohort.pairs import patient_groups
from .cohort.store import Cohort
from .models import Classifier, Encoder, WorldModel

PROTOCOLS = ("triage", "monitoring")
REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = ["fraction", "method", "protocol", "auroc", "ci_low", "ci_high"]


class AurocError(ValueError):
    """No class has both positive and negative examples."""


class BootstrapError(RuntimeError):
    pass


class ReportError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AUROC


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    start = np.cumsum(counts) - counts
    return (start + (counts + 1) / 2.0)[inv.ravel()]


def auroc_binary(scores: np.ndarray, y: np.ndarray) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) via the rank-sum statistic; NaN
    when one of the two groups is empty."""
    y = np.asarray(y).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    r = midranks(np.asarray(scores, dtype=np.float64))
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auroc(scores, y) -> tuple[float, np.ndarray]:
    """(macro AUROC, per-class AUROC). Classes without both labels are NaN in
    the per-class vector and excluded from the unweighted mean."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if scores.ndim == 1:
        scores, y = scores[:, None], y.reshape(-1, 1)
    if scores.shape != y.shape:
        raise ValueError(f"scores {scores.shape} and labels {y.shape} differ in shape")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    per = np.array([auroc_binary(scores[:, c], y[:, c]) for c in range(y.shape[1])])
    valid = ~np.isnan(per)
    if not valid.any():
        raise AurocError("no class has both positive and negative examples")
    return float(np.mean(per[valid])), per


def pairwise_auroc(scores: np.ndarray, y: np.ndarray) -> float:
    """Exhaustive pairwise reference for one class (O(P*N))."""
    y = np.asarray(y).astype(bool)
    pos, neg = scores[y], scores[~y]
    if len(pos) == 0 or len(neg) == 0:
        return float("nan")
    d = pos[:, None] - neg[None, :]
    return float(((d > 0).sum() + 0.5 * (d == 0).sum()) / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# bootstrap

Resampler = Callable[[np.random.Generator, int], np.ndarray]


def _resample_with_replacement(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, n)


def bootstrap_distribution(scores, y, patient_ids, B: int, seed: int,
                           resample: Resampler | None = None) -> tuple[np.ndarray, int]:
    """Macro-AUROC of B patient-level resamples and the number of skipped
    (degenerate) replicates. Replicate i draws from ``default_rng([seed, i])``
    so the result does not depend on evaluation order."""
    if B < 1:
        raise ValueError("B must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    pids = np.asarray(patient_ids).astype(str)
    _, inv = np.unique(pids, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    counts = np.bincount(inv)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    n_pat = len(counts)
    resample = resample or _resample_with_replacement
    values = []
    skipped = 0
    for i in range(B):
        picks = resample(np.random.default_rng([seed, i]), n_pat)
        idx = np.concatenate([order[starts[p]:starts[p] + counts[p]] for p in picks])
        try:
            values.append(macro_auroc(scores[idx], y[idx])[0])
        except AurocError:
            skipped += 1
    if skipped * 2 > B:
        raise BootstrapError(f"{skipped} of {B} bootstrap replicates were degenerate")
    return np.asarray(values), skipped


def bootstrap_ci(scores, y, patient_ids, B: int = 1000, seed: int = 0, level: float = 0.95,
                 resample: Resampler | None = None) -> tuple[float, float]:
    """Percentile interval of the patient-level bootstrap, widened if needed to
    contain the point estimate."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    point = macro_auroc(scores, y)[0]
    values, _ = bootstrap_distribution(scores, y, patient_ids, B, seed, resample)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return float(min(low, point)), float(max(high, point))


# ---------------------------------------------------------------------------
# protocols


@dataclass
class EvalResult:
    protocol: str
    macro_auroc: float
    per_class_auroc: list
    ci_low: float
    ci_high: float
    n_bootstrap: int
    n_records: int
    n_patients: int
    method: str = ""
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        self.per_class_auroc = [None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)
                                for v in self.per_class_auroc]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(**d)


def select_protocol(cohort: Cohort, protocol: str) -> np.ndarray:
    """Record indices for a protocol: the earliest record of each patient
    (triage) or every record (monitoring)."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if protocol == "monitoring":
        return np.arange(cohort.n_records)
    return np.sort(np.array([g[0] for g in patient_groups(cohort).values()], dtype=np.int64))


def _modules_from(ckpt: Checkpoint) -> tuple[Encoder, Classifier]:
    from .training import load_classifier, load_encoder

    enc, clf = load_encoder(ckpt), load_classifier(ckpt)
    if clf.dim != enc.cfg.latent_dim:
        raise ValueError(f"classifier input {clf.dim} does not match encoder latent {enc.cfg.latent_dim}")
    return enc, clf


def predict_scores(ckpt: Checkpoint, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Sigmoid outputs of the checkpoint's encoder + classifier, eval mode."""
    from .training import encode

    enc, clf = _modules_from(ckpt)
    return _sigmoid(clf(Tensor(encode(enc, X, batch_size))).data.astype(np.float64))


def evaluate_protocol(ckpt: Checkpoint, cohort: Cohort, protocol: str, n_bootstrap: int = 1000,
                      seed: int = 0, level: float = 0.95, method: str = "", fraction: float = 1.0,
                      scores: np.ndarray | None = None) -> EvalResult:
    """Score ``cohort`` under ``protocol`` with bootstrap CI. ``scores`` may
    hold precomputed sigmoid outputs for every record of the cohort."""
    idx = select_protocol(cohort, protocol)
    if len(idx) == 0:
        raise ValueError("protocol selects no records")
    s = predict_scores(ckpt, cohort.waveforms[idx]) if scores is None else np.asarray(scores)[idx]
    y = cohort.labels[idx]
    pids = cohort.patient_ids[idx]
    macro, per = macro_auroc(s, y)
    if n_bootstrap > 0:
        lo, hi = bootstrap_ci(s, y, pids, n_bootstrap, seed, level)
    else:
        lo = hi = macro
    return EvalResult(protocol, macro, list(per), lo, hi, n_bootstrap, len(idx), len(np.unique(pids)),
                      method, fraction, seed)


# ---------------------------------------------------------------------------
# low-data sweep


def low_data_sweep(train: Cohort, test: Cohort, fractions: Sequence[float], protocols: Sequence[str],
                   seeds: Sequence[int], pretrain_cfg, supervised_cfg, probe_cfg,
                   n_bootstrap: int = 200, progress=None, constant_steps: bool = True) -> list[EvalResult]:
    """For each fraction and seed: pretrain on the patient subset, then finetune
    and probe that checkpoint and train the supervised baseline on the same
    subset; evaluate all three on ``test``. With ``constant_steps`` the
    pretraining epochs scale by 1/fraction to keep the step budget."""
    from dataclasses import replace

    from .training import finetune, linear_probe, pretrain_world_model, train_supervised

    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    results = []
    for f in fractions:
        for s in seeds:
            epochs = max(pretrain_cfg.epochs, round(pretrain_cfg.epochs / f)) if constant_steps else pretrain_cfg.epochs
            pre, _ = pretrain_world_model(train, replace(pretrain_cfg, data_fraction=f, seed=s, epochs=epochs),
                                          progress)
            runs = {
                "world_model_finetune": finetune(train, pre, replace(supervised_cfg, data_fraction=f, seed=s), progress)[0],
                "world_model_probe": linear_probe(train, pre, replace(probe_cfg, data_fraction=f, seed=s), progress)[0],
                "supervised": train_supervised(train, replace(supervised_cfg, data_fraction=f, seed=s), progress)[0],
            }
            for method, ck in runs.items():
                scores = predict_scores(ck, test.waveforms)
                for p in protocols:
                    results.append(evaluate_protocol(ck, test, p, n_bootstrap, s, method=method,
                                                     fraction=f, scores=scores))
    return results


# ---------------------------------------------------------------------------
# counterfactuals


@dataclass
class CounterfactualResult:
    h: np.ndarray
    h_hat: np.ndarray
    logits: np.ndarray
    displacement: np.ndarray
    neighbor_index: np.ndarray
    neighbor_dist: np.ndarray


def parse_action(spec: str, num_classes: int) -> np.ndarray:
    """Parse "+2,-0" into a ternary vector (onset of class 2, resolution of class 0)."""
    a = np.zeros(num_classes, dtype=np.int8)
    seen = set()
    for tok in (t.strip() for t in spec.split(",")):
        if not tok:
            continue
        if tok[0] not in "+-" or not tok[1:].isdigit():
            raise ValueError(f"bad action token {tok!r}; expected a sign followed by a class index")
        c = int(tok[1:])
        if c >= num_classes:
            raise ValueError(f"class index {c} out of range for {num_classes} classes")
        if c in seen:
            raise ValueError(f"class {c} appears more than once in action spec")
        seen.add(c)
        a[c] = 1 if tok[0] == "+" else -1
    return a


def counterfactual_apply(model: WorldModel, classifier: Classifier, X: np.ndarray, a: np.ndarray,
                         k: int = 5, reference: np.ndarray | None = None) -> CounterfactualResult:
    """h = Enc(X), h_hat = Dyn(h, Proj(a)), probe logits at h_hat and the k
    nearest rows of ``reference`` latents to h_hat."""
    from .training import encode

    if classifier.dim != model.cfg.latent_dim:
        raise ValueError(f"probe dimension {classifier.dim} does not match latent {model.cfg.latent_dim}")
    X = np.asarray(X, dtype=np.float32)
    single = X.ndim == 2
    if single:
        X = X[None]
    h = encode(model.encoder, X)
    a = np.asarray(a)
    A = np.broadcast_to(a, (len(h), model.cfg.num_classes)).astype(np.float32)
    h_hat = model.predict_next(Tensor(h), A).data
    logits = classifier(Tensor(h_hat)).data
    disp = np.linalg.norm(h_hat - h, axis=1)
    if reference is not None and len(reference):
        d = np.sqrt(np.maximum(((h_hat[:, None, :].astype(np.float64) - reference[None]) ** 2).sum(-1), 0))
        kk = min(k, len(reference))
        nn_idx = np.argsort(d, axis=1, kind="stable")[:, :kk]
        nn_d = np.take_along_axis(d, nn_idx, axis=1)
    else:
        nn_idx = np.zeros((len(h), 0), np.int64)
        nn_d = np.zeros((len(h), 0))
    res = CounterfactualResult(h, h_hat, logits, disp, nn_idx, nn_d)
    if single:
        res = CounterfactualResult(*(v[0] for v in (h, h_hat, logits, disp, nn_idx, nn_d)))
    return res


# ---------------------------------------------------------------------------
# reports


def stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def emit_report(results: Sequence[EvalResult], directory, config: dict | None = None,
                checkpoints: dict[str, str] | None = None, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` (versioned) and ``<stem>.csv`` with columns
    fraction, method, protocol, auroc, ci_low, ci_high."""
    if not results:
        raise ReportError("no results to report")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_hash": stable_hash(config or {}),
        "checkpoint_hashes": dict(checkpoints or {}),
        "config": config or {},
        "results": [r.to_dict() for r in results],
    }
    jp = d / f"{stem}.json"
    jp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    cp = d / f"{stem}.csv"
    with open(cp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([repr(float(r.fraction)), r.method, r.protocol, repr(r.macro_auroc),
                        repr(r.ci_low), repr(r.ci_high)])
    return jp, cp


def read_report(path) -> list[EvalResult]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ReportError(f"unsupported report schema {doc.get('schema_version')}")
    return [EvalResult.from_dict(r) for r in doc["results"]]
