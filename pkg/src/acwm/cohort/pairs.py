"""Consecutive-record transition pairs and transition statistics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .store import Cohort, CohortError

JACCARD_BINS = 10


@dataclass
class TransitionPair:
    patient_id: str
    X_t: np.ndarray
    y_t: np.ndarray
    X_next: np.ndarray
    y_next: np.ndarray
    a: np.ndarray


def patient_groups(cohort: Cohort) -> dict[str, np.ndarray]:
    """Record indices per patient, sorted chronologically. Patients appear in
    order of first occurrence."""
    groups: dict[str, list[int]] = {}
    for i, pid in enumerate(cohort.patient_ids):
        groups.setdefault(str(pid), []).append(i)
    out = {}
    for pid, idx in groups.items():
        idx = np.asarray(idx, dtype=np.int64)
        orders = cohort.order[idx]
        if len(np.unique(orders)) != len(orders):
            raise CohortError(f"duplicate order index for patient {pid}")
        out[pid] = idx[np.argsort(orders, kind="stable")]
    return out


def pair_indices(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """(index of X_t, index of X_next) for every consecutive pair."""
    first, second = [], []
    for idx in patient_groups(cohort).values():
        first.extend(idx[:-1])
        second.extend(idx[1:])
    return np.asarray(first, dtype=np.int64), np.asarray(second, dtype=np.int64)


def actions(cohort: Cohort, i_t: np.ndarray, i_next: np.ndarray) -> np.ndarray:
    return cohort.labels[i_next].astype(np.int8) - cohort.labels[i_t].astype(np.int8)


def extract_pairs(cohort: Cohort) -> list[TransitionPair]:
    i_t, i_n = pair_indices(cohort)
    a = actions(cohort, i_t, i_n)
    return [TransitionPair(str(cohort.patient_ids[t]), cohort.waveforms[t], cohort.labels[t],
                           cohort.waveforms[n], cohort.labels[n], a[k])
            for k, (t, n) in enumerate(zip(i_t, i_n))]


def jaccard(y_a: np.ndarray, y_b: np.ndarray) -> np.ndarray:
    """Row-wise Jaccard similarity of binary label sets; two empty sets score 1."""
    y_a = np.atleast_2d(y_a).astype(bool)
    y_b = np.atleast_2d(y_b).astype(bool)
    inter = (y_a & y_b).sum(axis=1)
    union = (y_a | y_b).sum(axis=1)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


@dataclass
class CohortStats:
    n_patients: int
    n_records: int
    n_pairs: int
    n_stable_pairs: int
    n_changed_pairs: int
    jaccard_bin_edges: list[float]
    jaccard_hist: list[int]
    action_l1_hist: dict[int, int]
    class_prevalence: dict[str, float]
    n_singletons: int = 0
    changed_patients: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["action_l1_hist"] = {str(k): v for k, v in self.action_l1_hist.items()}
        return d

    def write(self, directory) -> None:
        """JSON summary plus CSV histograms for plotting."""
        import json

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "stats.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(d / "jaccard_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count"])
            e = self.jaccard_bin_edges
            for i, c in enumerate(self.jaccard_hist):
                w.writerow([e[i], e[i + 1], c])
        with open(d / "action_l1_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l1_magnitude", "count"])
            for k in sorted(self.action_l1_hist):
                w.writerow([k, self.action_l1_hist[k]])


def cohort_stats(cohort: Cohort) -> CohortStats:
    groups = patient_groups(cohort)
    i_t, i_n = pair_indices(cohort)
    a = actions(cohort, i_t, i_n)
    l1 = np.abs(a).sum(axis=1) if len(a) else np.zeros(0, dtype=np.int64)
    changed = l1 > 0
    jac = jaccard(cohort.labels[i_t], cohort.labels[i_n]) if len(a) else np.zeros(0)
    edges = np.linspace(0.0, 1.0, JACCARD_BINS + 1)
    hist, _ = np.histogram(jac, bins=edges)
    mags, counts = np.unique(l1[changed], return_counts=True)
    prevalence = (cohort.labels.mean(axis=0) if cohort.n_records else np.zeros(cohort.n_classes))
    changed_patients = len(np.unique(cohort.patient_ids[i_t[changed]])) if changed.any() else 0
    return CohortStats(
        n_patients=len(groups),
        n_records=cohort.n_records,
        n_pairs=len(a),
        n_stable_pairs=int((~changed).sum()),
        n_changed_pairs=int(changed.sum()),
        jaccard_bin_edges=[float(e) for e in edges],
        jaccard_hist=[int(c) for c in hist],
        action_l1_hist={int(m): int(c) for m, c in zip(mags, counts)},
        class_prevalence={c: float(p) for c, p in zip(cohort.classes, prevalence)},
        n_singletons=sum(1 for g in groups.values() if len(g) == 1),
        changed_patients=changed_patients,
    )
