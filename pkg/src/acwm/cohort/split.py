"""Patient-level folds and patient subsampling."""

from __future__ import annotations

import numpy as np

from .store import Cohort, CohortError


def patient_split(cohort: Cohort, fold_fractions, seed: int) -> dict[str, int]:
    """Assign every patient to one fold; all of a patient's records follow it."""
    fr = np.asarray(fold_fractions, dtype=np.float64)
    if fr.ndim != 1 or len(fr) < 1 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fold fractions must be non-negative and sum to 1, got {list(fold_fractions)}")
    patients = np.sort(np.unique(cohort.patient_ids))
    perm = np.random.default_rng(seed).permutation(len(patients))
    cuts = np.round(np.cumsum(fr) * len(patients)).astype(int)
    cuts[-1] = len(patients)
    assign: dict[str, int] = {}
    start = 0
    for fold, stop in enumerate(cuts):
        if stop <= start:
            raise CohortError(f"fold {fold} is empty; cohort of {len(patients)} patients is too small")
        for j in perm[start:stop]:
            assign[str(patients[j])] = fold
        start = stop
    return assign


def fold_cohorts(cohort: Cohort, assignment: dict[str, int]) -> list[Cohort]:
    n_folds = max(assignment.values()) + 1
    fold_of = np.array([assignment[str(p)] for p in cohort.patient_ids], dtype=np.int64)
    return [cohort.select(np.flatnonzero(fold_of == f)) for f in range(n_folds)]


def subsample_patients(patients, fraction: float, seed: int) -> list[str]:
    """Deterministic subset of round(fraction * n) patients, returned sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    pts = np.sort(np.unique(np.asarray(list(patients), dtype=str)))
    if fraction == 1.0:
        return [str(p) for p in pts]
    k = int(round(fraction * len(pts)))
    chosen = np.random.default_rng(seed).permutation(len(pts))[:k]
    return [str(p) for p in np.sort(pts[chosen])]
