"""Longitudinal cohort storage, transition pairs, statistics, synthesis and splits."""

from .pairs import (CohortStats, TransitionPair, actions, cohort_stats, extract_pairs, jaccard,
                    pair_indices, patient_groups)
from .split import fold_cohorts, patient_split, subsample_patients
from .store import Cohort, CohortError, directory_digest, read_cohort, write_cohort
from .synth import SynthConfig, synth_generate, synth_write

__all__ = [
    "Cohort", "CohortError", "CohortStats", "SynthConfig", "TransitionPair", "actions",
    "cohort_stats", "directory_digest", "extract_pairs", "fold_cohorts", "jaccard",
    "pair_indices", "patient_groups", "patient_split", "read_cohort", "subsample_patients",
    "synth_generate", "synth_write", "write_cohort",
]
