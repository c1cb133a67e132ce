"""On-disk cohort container and its in-memory form.

A cohort directory holds:

* ``manifest.json`` with version, channels, samples, classes, n_patients,
  n_records and blob_sha256;
* ``records.csv`` with header ``record_id,patient_id,order,labels`` where
  labels are pipe-separated class indices;
* ``waveforms.bin``: little-endian float32, record-major, in records.csv order.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COHORT_VERSION = 1
RECORDS_HEADER = ["record_id", "patient_id", "order", "labels"]


class CohortError(ValueError):
    pass


@dataclass
class Cohort:
    record_ids: np.ndarray  # [N] str
    patient_ids: np.ndarray  # [N] str
    order: np.ndarray  # [N] int64, chronological rank within patient
    labels: np.ndarray  # [N, C] uint8
    waveforms: np.ndarray  # [N, channels, samples] float32
    classes: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.record_ids = np.asarray(self.record_ids, dtype=str)
        self.patient_ids = np.asarray(self.patient_ids, dtype=str)
        self.order = np.asarray(self.order, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(len(self.record_ids), len(self.classes))
        self.waveforms = np.asarray(self.waveforms, dtype=np.float32)
        n = len(self.record_ids)
        if not (len(self.patient_ids) == len(self.order) == len(self.labels) == n):
            raise CohortError("record columns have inconsistent lengths")
        if self.waveforms.ndim != 3 or self.waveforms.shape[0] != n:
            raise CohortError(f"waveforms must be [{n}, channels, samples], got {self.waveforms.shape}")
        if self.labels.size and self.labels.max() > 1:
            raise CohortError("labels must be binary")

    @property
    def n_records(self) -> int:
        return len(self.record_ids)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def channels(self) -> int:
        return self.waveforms.shape[1]

    @property
    def samples(self) -> int:
        return self.waveforms.shape[2]

    def patients(self) -> np.ndarray:
        """Unique patient ids in order of first appearance."""
        _, first = np.unique(self.patient_ids, return_index=True)
        return self.patient_ids[np.sort(first)]

    @property
    def n_patients(self) -> int:
        return len(np.unique(self.patient_ids))

    def select(self, idx) -> "Cohort":
        idx = np.asarray(idx, dtype=np.int64)
        return Cohort(self.record_ids[idx], self.patient_ids[idx], self.order[idx],
                      self.labels[idx], self.waveforms[idx], list(self.classes), dict(self.meta))

    def select_patients(self, patients) -> "Cohort":
        mask = np.isin(self.patient_ids, np.asarray(list(patients), dtype=str))
        return self.select(np.flatnonzero(mask))

    @classmethod
    def empty(cls, classes: list[str], channels: int, samples: int) -> "Cohort":
        return cls(np.array([], dtype=str), np.array([], dtype=str), np.array([], dtype=np.int64),
                   np.zeros((0, len(classes)), np.uint8),
                   np.zeros((0, channels, samples), np.float32), list(classes))


def _blob_bytes(waveforms: np.ndarray) -> bytes:
    return np.ascontiguousarray(waveforms, dtype="<f4").tobytes()


def write_cohort(cohort: Cohort, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob = _blob_bytes(cohort.waveforms)
    (d / "waveforms.bin").write_bytes(blob)
    with open(d / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORDS_HEADER)
        for rid, pid, o, y in zip(cohort.record_ids, cohort.patient_ids, cohort.order, cohort.labels):
            w.writerow([rid, pid, int(o), "|".join(str(i) for i in np.flatnonzero(y))])
    manifest = {
        "version": COHORT_VERSION,
        "channels": int(cohort.channels),
        "samples": int(cohort.samples),
        "classes": list(cohort.classes),
        "n_patients": int(cohort.n_patients),
        "n_records": int(cohort.n_records),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def read_cohort(directory, verify: bool = True) -> Cohort:
    d = Path(directory)
    for name in ("manifest.json", "records.csv", "waveforms.bin"):
        if not (d / name).exists():
            raise CohortError(f"cohort directory {d} is missing {name}")
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("version") != COHORT_VERSION:
        raise CohortError(f"unsupported cohort version {manifest.get('version')}")
    classes = list(manifest["classes"])
    C, ch, ns = len(classes), int(manifest["channels"]), int(manifest["samples"])

    rids, pids, orders, labels = [], [], [], []
    with open(d / "records.csv", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != RECORDS_HEADER:
            raise CohortError(f"records.csv header must be {RECORDS_HEADER}, got {header}")
        for row in r:
            rid, pid, o, lab = row
            rids.append(rid)
            pids.append(pid)
            orders.append(int(o))
            y = np.zeros(C, np.uint8)
            if lab:
                idx = [int(t) for t in lab.split("|")]
                if min(idx) < 0 or max(idx) >= C:
                    raise CohortError(f"label index out of range in record {rid}")
                y[idx] = 1
            labels.append(y)
    n = len(rids)
    if n != manifest["n_records"]:
        raise CohortError(f"records.csv has {n} rows, manifest says {manifest['n_records']}")

    blob = (d / "waveforms.bin").read_bytes()
    expected = n * ch * ns * 4
    if len(blob) != expected:
        raise CohortError(f"waveforms.bin is {len(blob)} bytes, expected {expected} (truncated or padded)")
    if verify and hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CohortError("waveforms.bin checksum does not match manifest")
    wave = np.frombuffer(blob, dtype="<f4").reshape(n, ch, ns).astype(np.float32)
    cohort = Cohort(np.array(rids, dtype=str), np.array(pids, dtype=str),
                    np.array(orders, dtype=np.int64),
                    np.array(labels, dtype=np.uint8).reshape(n, C), wave, classes)
    if cohort.n_patients != manifest["n_patients"]:
        raise CohortError(f"records.csv has {cohort.n_patients} patients, manifest says {manifest['n_patients']}")
    extra = d / "synth_config.json"
    if extra.exists():
        cohort.meta["synth_config"] = json.loads(extra.read_text())
    return cohort


def directory_digest(directory) -> str:
    """SHA-256 over the three cohort files, for provenance records."""
    d = Path(directory)
    h = hashlib.sha256()
    for name in ("manifest.json", "records.csv", "waveforms.bin"):
        h.update(name.encode())
        h.update((d / name).read_bytes())
    return h.hexdigest()
