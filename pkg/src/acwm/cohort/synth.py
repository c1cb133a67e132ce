"""Synthetic longitudinal cohorts of multichannel pulse-train recordings.

Each patient gets a fixed "anatomy": base rate, pulse width, per-channel gains
for the pulse, its trailing wave and the atrial bump. Each record renders that
anatomy as a pulse train and applies the deterministic effect of every active
class:

* class 0 (wide-complex analog): pulse width x2
* class 1 (flutter analog): additive 5-cycles-per-second oscillation
* class 2 (segment-offset analog): constant offset right after each pulse
* class 3 (tachycardia analog): rate x1.5

Classes beyond the fourth carry labels but no waveform effect. Label sequences
follow per-class two-state Markov chains; chronic classes never resolve.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .store import Cohort, write_cohort

CLASS_NAMES = ["wide_complex", "flutter", "segment_offset", "tachycardia"]
FLUTTER_HZ = 5.0


@dataclass
class SynthConfig:
    n_patients: int = 100
    channels: int = 12
    samples: int = 1000
    sampling_rate: float = 100.0
    n_classes: int = 4
    initial_prob: list[float] = field(default_factory=lambda: [0.08, 0.08, 0.08, 0.08])
    onset_prob: list[float] = field(default_factory=lambda: [0.08, 0.08, 0.08, 0.08])
    resolution_prob: list[float] = field(default_factory=lambda: [0.0, 0.3, 0.3, 0.3])
    chronic: list[bool] = field(default_factory=lambda: [True, False, False, False])
    mean_records: float = 5.0
    max_records: int = 30
    noise: float = 0.05
    wander: float = 0.05
    gain_jitter: float = 0.0
    extra_waves: int = 0
    effect_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        C = self.n_classes
        for name in ("initial_prob", "onset_prob", "resolution_prob", "chronic"):
            v = list(getattr(self, name))
            if len(v) != C:
                if len(v) == 0:
                    raise ValueError(f"{name} must not be empty")
                v = [v[i % len(v)] for i in range(C)]
            setattr(self, name, v)
        for name in ("initial_prob", "onset_prob", "resolution_prob"):
            if any(not 0.0 <= p <= 1.0 for p in getattr(self, name)):
                raise ValueError(f"{name} entries must be probabilities in [0, 1]")
        if self.n_patients < 0 or self.channels < 1 or self.samples < 1 or self.n_classes < 1:
            raise ValueError("n_patients, channels, samples and n_classes must be positive")
        if self.noise < 0 or self.wander < 0 or self.gain_jitter < 0:
            raise ValueError("noise, wander and gain_jitter must be non-negative")
        if self.mean_records < 1.0 or self.max_records < 1:
            raise ValueError("mean_records must be >= 1 and max_records >= 1")
        if self.sampling_rate <= 2 * FLUTTER_HZ:
            raise ValueError("sampling_rate too low to represent the flutter oscillation")

    def effective_resolution(self) -> np.ndarray:
        return np.array([0.0 if c else r for r, c in zip(self.resolution_prob, self.chronic)])

    def class_names(self) -> list[str]:
        return [CLASS_NAMES[i] if i < len(CLASS_NAMES) else f"silent_{i}" for i in range(self.n_classes)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Anatomy:
    rate_bpm: float
    width_s: float
    qrs_gain: np.ndarray
    t_gain: np.ndarray
    p_gain: np.ndarray
    flutter_gain: np.ndarray
    offset_gain: np.ndarray
    extra_lag: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra_width: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra_gain: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def _draw_anatomy(rng: np.random.Generator, channels: int, extra_waves: int = 0) -> Anatomy:
    anat = Anatomy(
        rate_bpm=float(rng.uniform(55.0, 85.0)),
        width_s=float(rng.uniform(0.018, 0.026)),
        qrs_gain=rng.normal(0.8, 0.5, channels),
        t_gain=rng.normal(0.3, 0.2, channels),
        p_gain=rng.normal(0.12, 0.05, channels),
        flutter_gain=rng.normal(0.0, 1.0, channels),
        offset_gain=rng.normal(0.0, 1.0, channels),
    )
    if extra_waves:
        anat.extra_lag = rng.uniform(-0.3, 0.5, extra_waves)
        anat.extra_width = rng.uniform(0.015, 0.06, extra_waves)
        anat.extra_gain = rng.normal(0.0, 0.3, (extra_waves, channels))
    return anat


def _gauss(t: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    d = t[None, :] - centers[:, None]
    return np.exp(-0.5 * (d / sigma) ** 2).sum(axis=0)


def render_record(anat: Anatomy, y: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """One [channels, samples] recording of ``anat`` with the effects of label set ``y``."""
    fs, n, ch = cfg.sampling_rate, cfg.samples, cfg.channels
    s = cfg.effect_scale
    active = lambda c: c < len(y) and y[c] == 1  # noqa: E731
    t = np.arange(n) / fs

    rate = anat.rate_bpm * rng.uniform(0.95, 1.05)
    if active(3):
        rate *= 1.0 + 0.5 * s
    rr = 60.0 / rate
    phase = rng.uniform(0.0, rr)
    n_beats = int(np.ceil((t[-1] + 1.0) / rr)) + 2
    beats = phase - rr + rr * np.arange(n_beats) + rng.normal(0.0, 0.01 * rr, n_beats)

    width = anat.width_s * (1.0 + s if active(0) else 1.0)
    qrs = _gauss(t, beats, width) - 0.35 * _gauss(t, beats + 2.0 * width, width)
    twave = _gauss(t, beats + 0.28, 0.05)
    pwave = _gauss(t, beats - 0.16, 0.03)
    sig = (np.outer(anat.qrs_gain, qrs) + np.outer(anat.t_gain, twave)
           + np.outer(anat.p_gain, pwave))
    for lag, w, g in zip(anat.extra_lag, anat.extra_width, anat.extra_gain):
        sig += np.outer(g, _gauss(t, beats + lag, w))

    if active(1):
        flutter = 0.15 * s * np.sin(2 * np.pi * FLUTTER_HZ * t + rng.uniform(0, 2 * np.pi))
        sig += np.outer(anat.flutter_gain, flutter)
    if active(2):
        seg = np.zeros(n)
        after = (t[None, :] - beats[:, None])
        seg[((after > 0.06) & (after < 0.22)).any(axis=0)] = 1.0
        sig += np.outer(0.2 * s * anat.offset_gain, seg)

    sig *= rng.uniform(0.9, 1.1) * (1.0 + cfg.gain_jitter * rng.standard_normal((ch, 1)))
    wander = cfg.wander * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t[None, :] + rng.uniform(0, 2 * np.pi, (ch, 1)))
    sig += wander + rng.normal(0.0, cfg.noise, (ch, n))
    return sig.astype(np.float32)


def _label_sequence(rng: np.random.Generator, cfg: SynthConfig, n_rec: int) -> np.ndarray:
    C = cfg.n_classes
    onset = np.asarray(cfg.onset_prob)
    resolve = cfg.effective_resolution()
    y = np.zeros((n_rec, C), np.uint8)
    y[0] = rng.random(C) < np.asarray(cfg.initial_prob)
    for r in range(1, n_rec):
        u = rng.random(C)
        prev = y[r - 1].astype(bool)
        y[r] = np.where(prev, u >= resolve, u < onset)
    return y


def synth_generate(cfg: SynthConfig) -> Cohort:
    rng = np.random.default_rng(cfg.seed)
    p_geom = 1.0 / cfg.mean_records
    rids, pids, orders, labels, waves = [], [], [], [], []
    rec = 0
    for i in range(cfg.n_patients):
        anat = _draw_anatomy(rng, cfg.channels, cfg.extra_waves)
        n_rec = int(min(rng.geometric(p_geom), cfg.max_records))
        ys = _label_sequence(rng, cfg, n_rec)
        pid = f"P{i:06d}"
        for r in range(n_rec):
            rids.append(f"R{rec:07d}")
            pids.append(pid)
            orders.append(r)
            labels.append(ys[r])
            waves.append(render_record(anat, ys[r], cfg, rng))
            rec += 1
    if not rids:
        c = Cohort.empty(cfg.class_names(), cfg.channels, cfg.samples)
    else:
        c = Cohort(np.array(rids), np.array(pids), np.array(orders), np.stack(labels),
                   np.stack(waves), cfg.class_names())
    c.meta["synth_config"] = cfg.to_dict()
    return c


def synth_write(cfg: SynthConfig, directory) -> Path:
    cohort = synth_generate(cfg)
    d = write_cohort(cohort, directory)
    (d / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return d
