"""Synthetic wrist-accelerometer corpus with known activity structure.

Each subject produces one continuous 30 Hz stream made of activity bouts.
Activity ``c`` is a quasi-periodic 3-axis motion with

* fundamental frequency ``BASE_HZ * FREQ_RATIO ** c``,
* a class-specific harmonic mix (``HARMONICS[c % len(HARMONICS)]``),
* motion along per-bout random directions (one per harmonic),
* phase jitter: a random walk with step sd ``PHASE_JITTER`` rad per sample.

Nuisance factors shared by all classes: per-subject wrist orientation (a
uniform turn about the device z axis composed with a random tilt of sd
``ORIENT_TILT_DEG`` degrees, applied to motion and gravity), amplitude scale
``U(0.7, 1.3)``, frequency scale ``U(0.9, 1.1)``, per-bout gravity tilt up to
``TILT_DEG`` degrees, and i.i.d. sensor noise ``NOISE_G``. Motion RMS is the
same for every class, so simple mean/std statistics carry little class
information by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .signal_core import TARGET_RATE_HZ, LabeledInterval, Recording

BASE_HZ = 0.8
FREQ_RATIO = 1.8
MOTION_RMS_G = 0.35
PHASE_JITTER = 0.05
NOISE_G = 0.02
TILT_DEG = 20.0
ORIENT_TILT_DEG = 15.0
HARMONICS = (
    (1.0, 0.0, 0.0),
    (1.0, 0.6, 0.0),
    (1.0, 0.0, 0.5),
    (1.0, 0.4, 0.3),
)
EPOCH_MS = 1_600_000_000_000


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 3
    subjects: int = 20
    minutes: float = 20.0
    bout_min_s: float = 120.0
    bout_max_s: float = 360.0
    seed: int = 0


def class_name(c: int) -> str:
    return f"activity_{c}"


def _directions(rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(3, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _orientation(rng: np.random.Generator) -> np.ndarray:
    turn = Rotation.from_rotvec([0.0, 0.0, rng.uniform(0, 2 * np.pi)])
    tilt = Rotation.from_rotvec(rng.normal(size=3) / np.sqrt(3) * np.deg2rad(ORIENT_TILT_DEG))
    return (tilt * turn).as_matrix()


def _bout_signal(c: int, n: int, amp: float, fscale: float, rng: np.random.Generator) -> np.ndarray:
    f0 = BASE_HZ * FREQ_RATIO ** c * fscale
    t = np.arange(n) / TARGET_RATE_HZ
    phase = 2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi) + np.cumsum(rng.normal(0, PHASE_JITTER, n))
    harm = np.asarray(HARMONICS[c % len(HARMONICS)])
    dirs = _directions(rng)
    sig = np.zeros((n, 3))
    for h, (weight, direction) in enumerate(zip(harm, dirs), start=1):
        if weight:
            sig += weight * np.sin(h * phase + rng.uniform(0, 2 * np.pi))[:, None] * direction[None, :]
    rms = np.sqrt(np.mean(np.sum(sig**2, axis=1)))
    return sig * (MOTION_RMS_G * amp / rms)


def generate_subject(subject: int, cfg: SynthConfig) -> tuple[Recording, list[LabeledInterval]]:
    rng = np.random.default_rng([cfg.seed, subject])
    orient = _orientation(rng)
    amp = rng.uniform(0.7, 1.3)
    fscale = rng.uniform(0.9, 1.1)
    total = int(round(cfg.minutes * 60 * TARGET_RATE_HZ))
    chunks, intervals = [], []
    pos, prev = 0, -1
    start_ms = EPOCH_MS + subject * 86_400_000
    period = 1000.0 / TARGET_RATE_HZ
    while pos < total:
        choices = [c for c in range(cfg.classes) if c != prev] or [0]
        c = int(rng.choice(choices))
        n = int(rng.uniform(cfg.bout_min_s, cfg.bout_max_s) * TARGET_RATE_HZ)
        n = min(n, total - pos)
        tilt = Rotation.from_rotvec(rng.normal(size=3) / np.sqrt(3) * np.deg2rad(TILT_DEG)).as_matrix()
        gravity = tilt @ np.array([0.0, 0.0, 1.0])
        motion = _bout_signal(c, n, amp, fscale, rng)
        chunks.append((motion + gravity) @ orient.T)
        intervals.append(LabeledInterval(class_name(c), start_ms + pos * period, start_ms + (pos + n) * period))
        pos += n
        prev = c
    samples = np.concatenate(chunks) + rng.normal(0, NOISE_G, (total, 3))
    rec = Recording(f"s{subject:03d}", "synthwatch", TARGET_RATE_HZ, float(start_ms), samples, 1.0,
                    meta={"dataset": "synth"})
    return rec, intervals


def generate_corpus(cfg: SynthConfig) -> list[tuple[Recording, list[LabeledInterval]]]:
    return [generate_subject(s, cfg) for s in range(cfg.subjects)]
