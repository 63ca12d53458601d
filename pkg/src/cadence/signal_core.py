"""Canonical accelerometer representation: unit normalisation, resampling to
30 Hz, non-overlapping 10 s windows and the 8-d summary-statistics baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import signal as sps

from .errors import EmptyRecording, NonFiniteSample, ShapeMismatch

logger = logging.getLogger(__name__)

TARGET_RATE_HZ = 30.0
WINDOW_SECONDS = 10
WINDOW_SAMPLES = int(TARGET_RATE_HZ * WINDOW_SECONDS)  # 300
WINDOW_MS = WINDOW_SECONDS * 1000
STANDARD_GRAVITY = 9.80665
NULL_ACTIVITY = "null"


@dataclass
class Recording:
    """One contiguous 3-axis acceleration stream of a single subject/device.

    ``samples`` is an ``(n, 3)`` array in native units; multiply by
    ``unit_scale`` to obtain g. Sample ``i`` sits at
    ``start_time + 1000 * i / sample_rate_hz`` milliseconds.
    """

    subject_id: str
    device_id: str
    sample_rate_hz: float
    start_time: float
    samples: np.ndarray
    unit_scale: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ShapeMismatch(f"samples must be (n, 3), got {self.samples.shape}")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.unit_scale > 0:
            raise ValueError(f"unit_scale must be positive, got {self.unit_scale}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.sample_rate_hz

    @property
    def end_time(self) -> float:
        """Exclusive end of the span covered by the samples."""
        return self.start_time + len(self) * self.period_ms

    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) * self.period_ms


@dataclass
class Window:
    subject_id: str
    start_time: float
    data: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (WINDOW_SAMPLES, 3):
            raise ShapeMismatch(f"window must be {WINDOW_SAMPLES}x3, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteSample(f"non-finite value in window of {self.subject_id}@{self.start_time}")


@dataclass(frozen=True)
class LabeledInterval:
    activity: str
    start_time: float
    end_time: float

    def __post_init__(self):
        if not self.start_time < self.end_time:
            raise ValueError(f"interval start {self.start_time} must precede end {self.end_time}")

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class BaselineFeatures:
    mean_x: float
    mean_y: float
    mean_z: float
    mean_norm: float
    std_x: float
    std_y: float
    std_z: float
    std_norm: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.mean_x, self.mean_y, self.mean_z, self.mean_norm,
             self.std_x, self.std_y, self.std_z, self.std_norm]
        )


def normalize_and_resample(rec: Recording, antialias: bool = False) -> Recording:
    """Convert ``rec`` to g and linearly interpolate it onto a 30 Hz grid.

    The output grid starts at ``rec.start_time`` and extends up to (and
    including, when it lands exactly) the last native sample. With
    ``antialias`` set, a zero-phase 15 Hz low-pass is applied before
    decimating recordings sampled faster than 30 Hz.
    """
    n = len(rec)
    if n < 2:
        raise EmptyRecording(f"need at least 2 samples, got {n}")
    if not np.all(np.isfinite(rec.samples)):
        raise NonFiniteSample(f"non-finite sample in recording of {rec.subject_id}")

    values = rec.samples * rec.unit_scale if rec.unit_scale != 1.0 else rec.samples.copy()
    ratio = rec.sample_rate_hz / TARGET_RATE_HZ

    if antialias and ratio > 1.0 and n > 27:
        sos = sps.butter(4, 0.5 * TARGET_RATE_HZ, fs=rec.sample_rate_hz, output="sos")
        values = sps.sosfiltfilt(sos, values, axis=0)

    # positions of output samples expressed in native sample indices
    n_out = int(np.floor((n - 1) / ratio + 1e-9)) + 1
    pos = np.arange(n_out) * ratio
    src = np.arange(n, dtype=np.float64)
    out = np.empty((n_out, 3))
    for axis in range(3):
        out[:, axis] = np.interp(pos, src, values[:, axis])

    return Recording(
        subject_id=rec.subject_id,
        device_id=rec.device_id,
        sample_rate_hz=TARGET_RATE_HZ,
        start_time=rec.start_time,
        samples=out,
        unit_scale=1.0,
        meta=dict(rec.meta),
    )


def window_count(n_samples: int) -> int:
    """Number of complete non-overlapping windows in ``n_samples`` 30 Hz samples."""
    return int(n_samples) // WINDOW_SAMPLES


def windows_in_hours(hours: float) -> int:
    return window_count(int(round(hours * 3600 * TARGET_RATE_HZ)))


def split_windows(rec: Recording, intervals: Optional[Sequence[LabeledInterval]] = None) -> list[Window]:
    """Cut a 30 Hz recording in g into consecutive 300-sample windows.

    The trailing remainder is dropped. When ``intervals`` are given, each
    window takes the activity of the interval that fully contains it (windows
    straddling a label change stay unlabelled).
    """
    if rec.sample_rate_hz != TARGET_RATE_HZ or rec.unit_scale != 1.0:
        raise ValueError("split_windows expects a 30 Hz recording in g; call normalize_and_resample first")
    count = window_count(len(rec))
    blocks = rec.samples[: count * WINDOW_SAMPLES].reshape(count, WINDOW_SAMPLES, 3)
    windows = [
        Window(rec.subject_id, rec.start_time + WINDOW_MS * i, blocks[i].copy())
        for i in range(count)
    ]
    if intervals:
        windows = label_windows(windows, intervals)
    return windows


def label_windows(windows: Iterable[Window], intervals: Sequence[LabeledInterval]) -> list[Window]:
    ordered = sorted(intervals, key=lambda iv: iv.start_time)
    starts = np.array([iv.start_time for iv in ordered])
    out = []
    for w in windows:
        label = None
        k = int(np.searchsorted(starts, w.start_time, side="right")) - 1
        if k >= 0 and ordered[k].end_time >= w.start_time + WINDOW_MS:
            label = ordered[k].activity
        out.append(replace(w, label=label))
    return out


def baseline_feature_matrix(data: np.ndarray) -> np.ndarray:
    """Vectorised baseline features for an ``(N, 300, 3)`` stack -> ``(N, 8)``.

    Columns: mean x, y, z, norm, then population std x, y, z, norm.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    if not np.all(np.isfinite(data)):
        raise NonFiniteSample("non-finite sample in window data")
    norm = np.sqrt(np.sum(data * data, axis=-1, keepdims=True))
    full = np.concatenate([data, norm], axis=-1)
    return np.concatenate([full.mean(axis=1), full.std(axis=1)], axis=1)


def baseline_features(w: Window) -> BaselineFeatures:
    row = baseline_feature_matrix(w.data)[0]
    return BaselineFeatures(*(float(v) for v in row))


def stack_windows(windows: Sequence[Window], dtype=np.float64) -> np.ndarray:
    if not windows:
        return np.zeros((0, WINDOW_SAMPLES, 3), dtype=dtype)
    return np.stack([w.data for w in windows]).astype(dtype, copy=False)
