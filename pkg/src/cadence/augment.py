"""Stochastic window transformations for building augmentation-coincident pairs.

Each augmentation is a small frozen dataclass whose ``transform`` maps a
``(300, 3)`` array in g to another. Hard validity bounds are checked on
apply; the narrower *sampling* ranges live in :class:`AugmentRanges` and are
only used when drawing random chains.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import ParameterOutOfRange
from .signal_core import TARGET_RATE_HZ, WINDOW_SAMPLES, Window

KINDS = ("median_smooth", "time_translate", "baseline_jump", "baseline_wander", "rotate", "gaussian_noise")


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for random augmentation chains (all in g / samples / s)."""

    median_widths: tuple = (3, 5, 7)
    translate_min: int = 15
    translate_max: int = 90
    jump_min: float = 0.05
    jump_max: float = 0.5
    wander_amp_min: float = 0.05
    wander_amp_max: float = 0.3
    wander_period_min: float = 5.0
    wander_period_max: float = 20.0
    noise_min: float = 0.005
    noise_max: float = 0.05
    rotation_mode: str = "planar"
    max_chain: int = 3

    @classmethod
    def from_config(cls, cfg: dict) -> "AugmentRanges":
        kw = {}
        for f in fields(cls):
            key = f"augment.{f.name}"
            if key not in cfg:
                continue
            value = cfg[key]
            if f.name == "median_widths":
                kw[f.name] = tuple(int(v) for v in (value.split(",") if isinstance(value, str) else value))
            else:
                kw[f.name] = type(f.default)(value)
        return cls(**kw)


@dataclass(frozen=True)
class MedianSmooth:
    width: int = 5
    kind = "median_smooth"

    def validate(self):
        if self.width < 1 or self.width % 2 == 0 or self.width >= WINDOW_SAMPLES:
            raise ParameterOutOfRange(f"median width must be odd in [1, {WINDOW_SAMPLES}), got {self.width}")

    def transform(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return ndimage.median_filter(x, size=(self.width, 1), mode="nearest")


@dataclass(frozen=True)
class TimeTranslate:
    """Shift by ``offset`` samples (positive = later); vacated edge is reflected."""

    offset: int = 30
    kind = "time_translate"

    def validate(self):
        if abs(self.offset) >= WINDOW_SAMPLES // 2:
            raise ParameterOutOfRange(f"|offset| must be < {WINDOW_SAMPLES // 2}, got {self.offset}")

    def transform(self, x, rng):
        k = int(self.offset)
        if k == 0:
            return x.copy()
        padded = np.pad(x, ((abs(k), abs(k)), (0, 0)), mode="reflect")
        start = abs(k) - k
        return padded[start:start + x.shape[0]].copy()


@dataclass(frozen=True)
class BaselineJump:
    """Add ``amplitude`` g to one axis from sample ``index`` onwards."""

    amplitude: float = 0.1
    index: int = 150
    axis: int = 0
    kind = "baseline_jump"

    def validate(self):
        if not 0 <= self.index <= WINDOW_SAMPLES:
            raise ParameterOutOfRange(f"jump index must be in [0, {WINDOW_SAMPLES}], got {self.index}")
        if self.axis not in (0, 1, 2):
            raise ParameterOutOfRange(f"axis must be 0, 1 or 2, got {self.axis}")
        if not np.isfinite(self.amplitude) or abs(self.amplitude) > 16:
            raise ParameterOutOfRange(f"jump amplitude out of range: {self.amplitude}")

    def transform(self, x, rng):
        out = x.copy()
        out[self.index:, self.axis] += self.amplitude
        return out


@dataclass(frozen=True)
class BaselineWander:
    """Add an independent-phase sinusoid of common amplitude/period to each axis."""

    amplitude: float = 0.1
    period_s: float = 10.0
    phases: tuple = (0.0, 0.0, 0.0)
    kind = "baseline_wander"

    def validate(self):
        if not 0 <= self.amplitude <= 16:
            raise ParameterOutOfRange(f"wander amplitude out of range: {self.amplitude}")
        if not self.period_s > 0:
            raise ParameterOutOfRange(f"wander period must be positive, got {self.period_s}")
        if len(self.phases) != 3:
            raise ParameterOutOfRange("wander needs one phase per axis")

    def transform(self, x, rng):
        t = np.arange(x.shape[0]) / TARGET_RATE_HZ
        arg = 2 * np.pi * t[:, None] / self.period_s + np.asarray(self.phases)[None, :]
        return x + self.amplitude * np.sin(arg)


@dataclass(frozen=True)
class Rotate:
    """Rotate every sample by ``angle`` radians.

    ``planar`` turns counter-clockwise about z, so (1, 0, 0) -> (0, 1, 0) for
    angle pi/2. ``3-axis`` rotates about the unit vector ``axis``.
    """

    angle: float = 0.0
    mode: str = "planar"
    axis: tuple = (0.0, 0.0, 1.0)
    kind = "rotate"

    def validate(self):
        if self.mode not in ("planar", "3-axis"):
            raise ParameterOutOfRange(f"rotation mode must be planar or 3-axis, got {self.mode!r}")
        if not np.isfinite(self.angle):
            raise ParameterOutOfRange("rotation angle must be finite")
        if self.mode == "3-axis" and not np.linalg.norm(self.axis) > 0:
            raise ParameterOutOfRange("rotation axis must be nonzero")

    def matrix(self) -> np.ndarray:
        if self.mode == "planar":
            c, s = np.cos(self.angle), np.sin(self.angle)
            return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        u = np.asarray(self.axis, dtype=np.float64)
        return Rotation.from_rotvec(self.angle * u / np.linalg.norm(u)).as_matrix()

    def transform(self, x, rng):
        return x @ self.matrix().T


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float = 0.01
    kind = "gaussian_noise"

    def validate(self):
        if not 0 <= self.sigma <= 16:
            raise ParameterOutOfRange(f"noise sigma out of range: {self.sigma}")

    def transform(self, x, rng):
        if self.sigma == 0:
            return x.copy()
        return x + rng.normal(0.0, self.sigma, size=x.shape)


AugmentationSpec = Union[MedianSmooth, TimeTranslate, BaselineJump, BaselineWander, Rotate, GaussianNoise]


def augment_array(x: np.ndarray, chain: Sequence[AugmentationSpec], rng_seed) -> np.ndarray:
    """Apply ``chain`` in order to a ``(300, 3)`` array."""
    rng = np.random.default_rng(rng_seed)
    out = np.asarray(x, dtype=np.float64)
    for spec in chain:
        spec.validate()
        out = spec.transform(out, rng)
    return out


def apply_augmentation(spec: AugmentationSpec | Sequence[AugmentationSpec], w: Window, rng_seed) -> Window:
    chain = [spec] if not isinstance(spec, (list, tuple)) else spec
    return replace(w, data=augment_array(w.data, chain, rng_seed))


def _draw(kind: str, rng: np.random.Generator, r: AugmentRanges) -> AugmentationSpec:
    if kind == "median_smooth":
        return MedianSmooth(int(rng.choice(r.median_widths)))
    if kind == "time_translate":
        mag = int(rng.integers(r.translate_min, r.translate_max + 1))
        return TimeTranslate(mag if rng.random() < 0.5 else -mag)
    if kind == "baseline_jump":
        amp = float(rng.uniform(r.jump_min, r.jump_max)) * (1 if rng.random() < 0.5 else -1)
        return BaselineJump(amp, int(rng.integers(0, WINDOW_SAMPLES + 1)), int(rng.integers(0, 3)))
    if kind == "baseline_wander":
        return BaselineWander(
            float(rng.uniform(r.wander_amp_min, r.wander_amp_max)),
            float(rng.uniform(r.wander_period_min, r.wander_period_max)),
            tuple(float(p) for p in rng.uniform(0, 2 * np.pi, size=3)),
        )
    if kind == "rotate":
        angle = float(rng.uniform(0, 2 * np.pi))
        if r.rotation_mode == "3-axis":
            axis = rng.normal(size=3)
            return Rotate(angle, "3-axis", tuple(float(v) for v in axis / np.linalg.norm(axis)))
        return Rotate(angle)
    if kind == "gaussian_noise":
        return GaussianNoise(float(rng.uniform(r.noise_min, r.noise_max)))
    raise ParameterOutOfRange(f"unknown augmentation kind {kind!r}")


def sample_augmentation_chain(rng_seed, ranges: AugmentRanges | None = None) -> list[AugmentationSpec]:
    """Draw 1..max_chain distinct augmentation kinds with random parameters."""
    r = ranges or AugmentRanges()
    rng = np.random.default_rng(rng_seed)
    length = int(rng.integers(1, r.max_chain + 1))
    kinds = rng.choice(len(KINDS), size=length, replace=False)
    return [_draw(KINDS[k], rng, r) for k in kinds]


def in_sampling_range(spec: AugmentationSpec, r: AugmentRanges | None = None) -> bool:
    r = r or AugmentRanges()
    if isinstance(spec, MedianSmooth):
        return spec.width in r.median_widths
    if isinstance(spec, TimeTranslate):
        return r.translate_min <= abs(spec.offset) <= r.translate_max
    if isinstance(spec, BaselineJump):
        return r.jump_min <= abs(spec.amplitude) <= r.jump_max and 0 <= spec.index <= WINDOW_SAMPLES
    if isinstance(spec, BaselineWander):
        return (r.wander_amp_min <= spec.amplitude <= r.wander_amp_max
                and r.wander_period_min <= spec.period_s <= r.wander_period_max
                and all(0 <= p < 2 * np.pi for p in spec.phases))
    if isinstance(spec, Rotate):
        return 0 <= spec.angle < 2 * np.pi
    if isinstance(spec, GaussianNoise):
        return r.noise_min <= spec.sigma <= r.noise_max
    return False
