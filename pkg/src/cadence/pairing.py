"""Coincident pair sampling and the (2b)x(2b) label/weight matrices of a batch.

Positions ``2i`` and ``2i+1`` of a batch hold the two halves of pair ``i``.
Every other off-diagonal combination is treated as a negative, which is only
a sound approximation when windows come from a large shuffled corpus with far
more windows per subject than ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import AugmentRanges, augment_array, sample_augmentation_chain
from .errors import EmptyDataset, WrongPairCount
from .signal_core import WINDOW_MS, WINDOW_SAMPLES, Window

TEMPORAL = "temporal"
AUGMENTATION = "augmentation"


@dataclass(frozen=True)
class PairingConfig:
    delta_t_s: float = 60.0
    mode_mix: float = 0.5  # probability of a temporal pair
    batch_b: int = 128

    def __post_init__(self):
        if self.delta_t_s < WINDOW_MS / 1000:
            raise ValueError(f"delta_t_s must be >= {WINDOW_MS / 1000}, got {self.delta_t_s}")
        if not 0.0 <= self.mode_mix <= 1.0:
            raise ValueError(f"mode_mix must lie in [0, 1], got {self.mode_mix}")
        if self.batch_b < 1:
            raise ValueError(f"batch_b must be >= 1, got {self.batch_b}")

    @classmethod
    def from_config(cls, cfg: dict) -> "PairingConfig":
        return cls(
            delta_t_s=float(cfg.get("pairing.delta_t_s", cls.delta_t_s)),
            mode_mix=float(cfg.get("pairing.mode_mix", cls.mode_mix)),
            batch_b=int(cfg.get("pairing.batch_b", cls.batch_b)),
        )


class WindowIndex:
    """Unlabelled windows grouped by subject and sorted by time.

    Only subject, start time and samples are held; activity labels never
    enter training.
    """

    def __init__(self, data: np.ndarray, subjects: Sequence[str], start_ms: Sequence[float]):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3 or data.shape[1:] != (WINDOW_SAMPLES, 3):
            raise ValueError(f"window data must be (N, {WINDOW_SAMPLES}, 3), got {data.shape}")
        subjects = np.asarray(subjects, dtype=object)
        start_ms = np.asarray(start_ms, dtype=np.float64)
        order = np.lexsort((start_ms, subjects.astype(str)))
        self.data = np.ascontiguousarray(data[order])
        self.subjects = subjects[order]
        self.start_ms = start_ms[order]
        codes, self.subject_code = np.unique(self.subjects.astype(str), return_inverse=True)
        self.subject_names = list(codes)
        bounds = np.searchsorted(self.subject_code, np.arange(len(codes) + 1))
        self._bounds = bounds

    @classmethod
    def from_windows(cls, windows: Sequence[Window]) -> "WindowIndex":
        if not windows:
            return cls(np.zeros((0, WINDOW_SAMPLES, 3)), [], [])
        return cls(np.stack([w.data for w in windows]), [w.subject_id for w in windows],
                   [w.start_time for w in windows])

    def __len__(self) -> int:
        return self.data.shape[0]

    def window(self, i: int) -> Window:
        return Window(str(self.subjects[i]), float(self.start_ms[i]), self.data[i].astype(np.float64))

    def neighbours(self, i: int, delta_t_s: float) -> np.ndarray:
        """Indices of other windows of the same subject within ``delta_t_s``."""
        d = delta_t_s * 1000.0
        code = self.subject_code[i]
        s0, s1 = self._bounds[code], self._bounds[code + 1]
        times = self.start_ms[s0:s1]
        lo = s0 + np.searchsorted(times, self.start_ms[i] - d, side="left")
        hi = s0 + np.searchsorted(times, self.start_ms[i] + d, side="right")
        cand = np.arange(lo, hi)
        return cand[cand != i]


def sample_coincident_pair(index: WindowIndex, cfg: PairingConfig, rng_seed,
                           ranges: AugmentRanges | None = None, anchor: int | None = None):
    """Return ``(anchor_window, partner_window, mode)``.

    Temporal mode picks a partner uniformly among same-subject windows within
    ``delta_t_s``; if none exists the pair falls back to augmentation mode.
    """
    a, p, mode = _sample_pair_arrays(index, cfg, np.random.default_rng(rng_seed), ranges, anchor)
    left = Window(str(index.subjects[a]), float(index.start_ms[a]), index.data[a].astype(np.float64))
    if mode == TEMPORAL:
        right = index.window(p)
    else:
        right = Window(left.subject_id, left.start_time, p)
    return left, right, mode


def _sample_pair_arrays(index: WindowIndex, cfg: PairingConfig, rng: np.random.Generator,
                        ranges: AugmentRanges | None, anchor: int | None = None):
    if len(index) == 0:
        raise EmptyDataset("window index is empty")
    a = int(rng.integers(len(index))) if anchor is None else int(anchor)
    want_temporal = rng.random() < cfg.mode_mix
    if want_temporal:
        nb = index.neighbours(a, cfg.delta_t_s)
        if nb.size:
            return a, int(nb[rng.integers(nb.size)]), TEMPORAL
    chain = sample_augmentation_chain(rng.integers(2**63), ranges)
    partner = augment_array(index.data[a], chain, rng.integers(2**63))
    return a, partner, AUGMENTATION


def sample_pair_data(index: WindowIndex, cfg: PairingConfig, b: int, rng_seed,
                     ranges: AugmentRanges | None = None) -> tuple[np.ndarray, list[str]]:
    """Draw ``b`` pairs and stack them as ``(2b, 300, 3)`` float32 in pair order."""
    rng = np.random.default_rng(rng_seed)
    out = np.empty((2 * b, WINDOW_SAMPLES, 3), dtype=np.float32)
    modes = []
    for i in range(b):
        a, p, mode = _sample_pair_arrays(index, cfg, rng, ranges)
        out[2 * i] = index.data[a]
        out[2 * i + 1] = index.data[p] if mode == TEMPORAL else p
        modes.append(mode)
    return out, modes


@dataclass
class PairBatch:
    windows: np.ndarray  # (2b, 300, 3)
    labels: np.ndarray  # (2b, 2b) 0/1
    weights: np.ndarray  # (2b, 2b)

    @property
    def b(self) -> int:
        return self.labels.shape[0] // 2


def pair_matrices(b: int) -> tuple[np.ndarray, np.ndarray]:
    """Coincidence labels and loss weights for ``b`` stacked pairs.

    Diagonal (identity) entries are labelled 1 with weight 0; the two
    orderings of each coincident pair get label 1, weight 1; all remaining
    entries are negatives with weight ``1 / (2b - 2)``.
    """
    if b < 1:
        raise WrongPairCount(f"need at least one pair, got {b}")
    n = 2 * b
    idx = np.arange(n)
    partner = idx ^ 1
    labels = np.zeros((n, n), dtype=np.int8)
    labels[idx, idx] = 1
    labels[idx, partner] = 1
    neg_w = 1.0 / (n - 2) if n > 2 else 0.0
    weights = np.full((n, n), neg_w)
    weights[idx, partner] = 1.0
    weights[idx, idx] = 0.0
    return labels, weights


def build_pair_batch(pairs: Sequence[tuple], b: int | None = None) -> PairBatch:
    """Stack ``b`` (window, window) pairs into a :class:`PairBatch`."""
    if b is not None and len(pairs) != b:
        raise WrongPairCount(f"expected {b} pairs, got {len(pairs)}")
    if not pairs:
        raise WrongPairCount("need at least one pair")
    rows = []
    for pair in pairs:
        for w in pair[:2]:
            rows.append(w.data if isinstance(w, Window) else np.asarray(w))
    labels, weights = pair_matrices(len(pairs))
    return PairBatch(np.stack(rows), labels, weights)


def pair_category_counts(labels: np.ndarray, weights: np.ndarray) -> dict:
    n = labels.shape[0]
    diag = np.eye(n, dtype=bool)
    positive = (labels == 1) & ~diag
    negative = (labels == 0) & ~diag
    return {
        "entries": int(labels.size),
        "identity": int(diag.sum()),
        "positive": int(positive.sum()),
        "negative": int(negative.sum()),
        "identity_weight_sum": float(weights[diag].sum()),
    }
