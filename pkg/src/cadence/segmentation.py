"""Unsupervised salient-activity segmentation of an embedding time series.

A block of at most 180 consecutive window embeddings is turned into a
cosine-similarity matrix. For a candidate segment ``[s, e)`` with a
neighbourhood of ``min((e - s) // 2, 30)`` windows on each side (clipped at
the block edges) the salience is

    mean(sim(seg)) - mean(sim(seg + nb)) - 2 * std(sim(seg))

where ``sim(X)`` is the multiset of similarities over unordered pairs of
distinct windows in ``X`` and ``std`` is the population standard deviation.
Segments with positive salience are kept and overlaps are resolved greedily
in order of decreasing salience.

Rectangle sums over ``S - 1`` and ``(S - 1)^2`` come from extended-precision
2-D prefix sums, so each proposal costs O(1). Shifting by one keeps the
coherent (near 1) similarities close to zero, where the variance formula
loses the least precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OutOfBounds, ZeroVector
from .signal_core import WINDOW_MS

logger = logging.getLogger(__name__)

BLOCK_WINDOWS = 180
MIN_SEGMENT_WINDOWS = 3
MAX_NEIGHBOURHOOD = 30
MIN_BLOCK_WINDOWS = 6


class SimilarityBlock:
    """Cosine similarities of up to 180 embeddings with O(1) square-block statistics."""

    def __init__(self, embeddings: np.ndarray):
        e = np.asarray(embeddings, dtype=np.float64)
        if e.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("embeddings must be finite")
        norms = np.linalg.norm(e, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ZeroVector(int(zero[0]))
        u = e / norms[:, None]
        s = u @ u.T
        s = 0.5 * (s + s.T)
        np.fill_diagonal(s, 1.0)
        self.embeddings = e
        self.S = s
        shifted = (s - 1.0).astype(np.longdouble)
        self._p1 = _prefix2d(shifted)
        self._p2 = _prefix2d(shifted * shifted)

    def __len__(self) -> int:
        return self.S.shape[0]

    def rect_sum(self, r0: int, r1: int, c0: int, c1: int, squared: bool = False) -> float:
        """Sum of ``S[r0:r1, c0:c1]`` (or of its elementwise square)."""
        p = self._p2 if squared else self._p1
        shifted = p[r1, c1] - p[r0, c1] - p[r1, c0] + p[r0, c0]
        n = (r1 - r0) * (c1 - c0)
        if squared:
            # sum (t + 1)^2 = sum t^2 + 2 sum t + n
            lin = self._p1[r1, c1] - self._p1[r0, c1] - self._p1[r1, c0] + self._p1[r0, c0]
            return float(shifted + 2 * lin + n)
        return float(shifted + n)

    def pair_stats(self, start, end):
        """Mean and population std of similarities over distinct pairs in ``[start, end)``.

        Accepts scalars or equal-shaped integer arrays.
        """
        start = np.asarray(start)
        end = np.asarray(end)
        n = (end - start).astype(np.float64)
        pairs = n * (n - 1) / 2
        p1, p2 = self._p1, self._p2
        # the shifted diagonal is exactly zero, so the square sum is twice the pair sum
        t1 = (p1[end, end] - p1[start, end] - p1[end, start] + p1[start, start]) / 2
        t2 = (p2[end, end] - p2[start, end] - p2[end, start] + p2[start, start]) / 2
        with np.errstate(invalid="ignore", divide="ignore"):
            m = t1 / pairs
            var = t2 / pairs - m * m
        # a single pair has no spread; the rounding residue would otherwise
        # surface as a spurious ~1e-8 std after the square root
        var = np.where(pairs <= 1, 0, np.maximum(var, 0))
        mean = (1.0 + m).astype(np.float64)
        std = np.sqrt(var).astype(np.float64)
        return mean, std


def _prefix2d(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=a.dtype)
    out[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    return out


def similarity_block(embeddings: np.ndarray) -> SimilarityBlock:
    return SimilarityBlock(embeddings)


@dataclass(frozen=True)
class SegmentProposal:
    start: int
    end: int
    nb_before: int
    nb_after: int
    salience: float

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SalientSegment:
    subject_id: str
    start_time: float
    end_time: float
    salience: float
    start_index: int = -1
    end_index: int = -1


def neighbourhood(start, end, width: int, max_nb: int = MAX_NEIGHBOURHOOD):
    """Clipped neighbourhood extents ``(before, after)`` of ``[start, end)``."""
    start = np.asarray(start)
    end = np.asarray(end)
    nb = np.minimum((end - start) // 2, max_nb)
    before = np.minimum(nb, start)
    after = np.minimum(nb, width - end)
    return before, after


def salience(block: SimilarityBlock, start, end, max_nb: int = MAX_NEIGHBOURHOOD):
    """Salience of ``[start, end)`` within ``block`` (scalar or vectorised)."""
    s = np.asarray(start)
    e = np.asarray(end)
    w = len(block)
    if np.any(s < 0) or np.any(e > w) or np.any(e - s < 2):
        raise OutOfBounds(f"segment outside block of {w} windows or shorter than 2")
    before, after = neighbourhood(s, e, w, max_nb)
    seg_mean, seg_std = block.pair_stats(s, e)
    union_mean, _ = block.pair_stats(s - before, e + after)
    out = seg_mean - union_mean - 2 * seg_std
    return float(out) if out.ndim == 0 else out


def boundary_pairs(width: int) -> tuple[np.ndarray, np.ndarray]:
    """Every ``(first, last)`` window pair with ``first < last`` as half-open ``[first, last + 1)``."""
    first, last = np.triu_indices(width, k=1)
    return first, last + 1


def propose_segments(block: SimilarityBlock, min_len: int = MIN_SEGMENT_WINDOWS,
                     max_nb: int = MAX_NEIGHBOURHOOD) -> list[SegmentProposal]:
    """All proposals of at least ``min_len`` windows with strictly positive salience."""
    w = len(block)
    if w < 2:
        return []
    start, end = boundary_pairs(w)
    keep = end - start >= min_len
    start, end = start[keep], end[keep]
    if start.size == 0:
        return []
    sal = salience(block, start, end, max_nb)
    before, after = neighbourhood(start, end, w, max_nb)
    ok = np.flatnonzero(sal > 0)
    return [SegmentProposal(int(start[i]), int(end[i]), int(before[i]), int(after[i]), float(sal[i])) for i in ok]


def suppress_overlaps(proposals: Sequence, min_len: int = MIN_SEGMENT_WINDOWS) -> list[tuple[int, int, float]]:
    """Resolve overlaps into disjoint ``(start, end, salience)`` intervals.

    Candidates are visited by decreasing salience. A candidate overlapping an
    accepted interval by more than half of the shorter of the two is merged
    into it (union, clipped against the other accepted intervals, keeping the
    higher salience); otherwise overlapped parts are cut from the candidate.
    Pieces shorter than ``min_len`` are dropped.
    """
    items = [(p.start, p.end, p.salience) if isinstance(p, SegmentProposal) else tuple(p) for p in proposals]
    items.sort(key=lambda t: (-t[2], t[0], t[1]))
    kept: list[list] = []  # [start, end, salience]
    for s, e, sal in items:
        overlaps = []
        for k, (ks, ke, _) in enumerate(kept):
            ov = min(e, ke) - max(s, ks)
            if ov > 0:
                overlaps.append((ov / min(e - s, ke - ks), k))
        if not overlaps:
            if e - s >= min_len:
                kept.append([s, e, sal])
            continue
        frac, k = max(overlaps, key=lambda t: (t[0], -t[1]))
        if frac > 0.5:
            ks, ke, ksal = kept[k]
            ns, ne = min(s, ks), max(e, ke)
            for j, (js, je, _) in enumerate(kept):
                if j == k or je <= ns or js >= ne:
                    continue
                if je <= ks:
                    ns = max(ns, je)
                else:
                    ne = min(ne, js)
            kept[k] = [ns, ne, max(ksal, sal)]
            continue
        for _, k in overlaps:
            ks, ke, _ = kept[k]
            if ks <= s:
                s = max(s, ke)
            else:
                e = min(e, ks)
        if e - s >= min_len:
            kept.append([s, e, sal])
    kept.sort()
    return [(int(s), int(e), float(sal)) for s, e, sal in kept]


def segment_block(embeddings: np.ndarray, min_len: int = MIN_SEGMENT_WINDOWS,
                  max_nb: int = MAX_NEIGHBOURHOOD) -> list[tuple[int, int, float]]:
    block = SimilarityBlock(embeddings)
    return suppress_overlaps(propose_segments(block, min_len, max_nb), min_len)


def segment_timeseries(series, block: int = BLOCK_WINDOWS, min_block: int = MIN_BLOCK_WINDOWS,
                       min_len: int = MIN_SEGMENT_WINDOWS, max_nb: int = MAX_NEIGHBOURHOOD) -> list[SalientSegment]:
    """Segment every subject's time-ordered embeddings block by block.

    ``series`` is an :class:`~cadence.probe.EmbeddingSeries`; labels are
    never read. Trailing blocks shorter than ``min_block`` are skipped and
    segments never cross block seams.
    """
    out: list[SalientSegment] = []
    if len(series) == 0:
        return out
    for subject, sub in sorted(series.by_subject().items()):
        vecs, times = sub.vectors, sub.start_ms
        for b0 in range(0, len(sub), block):
            chunk = vecs[b0:b0 + block]
            if len(chunk) < min_block:
                continue
            for s, e, sal in segment_block(chunk, min_len, max_nb):
                out.append(SalientSegment(subject, float(times[b0 + s]), float(times[b0 + e - 1]) + WINDOW_MS,
                                          sal, b0 + s, b0 + e))
    return out


def write_segments(segments: Sequence[SalientSegment], path):
    with open(path, "w") as fh:
        fh.write("subject_id,start_ms,end_ms,salience\n")
        for seg in segments:
            fh.write(f"{seg.subject_id},{seg.start_time:.3f},{seg.end_time:.3f},{seg.salience!r}\n")


def read_segments(path) -> list[SalientSegment]:
    import csv
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "start_ms", "end_ms", "salience"]:
            from .errors import SchemaMismatch
            raise SchemaMismatch(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(SalientSegment(row["subject_id"], float(row["start_ms"]), float(row["end_ms"]),
                                      float(row["salience"])))
    return out
