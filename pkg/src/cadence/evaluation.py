"""Event- and window-level precision/recall of predicted segments against
labelled intervals, plus the salient-window filter.

A predicted segment is *pure* when all labelled time it overlaps carries one
single activity name. ``null`` counts as an activity name here, so a segment
spanning walking and null time is impure while one lying wholly inside null
time is pure; a segment touching no labelled time at all is impure. Event
recall counts each non-null labelled interval once if any prediction
overlaps it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .signal_core import NULL_ACTIVITY, WINDOW_MS, LabeledInterval


@dataclass
class MetricRow:
    activity: str
    event_precision: Optional[float]
    event_recall: Optional[float]
    window_precision: Optional[float]
    window_recall: Optional[float]


@dataclass
class SegEvalReport:
    overall: MetricRow
    per_activity: list = field(default_factory=list)

    def write_csv(self, path):
        def fmt(v):
            return "" if v is None else repr(float(v))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["activity", "event_precision", "event_recall", "window_precision", "window_recall"])
            for row in [self.overall, *self.per_activity]:
                w.writerow([row.activity, fmt(row.event_precision), fmt(row.event_recall),
                            fmt(row.window_precision), fmt(row.window_recall)])


def _span(seg) -> tuple[float, float]:
    if hasattr(seg, "start_time"):
        return float(seg.start_time), float(seg.end_time)
    return float(seg[0]), float(seg[1])


def _overlap(a0, a1, b0, b1) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _activities_in(s0, s1, truth: Sequence[LabeledInterval]) -> dict:
    """Activity -> overlapped duration inside ``[s0, s1)``."""
    out: dict = {}
    for iv in truth:
        ov = _overlap(s0, s1, iv.start_time, iv.end_time)
        if ov > 0:
            out[iv.activity] = out.get(iv.activity, 0.0) + ov
    return out


def is_pure(seg, truth: Sequence[LabeledInterval]) -> bool:
    acts = _activities_in(*_span(seg), truth)
    return len(acts) == 1


def majority_activity(seg, truth: Sequence[LabeledInterval]) -> Optional[str]:
    acts = _activities_in(*_span(seg), truth)
    if not acts:
        return None
    return max(sorted(acts), key=lambda a: acts[a])


@dataclass
class _Counts:
    n_pred: int = 0
    n_pure: int = 0
    n_events: int = 0
    n_hit: int = 0
    dur_pred: float = 0.0
    dur_pure: float = 0.0
    dur_truth: float = 0.0
    dur_covered: float = 0.0

    def add(self, other: "_Counts"):
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def row(self, name: str) -> MetricRow:
        div = lambda a, b: (a / b) if b else None  # noqa: E731
        return MetricRow(name, div(self.n_pure, self.n_pred), div(self.n_hit, self.n_events),
                         div(self.dur_pure, self.dur_pred), div(self.dur_covered, self.dur_truth))


def _counts(pred: Sequence, truth: Sequence[LabeledInterval], activity: Optional[str] = None) -> _Counts:
    c = _Counts()
    spans = [_span(p) for p in pred]
    for p, (s0, s1) in zip(pred, spans):
        if activity is not None and majority_activity((s0, s1), truth) != activity:
            continue
        c.n_pred += 1
        c.dur_pred += s1 - s0
        if is_pure((s0, s1), truth):
            c.n_pure += 1
            c.dur_pure += s1 - s0
    for iv in truth:
        if iv.activity == NULL_ACTIVITY or (activity is not None and iv.activity != activity):
            continue
        c.n_events += 1
        c.dur_truth += iv.duration
        covered = _union_overlap(iv.start_time, iv.end_time, spans)
        c.dur_covered += covered
        if covered > 0:
            c.n_hit += 1
    return c


def _union_overlap(a0: float, a1: float, spans: Iterable[tuple[float, float]]) -> float:
    clipped = sorted((max(a0, s0), min(a1, s1)) for s0, s1 in spans if min(a1, s1) > max(a0, s0))
    total, cur0, cur1 = 0.0, None, None
    for s0, s1 in clipped:
        if cur1 is None or s0 > cur1:
            if cur1 is not None:
                total += cur1 - cur0
            cur0, cur1 = s0, s1
        else:
            cur1 = max(cur1, s1)
    if cur1 is not None:
        total += cur1 - cur0
    return total


def event_metrics(pred: Sequence, truth: Sequence[LabeledInterval]) -> tuple[Optional[float], Optional[float]]:
    """``(precision, recall)``; ``None`` where the denominator is empty."""
    r = _counts(pred, truth).row("all")
    return r.event_precision, r.event_recall


def window_metrics(pred: Sequence, truth: Sequence[LabeledInterval]) -> tuple[Optional[float], Optional[float]]:
    r = _counts(pred, truth).row("all")
    return r.window_precision, r.window_recall


def evaluate_segmentation(pred_by_subject: dict, truth_by_subject: dict) -> SegEvalReport:
    """Pool counts over subjects; one row overall plus one per non-null activity."""
    subjects = sorted(set(pred_by_subject) | set(truth_by_subject))
    total = _Counts()
    activities = sorted({iv.activity for ivs in truth_by_subject.values() for iv in ivs} - {NULL_ACTIVITY})
    per = {a: _Counts() for a in activities}
    for s in subjects:
        pred = pred_by_subject.get(s, [])
        truth = truth_by_subject.get(s, [])
        total.add(_counts(pred, truth))
        for a in activities:
            per[a].add(_counts(pred, truth, a))
    return SegEvalReport(total.row("all"), [per[a].row(a) for a in activities])


def group_segments(segments: Iterable) -> dict:
    out: dict = {}
    for seg in segments:
        out.setdefault(seg.subject_id, []).append(seg)
    return out


def salient_mask(subject_ids: Sequence[str], start_ms: Sequence[float], segments: Sequence) -> np.ndarray:
    """True for windows lying fully inside a segment of the same subject."""
    start_ms = np.asarray(start_ms, dtype=np.float64)
    mask = np.zeros(start_ms.shape[0], dtype=bool)
    subjects = np.asarray(subject_ids, dtype=object)
    for seg in segments:
        s0, s1 = _span(seg)
        sel = (subjects == seg.subject_id) if hasattr(seg, "subject_id") else np.ones_like(mask)
        mask |= sel & (start_ms >= s0) & (start_ms + WINDOW_MS <= s1)
    return mask


def salient_filter(windows, segments: Sequence):
    """Keep only windows (or embedding records) fully inside a salient segment."""
    if hasattr(windows, "vectors"):
        return windows.subset(salient_mask(windows.subject_ids, windows.start_ms, segments))
    windows = list(windows)
    mask = salient_mask([w.subject_id for w in windows], [w.start_time for w in windows], segments)
    return [w for w, keep in zip(windows, mask) if keep]
