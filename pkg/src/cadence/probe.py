"""Frozen-encoder embeddings and the label-efficient linear-probe protocol.

For every ``n`` and repeat a fresh random 75:25 split of the windows is
drawn, ``n`` training windows per class are sampled with replacement, a
multinomial logistic regression is fitted and its test accuracy recorded.
All feature sources share the same splits and subsets for a given seed, so
embedding and baseline curves are paired comparisons.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax

from .errors import MissingClass, NonFiniteFeature, SchemaMismatch, SingleClass
from .signal_core import NULL_ACTIVITY, Window, baseline_feature_matrix, stack_windows

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingSeries:
    subject_ids: list
    start_ms: np.ndarray
    vectors: np.ndarray
    labels: list

    def __post_init__(self):
        self.start_ms = np.asarray(self.start_ms, dtype=np.float64)
        self.vectors = np.asarray(self.vectors)
        self.subject_ids = list(self.subject_ids)
        self.labels = list(self.labels)
        n = len(self.subject_ids)
        if not (self.vectors.shape[0] == n == len(self.start_ms) == len(self.labels)):
            raise SchemaMismatch("embedding series fields have different lengths")

    def __len__(self) -> int:
        return len(self.subject_ids)

    def subset(self, mask) -> "EmbeddingSeries":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return EmbeddingSeries([self.subject_ids[i] for i in idx], self.start_ms[idx],
                               self.vectors[idx], [self.labels[i] for i in idx])

    def by_subject(self) -> dict:
        out: dict = {}
        for i, s in enumerate(self.subject_ids):
            out.setdefault(s, []).append(i)
        return {s: self.subset(np.array(sorted(ix, key=lambda j: self.start_ms[j]))) for s, ix in out.items()}


def embed_windows(checkpoint, windows: Sequence[Window], chunk: int = 256) -> EmbeddingSeries:
    x = stack_windows(windows, np.float32)
    vecs = checkpoint.embed(x, chunk) if len(windows) else np.zeros((0, checkpoint.model.embed_dim), np.float32)
    return EmbeddingSeries([w.subject_id for w in windows], [w.start_time for w in windows],
                           vecs, [w.label for w in windows])


def baseline_series(windows: Sequence[Window]) -> EmbeddingSeries:
    return EmbeddingSeries([w.subject_id for w in windows], [w.start_time for w in windows],
                           baseline_feature_matrix(stack_windows(windows)), [w.label for w in windows])


# ---------------------------------------------------------------------------
# embeddings file: "<count> <dim>\n" then count*dim little-endian float32,
# plus a sidecar CSV <path>.csv with subject_id,start_ms,label


def write_embeddings(series: EmbeddingSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vecs = np.ascontiguousarray(series.vectors, dtype="<f4")
    count, dim = vecs.shape if vecs.ndim == 2 else (0, 0)
    with open(path, "wb") as fh:
        fh.write(f"{count} {dim}\n".encode())
        fh.write(vecs.tobytes())
    with open(sidecar_path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "start_ms", "label"])
        for s, t, lab in zip(series.subject_ids, series.start_ms, series.labels):
            writer.writerow([s, f"{t:.3f}", "" if lab is None else lab])
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".csv")


def read_embeddings(path) -> EmbeddingSeries:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    try:
        count, dim = (int(v) for v in raw[:nl].split())
    except ValueError:
        raise SchemaMismatch(f"{path}: bad embeddings header") from None
    body = raw[nl + 1:]
    if len(body) != count * dim * 4:
        raise SchemaMismatch(f"{path}: expected {count * dim * 4} payload bytes, found {len(body)}")
    vecs = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float32)
    subjects, starts, labels = [], [], []
    with open(sidecar_path(path), newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["subject_id", "start_ms", "label"]:
            raise SchemaMismatch(f"{sidecar_path(path)}: bad header")
        for row in reader:
            subjects.append(row[0])
            starts.append(float(row[1]))
            labels.append(row[2] or None)
    if len(subjects) != count:
        raise SchemaMismatch(f"{path}: sidecar has {len(subjects)} rows for {count} vectors")
    return EmbeddingSeries(subjects, np.array(starts), vecs, labels)


# ---------------------------------------------------------------------------
# probe


@dataclass
class ProbeConfig:
    n_values: tuple = (1, 5, 10, 15, 25, 50)
    repeats: int = 10
    train_fraction: float = 0.75
    C: float = 1.0
    seed: int = 0
    sources: tuple = ("embedding", "baseline")

    def __post_init__(self):
        if any(n < 1 for n in self.n_values):
            raise ValueError("every n must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1")

    @classmethod
    def from_config(cls, cfg: dict) -> "ProbeConfig":
        from .config import get_list
        return cls(
            n_values=tuple(get_list(cfg, "probe.n_values")) if "probe.n_values" in cfg else cls.n_values,
            repeats=int(cfg.get("probe.repeats", cls.repeats)),
            train_fraction=float(cfg.get("probe.train_fraction", cls.train_fraction)),
            C=float(cfg.get("probe.C", cls.C)),
            seed=int(cfg.get("probe.seed", cls.seed)),
        )


class LinearProbe:
    """Multinomial logistic regression, ``0.5*||W||^2 + C * sum(CE)``.

    The intercept is not penalised. Optimised with L-BFGS on the exact
    objective gradient.
    """

    def __init__(self, C: float = 1.0, max_iter: int = 2000, tol: float = 1e-10):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol

    def _objective(self, theta, x, y_onehot):
        k = y_onehot.shape[1]
        d = x.shape[1]
        w = theta[: d * k].reshape(d, k)
        b = theta[d * k:]
        logp = log_softmax(x @ w + b, axis=1)
        loss = 0.5 * np.sum(w * w) - self.C * np.sum(y_onehot * logp)
        resid = self.C * (np.exp(logp) - y_onehot)
        grad = np.concatenate([(w + x.T @ resid).ravel(), resid.sum(axis=0)])
        return loss, grad

    def fit(self, x: np.ndarray, y: Sequence) -> "LinearProbe":
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NonFiniteFeature("probe features contain non-finite values")
        self.classes_, yi = np.unique(np.asarray(y, dtype=object).astype(str), return_inverse=True)
        if len(self.classes_) < 2:
            raise SingleClass(f"need at least two classes, got {list(self.classes_)}")
        k, d = len(self.classes_), x.shape[1]
        onehot = np.eye(k)[yi]
        res = minimize(self._objective, np.zeros(d * k + k), args=(x, onehot), jac=True,
                       method="L-BFGS-B", options={"maxiter": self.max_iter, "gtol": self.tol, "ftol": 1e-15})
        self.coef_ = res.x[: d * k].reshape(d, k)
        self.intercept_ = res.x[d * k:]
        self.converged_ = bool(res.success)
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.coef_ + self.intercept_

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(x), axis=1)]

    def score(self, x, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y, dtype=object).astype(str)))


def fit_linear_probe(features: np.ndarray, labels: Sequence, C: float = 1.0) -> LinearProbe:
    return LinearProbe(C=C).fit(features, labels)


def sample_label_subset(labels: Sequence, n: int, rng_seed, classes: Optional[Sequence] = None) -> np.ndarray:
    """Indices of ``n`` draws per class, with replacement, in class order."""
    labels = np.asarray(labels, dtype=object).astype(str)
    classes = sorted(set(labels)) if classes is None else list(classes)
    rng = np.random.default_rng(rng_seed)
    picks = []
    for c in classes:
        pool = np.flatnonzero(labels == str(c))
        if pool.size == 0:
            raise MissingClass(c)
        picks.append(rng.choice(pool, size=n, replace=True))
    return np.concatenate(picks) if picks else np.zeros(0, dtype=int)


@dataclass
class AccuracyReport:
    records: list = field(default_factory=list)  # (source, n, repeat, accuracy)
    class_counts: dict = field(default_factory=dict)
    full_split: dict = field(default_factory=dict)  # source -> list of accuracies

    def accuracies(self, source: str, n: int) -> np.ndarray:
        return np.array([a for s, m, _, a in self.records if s == source and m == n])

    def summary(self) -> dict:
        """``(source, n) -> (mean, std, repeats)``; the interval is mean +- 1 std."""
        out = {}
        for s, n in sorted({(s, n) for s, n, _, _ in self.records}):
            acc = self.accuracies(s, n)
            out[(s, n)] = (float(acc.mean()), float(acc.std()), int(acc.size))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["source", "n", "repeat", "accuracy"])
            for s, n, r, a in self.records:
                writer.writerow([s, n, r, repr(float(a))])
            for s, accs in self.full_split.items():
                for r, a in enumerate(accs):
                    writer.writerow([s, "all", r, repr(float(a))])


def _scaler(reference: np.ndarray):
    mu = reference.mean(axis=0)
    sd = reference.std(axis=0)
    sd[sd == 0] = 1.0
    return lambda a: (a - mu) / sd


def label_efficiency_curve(features: dict, labels: Sequence, cfg: ProbeConfig,
                           standardise: Sequence[str] = ("baseline",), full_split: bool = False) -> AccuracyReport:
    """Run the probe protocol for every feature source in ``features``.

    ``features`` maps a source name to an ``(N, F)`` matrix aligned with
    ``labels``. Rows labelled ``null`` or ``None`` are dropped first. Sources
    named in ``standardise`` are z-scored with training-split statistics.
    """
    labels = np.array(["" if v is None else str(v) for v in labels], dtype=object)
    keep = (labels != "") & (labels != NULL_ACTIVITY)
    labels = labels[keep]
    feats = {k: np.asarray(v, dtype=np.float64)[keep] for k, v in features.items()}
    classes = sorted(set(labels))
    n_total = labels.size
    n_train = int(round(cfg.train_fraction * n_total))
    report = AccuracyReport(class_counts={c: int(np.sum(labels == c)) for c in classes})

    def split(key):
        perm = np.random.default_rng([cfg.seed, *key]).permutation(n_total)
        return perm[:n_train], perm[n_train:]

    for n in cfg.n_values:
        for r in range(cfg.repeats):
            tr, te = split((n, r))
            sub = tr[sample_label_subset(labels[tr], n, [cfg.seed, n, r, 1], classes)]
            for source, x in feats.items():
                xtr, xte = x[sub], x[te]
                if source in standardise:
                    scale = _scaler(x[tr])
                    xtr, xte = scale(xtr), scale(xte)
                probe = fit_linear_probe(xtr, labels[sub], cfg.C)
                report.records.append((source, n, r, probe.score(xte, labels[te])))
    if full_split:
        for r in range(cfg.repeats):
            tr, te = split((0, r))
            for source, x in feats.items():
                xtr, xte = x[tr], x[te]
                if source in standardise:
                    scale = _scaler(xtr)
                    xtr, xte = scale(xtr), scale(xte)
                acc = fit_linear_probe(xtr, labels[tr], cfg.C).score(xte, labels[te])
                report.full_split.setdefault(source, []).append(acc)
    return report
