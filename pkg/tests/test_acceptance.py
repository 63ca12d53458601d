"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` (lines are also repeated in
the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from cadence import nn, synth, training
from cadence.evaluation import event_metrics, window_metrics
from cadence.ingest import load_dataset
from cadence.pairing import PairingConfig, build_pair_batch, pair_category_counts
from cadence.probe import EmbeddingSeries, ProbeConfig, label_efficiency_curve, write_embeddings
from cadence.segmentation import SimilarityBlock, boundary_pairs, salience, segment_timeseries, write_segments
from cadence.signal_core import (
    LabeledInterval, Window, baseline_feature_matrix, normalize_and_resample, split_windows, stack_windows,
    windows_in_hours,
)

HERE = Path(__file__).parent
RESULTS: dict = {}


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1-6: bookkeeping and oracle identities


def criterion_1():
    t = time.perf_counter()
    b = 128
    pairs = [(Window("s", 0.0, np.zeros((300, 3))), Window("s", 1.0, np.zeros((300, 3))))] * b
    batch = build_pair_batch(pairs, b)
    c = pair_category_counts(batch.labels, batch.weights)
    neg_w = set(batch.weights[batch.labels == 0].tolist())
    ok = ((c["entries"], c["identity"], c["positive"], c["negative"]) == (65_536, 256, 256, 65_024)
          and neg_w == {1 / 254} and 4 * b * b - 4 * b == c["negative"])
    el = time.perf_counter() - t
    return report(1, ok and el < 1, f"entries={c['entries']} identity={c['identity']} positive={c['positive']} "
                                    f"negative={c['negative']} weight={sorted(neg_w)} ({el:.2f}s)")


def _tiny_batch():
    from cadence.pairing import pair_matrices
    x = np.random.default_rng(0).normal(0, 0.5, (4, 300, 3))
    labels, weights = pair_matrices(2)
    return x, labels, weights


def criterion_2():
    t = time.perf_counter()
    cfg = nn.ModelConfig(channels=(8, 16), embed_dim=8, proj_hidden=16)
    params = nn.init_params(cfg, 0, np.float64)
    x, labels, weights = _tiny_batch()
    from cadence.pairing import PairBatch
    batch = PairBatch(x, labels, weights)
    err = nn.gradient_check(params, batch, epsilon=1e-5, max_per_tensor=None, cfg=cfg)

    def corrupted(xx, ll, ww, p, c):
        g = nn.loss_and_grads(xx, ll, ww, p, c)[1]
        g["conv0.w"] = g["conv0.w"] * 1.01
        return g

    bad = nn.gradient_check(params, batch, epsilon=1e-5, max_per_tensor=None, cfg=cfg, grad_fn=corrupted)
    el = time.perf_counter() - t
    return report(2, err < 1e-4 and bad >= 1e-4 and el < 30,
                  f"max rel err {err:.2e}, corrupted {bad:.2e} ({el:.1f}s)")


def criterion_3():
    n = windows_in_hours(42_000)
    return report(3, n == 15_120_000, f"{n:,} windows")


def criterion_4():
    first, _ = boundary_pairs(180)
    return report(4, first.size == 16_110, f"{first.size:,} boundary pairs")


def _brute(unit, s, e, w):
    def stats(lo, hi):
        sub = unit[lo:hi] @ unit[lo:hi].T
        vals = sub[np.triu_indices(hi - lo, k=1)]
        return vals.mean(), vals.std()
    nb = min((e - s) // 2, 30)
    m_seg, sd_seg = stats(s, e)
    m_all, _ = stats(max(0, s - nb), min(w, e + nb))
    return m_seg - m_all - 2 * sd_seg


def criterion_5():
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    worst, checked = 0.0, 0
    for _ in range(100):
        w = int(rng.integers(3, 61))
        emb = rng.normal(size=(w, int(rng.integers(2, 33))))
        if rng.random() < 0.5:  # half the blocks carry a coherent run
            a = int(rng.integers(0, w - 2))
            b = int(rng.integers(a + 2, w + 1))
            emb[a:b] = rng.normal(size=emb.shape[1]) + rng.normal(0, 0.05, (b - a, emb.shape[1]))
        unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        block = SimilarityBlock(emb)
        first, end = boundary_pairs(w)
        keep = end - first >= 3
        fast = salience(block, first[keep], end[keep])
        for s, e, v in zip(first[keep], end[keep], np.atleast_1d(fast)):
            worst = max(worst, abs(v - _brute(unit, int(s), int(e), w)))
            checked += 1
    el = time.perf_counter() - t
    return report(5, worst <= 1e-9 and el < 60, f"{checked} proposals, max |diff| {worst:.1e} ({el:.1f}s)")


def criterion_6():
    u, v = np.eye(2)
    got = salience(SimilarityBlock(np.array([v] * 3 + [u] * 6 + [v] * 3)), 3, 9)
    return report(6, abs(got - 6 / 11) <= 1e-12, f"salience {got!r} vs 6/11 = {6 / 11!r}")


# ---------------------------------------------------------------------------
# 7: synthetic end-to-end representation quality

SEED7 = 1
BATCH7 = 64
TRAIN_SUBJECTS = 14


def run_representation(seed=SEED7):
    """Train on 14 synthetic subjects, embed the 6 held-out ones."""
    t = time.perf_counter()
    corpus = synth.generate_corpus(synth.SynthConfig(classes=3, subjects=20, seed=seed))
    index = training.index_from_recordings(corpus[:TRAIN_SUBJECTS])
    cfg = training.TrainConfig(steps=2000, seed=seed, pairing=PairingConfig(batch_b=BATCH7))
    ckpt, losses = training.train(cfg, index, log_every=0)
    held = [w for rec, ivs in corpus[TRAIN_SUBJECTS:] for w in split_windows(normalize_and_resample(rec), ivs)
            if w.label is not None]
    x = stack_windows(held, np.float32)
    labels = [w.label for w in held]
    emb = ckpt.embed(x)
    untrained = nn.embed_in_chunks(x, nn.init_params(cfg.model, [seed, 0], np.float32), cfg.model)
    feats = {"embedding": emb, "untrained": untrained, "baseline": baseline_feature_matrix(x)}
    rep = label_efficiency_curve(feats, labels, ProbeConfig(n_values=(10,), seed=seed),
                                 standardise=("baseline", "untrained"))
    series = EmbeddingSeries([w.subject_id for w in held], [w.start_time for w in held], emb, labels)
    return {"losses": losses, "report": rep, "series": series, "seconds": time.perf_counter() - t}


def criterion_7(run):
    s = run["report"].summary()
    acc = {k: s[(k, 10)][0] for k in ("embedding", "untrained", "baseline")}
    ok = (acc["embedding"] >= 0.90 and acc["embedding"] - acc["untrained"] >= 0.05
          and acc["embedding"] - acc["baseline"] >= 0.05 and run["seconds"] < 600)
    first, last = np.mean(run["losses"][:100]), np.mean(run["losses"][-100:])
    return report(7, ok, f"n=10 accuracy embedding {acc['embedding']:.3f}, untrained {acc['untrained']:.3f}, "
                         f"baseline {acc['baseline']:.3f}; loss {first:.3f} -> {last:.3f} ({run['seconds']:.0f}s)")


# ---------------------------------------------------------------------------
# 8: planted-segment recovery

W_MS = 10_000.0


def planted_stream(seed=0, dim=256, sigma=0.01, n_segments=5):
    """Coherent runs of 6-30 windows (60-300 s) between i.i.d. noise gaps of 6-30 windows."""
    rng = np.random.default_rng(seed)
    vecs, truth, k = [], [], 0

    def gap():
        nonlocal k
        n = int(rng.integers(6, 31))
        vecs.append(rng.normal(size=(n, dim)))
        truth.append(LabeledInterval("null", k * W_MS, (k + n) * W_MS))
        k += n

    gap()
    for i in range(n_segments):
        n = int(rng.integers(6, 31))
        centre = rng.normal(size=dim)
        centre /= np.linalg.norm(centre)
        vecs.append(centre + rng.normal(0, sigma, (n, dim)))
        truth.append(LabeledInterval(f"planted_{i}", k * W_MS, (k + n) * W_MS))
        k += n
        gap()
    data = np.concatenate(vecs)
    series = EmbeddingSeries(["p0"] * k, W_MS * np.arange(k), data, [None] * k)
    return series, truth


def run_segmentation(seed=0):
    t = time.perf_counter()
    series, truth = planted_stream(seed)
    segs = segment_timeseries(series)
    return {"segments": segs, "truth": truth, "seconds": time.perf_counter() - t}


def criterion_8(run):
    segs, truth = run["segments"], run["truth"]
    p, r = event_metrics(segs, truth)
    wp, wr = window_metrics(segs, truth)
    planted = [iv for iv in truth if iv.activity != "null"]
    covered = sum(any(min(s.end_time, iv.end_time) - max(s.start_time, iv.start_time) >= 0.8 * iv.duration
                      for s in segs) for iv in planted)
    ok = p is not None and p >= 0.99 and r == 1.0 and run["seconds"] < 60
    return report(8, ok, f"{len(segs)} segments, event P {p:.3f} R {r:.3f}, window P {wp:.3f} R {wr:.3f}, "
                         f"{covered}/{len(planted)} planted runs >=80% covered by one segment ({run['seconds']:.1f}s)")


# ---------------------------------------------------------------------------
# 9: metrics against a window-enumeration oracle


def _layout(rng, n=90):
    truth, grid = [], [None] * n
    k = 0
    while k < n:
        e = min(n, k + int(rng.integers(1, 16)))
        if rng.random() > 0.15:
            name = str(rng.choice(["walk", "run", "sit", "null"]))
            truth.append(LabeledInterval(name, k * W_MS, e * W_MS))
            for j in range(k, e):
                grid[j] = (name, len(truth))
        k = e
    pred, k = [], int(rng.integers(0, 6))
    while k < n - 1:
        e = min(n, k + int(rng.integers(1, 25)))
        pred.append((k, e))
        k = e + int(rng.integers(0, 10))
    return truth, grid, pred


def _enumerate(grid, pred):
    covered = {k for s, e in pred for k in range(s, e)}
    pure = [len({grid[k][0] for k in range(s, e) if grid[k] is not None}) == 1 for s, e in pred]
    events = {}
    for k, g in enumerate(grid):
        if g is not None and g[0] != "null":
            events.setdefault(g[1], []).append(k)
    n_win = sum(e - s for s, e in pred)
    truth_win = sum(len(v) for v in events.values())
    f = lambda a, b: a / b if b else None  # noqa: E731
    ev = (f(sum(pure), len(pred)), f(sum(any(k in covered for k in v) for v in events.values()), len(events)))
    win = (f(sum(e - s for (s, e), ok in zip(pred, pure) if ok), n_win),
           f(sum(k in covered for v in events.values() for k in v), truth_win))
    return ev, win


def criterion_9():
    t = time.perf_counter()
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(25):
        truth, grid, pred = _layout(rng)
        spans = [(s * W_MS, e * W_MS) for s, e in pred]
        ev, win = _enumerate(grid, pred)
        mismatches += (event_metrics(spans, truth) != ev) + (window_metrics(spans, truth) != win)
    el = time.perf_counter() - t
    return report(9, mismatches == 0 and el < 10, f"{mismatches} mismatches over 25 layouts ({el:.2f}s)")


# ---------------------------------------------------------------------------
# 10: determinism


def _bytes_of(run7, run8, tmp):
    tmp.mkdir(parents=True, exist_ok=True)
    training.write_loss_trace(tmp / "loss.csv", run7["losses"])
    write_embeddings(run7["series"], tmp / "emb.bin")
    write_segments(run8["segments"], tmp / "segments.csv")
    return {p.name: p.read_bytes() for p in sorted(tmp.iterdir())}


def criterion_10(run7, run8):
    with tempfile.TemporaryDirectory() as d:
        first = _bytes_of(run7, run8, Path(d) / "a")
        second = _bytes_of(run_representation(), run_segmentation(), Path(d) / "b")
    same = [k for k in first if first[k] == second.get(k)]
    return report(10, len(same) == len(first) == 4,
                  f"byte-identical on rerun: {', '.join(same)} ({len(same)}/{len(first)} files)")


# ---------------------------------------------------------------------------
# 11: parser fidelity

NATIVE = {"pamap2": 100.0, "mhealth": 50.0, "hmpadl": 32.0, "dailysports": 25.0}


def criterion_11():
    t = time.perf_counter()
    problems, rates = [], {}
    for name, rate in NATIVE.items():
        data = load_dataset(name, HERE / "fixtures" / name)
        rates[name] = sorted({rec.sample_rate_hz for rec, _ in data})
        if rates[name] != [rate]:
            problems.append(f"{name} rate {rates[name]}")
        for rec, ivs in data:
            if not ivs or any(not (rec.start_time <= iv.start_time < iv.end_time <= rec.end_time + 1e-6) for iv in ivs):
                problems.append(f"{name}/{rec.subject_id} interval outside span")
    el = time.perf_counter() - t
    detail = ", ".join(f"{k} {v[0]:g} Hz" for k, v in rates.items())
    return report(11, not problems and el < 5, f"{detail}; {'; '.join(problems) or 'all intervals within spans'} ({el:.2f}s)")


# ---------------------------------------------------------------------------
# pytest entry points


@pytest.fixture(scope="module")
def representation_run():
    return run_representation()


@pytest.fixture(scope="module")
def segmentation_run():
    return run_segmentation()


@pytest.mark.parametrize("fn", [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                                criterion_9, criterion_11], ids=lambda f: f.__name__)
def test_fast_criteria(fn):
    assert fn()


@pytest.mark.slow
def test_criterion_7(representation_run):
    assert criterion_7(representation_run)


def test_criterion_8(segmentation_run):
    assert criterion_8(segmentation_run)


@pytest.mark.slow
def test_criterion_10(representation_run, segmentation_run):
    assert criterion_10(representation_run, segmentation_run)


if __name__ == "__main__":
    for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6):
        fn()
    r7, r8 = run_representation(), run_segmentation()
    criterion_7(r7)
    criterion_8(r8)
    criterion_9()
    criterion_10(r7, r8)
    criterion_11()
    sys.exit(0 if all(line.startswith("PASS") for line in RESULTS.values()) else 1)
