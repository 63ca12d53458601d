"""``cadence`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Every output directory
receives one ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import augment as aug
from . import config as config_mod
from .errors import CadenceError, DataError, EmptyDataset
from .signal_core import LabeledInterval, normalize_and_resample, split_windows

logger = logging.getLogger("cadence")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so ``dispatch`` controls the exit code."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    duration_s: float = 0.0

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("CADENCE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CADENCE_THREADS must be an integer, got {env!r}") from None
    return None


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load_cfg(args) -> dict:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    unknown = sorted(set(overrides) - set(config_mod.DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    path = getattr(args, "config", None)
    if path is not None and not Path(path).is_file():
        raise DataError(f"{path}: config file not found")
    try:
        return config_mod.load_config(path, overrides)
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from None


def _out_dir_of(path) -> Path:
    path = Path(path)
    return path if path.suffix == "" else path.parent


def _read_data(path):
    from .ingest import read_canonical
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: data directory not found")
    data = read_canonical(path)
    if not data:
        raise EmptyDataset(f"{path}: no recordings")
    return data


def _labelled_windows(data):
    return [w for rec, ivs in data for w in split_windows(normalize_and_resample(rec), ivs)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    from .ingest import write_canonical
    from .synth import SynthConfig, generate_corpus
    scfg = SynthConfig(classes=args.classes, subjects=args.subjects, minutes=args.minutes, seed=args.seed)
    paths = write_canonical(generate_corpus(scfg), args.out)
    return {"out": str(args.out)}, {"recordings": len(paths)}, args.out


def cmd_ingest(args, cfg):
    from .ingest import load_dataset, write_canonical
    data = load_dataset(args.dataset, args.root)
    if not data:
        raise EmptyDataset(f"{args.root}: no recordings found for {args.dataset}")
    write_canonical(data, args.out)
    return {"root": str(args.root)}, {"out": str(args.out)}, args.out


def cmd_train(args, cfg):
    from .training import TrainConfig, index_from_recordings, load_checkpoint, train
    if args.steps is not None:
        cfg["train.steps"] = str(args.steps)
    cfg["train.seed"] = str(args.seed)
    tcfg = TrainConfig.from_config(cfg)
    index = index_from_recordings(_read_data(args.data))
    resume = load_checkpoint(args.resume, tcfg.model) if args.resume else None
    train(tcfg, index, resume=resume, out_dir=args.out)
    out = Path(args.out)
    (out / "config.txt").write_text(config_mod.dump_config(cfg))
    return ({"data": str(args.data), "resume": str(args.resume or "")},
            {"checkpoint": str(out / "checkpoint.ckpt"), "loss": str(out / "loss.csv")}, out)


def cmd_embed(args, cfg):
    from .probe import baseline_series, embed_windows, write_embeddings
    from .training import load_checkpoint
    windows = _labelled_windows(_read_data(args.data))
    outputs = {}
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        outputs["embeddings"] = str(write_embeddings(embed_windows(ckpt, windows), args.out))
    if args.baseline_out:
        outputs["baseline"] = str(write_embeddings(baseline_series(windows), args.baseline_out))
    if not outputs:
        raise UsageError("embed needs --checkpoint or --baseline-out")
    return {"data": str(args.data), "checkpoint": str(args.checkpoint or "")}, outputs, _out_dir_of(args.out or args.baseline_out)


def cmd_probe(args, cfg):
    from .probe import ProbeConfig, label_efficiency_curve, read_embeddings
    cfg["probe.seed"] = str(args.seed)
    pcfg = ProbeConfig.from_config(cfg)
    ref = _read_series(args.embeddings)
    features = {"embedding": ref.vectors}
    if args.baseline:
        base = _read_series(args.baseline)
        if base.subject_ids != ref.subject_ids or not np.array_equal(base.start_ms, ref.start_ms):
            raise DataError("baseline file does not describe the same windows as the embeddings")
        features["baseline"] = base.vectors
    if args.salient:
        from .evaluation import salient_mask
        from .segmentation import read_segments
        mask = salient_mask(ref.subject_ids, ref.start_ms, read_segments(args.salient))
        features = {k: v[mask] for k, v in features.items()}
        ref = ref.subset(mask)
    report = label_efficiency_curve(features, ref.labels, pcfg, full_split=True)
    report.write_csv(args.out)
    for (source, n), (mean, std, _) in sorted(report.summary().items()):
        print(f"{source}\tn={n}\tmean={mean:.4f}\tstd={std:.4f}")
    for source, accs in sorted(report.full_split.items()):
        print(f"{source}\tn=all\tmean={np.mean(accs):.4f}\tstd={np.std(accs):.4f}")
    return {"embeddings": str(args.embeddings), "baseline": str(args.baseline or "")}, {"report": str(args.out)}, _out_dir_of(args.out)


def _read_series(path):
    from .probe import read_embeddings
    if not Path(path).is_file():
        raise DataError(f"{path}: embeddings file not found")
    return read_embeddings(path)


def cmd_segment(args, cfg):
    from .segmentation import segment_timeseries, write_segments
    series = _read_series(args.embeddings)
    segs = segment_timeseries(series, block=int(cfg["segment.block"]), min_block=int(cfg["segment.min_block"]),
                              min_len=int(cfg["segment.min_len"]), max_nb=int(cfg["segment.max_neighbourhood"]))
    write_segments(segs, args.out)
    print(f"{len(segs)} segments")
    return {"embeddings": str(args.embeddings)}, {"segments": str(args.out)}, _out_dir_of(args.out)


def read_labels_by_subject(path) -> dict:
    """Labels from a canonical data directory or a CSV with ``subject_id,activity,start_ms,end_ms``."""
    path = Path(path)
    if path.is_dir():
        out: dict = {}
        for rec, ivs in _read_data(path):
            out.setdefault(rec.subject_id, []).extend(ivs)
        return out
    if not path.is_file():
        raise DataError(f"{path}: labels not found")
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "activity", "start_ms", "end_ms"]:
            from .errors import SchemaMismatch
            raise SchemaMismatch(f"{path}: expected header subject_id,activity,start_ms,end_ms")
        for row in reader:
            out.setdefault(row["subject_id"], []).append(
                LabeledInterval(row["activity"], float(row["start_ms"]), float(row["end_ms"])))
    return out


def cmd_eval_seg(args, cfg):
    from .evaluation import evaluate_segmentation, group_segments
    from .segmentation import read_segments
    if not Path(args.segments).is_file():
        raise DataError(f"{args.segments}: segments file not found")
    report = evaluate_segmentation(group_segments(read_segments(args.segments)), read_labels_by_subject(args.labels))
    report.write_csv(args.out)
    r = report.overall
    print(f"event P/R {r.event_precision} / {r.event_recall}; window P/R {r.window_precision} / {r.window_recall}")
    return {"segments": str(args.segments), "labels": str(args.labels)}, {"report": str(args.out)}, _out_dir_of(args.out)


def cmd_augment_preview(args, cfg):
    windows = _labelled_windows(_read_data(args.data))
    if not 0 <= args.index < len(windows):
        raise DataError(f"window index {args.index} outside 0..{len(windows) - 1}")
    w = windows[args.index]
    ranges = aug.AugmentRanges.from_config(cfg)
    chain = aug.sample_augmentation_chain([args.seed, 0], ranges)
    after = aug.augment_array(w.data, chain, [args.seed, 1])
    with open(args.out, "w", newline="") as fh:
        fh.write("# chain: " + "; ".join(repr(s) for s in chain) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample", "x", "y", "z", "aug_x", "aug_y", "aug_z"])
        for i, (a, b) in enumerate(zip(w.data, after)):
            writer.writerow([i, *(f"{v:.6g}" for v in a), *(f"{v:.6g}" for v in b)])
    return {"data": str(args.data)}, {"preview": str(args.out)}, _out_dir_of(args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cadence", description="Self-supervised accelerometer embeddings and salient-activity segmentation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
        sp.add_argument("--threads", type=int, default=None, help="cap numeric worker threads (env CADENCE_THREADS)")
        sp.add_argument("--config", type=Path, default=None, help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate the synthetic activity corpus")
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--minutes", type=float, default=20.0)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("ingest", cmd_ingest, "convert a raw dataset into canonical recordings")
    sp.add_argument("--dataset", required=True, choices=["pamap2", "mhealth", "hmpadl", "dailysports", "canonical"])
    sp.add_argument("--root", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("train", cmd_train, "train the encoder on canonical recordings")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--resume", type=Path, default=None)

    sp = add("embed", cmd_embed, "embed every window of canonical recordings")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--checkpoint", type=Path, default=None)
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--baseline-out", type=Path, default=None, help="also write the 8-d baseline features")

    sp = add("probe", cmd_probe, "label-efficiency curve of linear probes")
    sp.add_argument("--embeddings", type=Path, required=True)
    sp.add_argument("--baseline", type=Path, default=None)
    sp.add_argument("--salient", type=Path, default=None, help="segments CSV; probe only windows inside them")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("segment", cmd_segment, "salient-activity segmentation of an embedding series")
    sp.add_argument("--embeddings", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("eval-seg", cmd_eval_seg, "precision/recall of segments against labels")
    sp.add_argument("--segments", type=Path, required=True)
    sp.add_argument("--labels", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("augment-preview", cmd_augment_preview, "before/after CSV of one augmented window")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _load_cfg(args)
        for attr in ("out", "baseline_out"):
            target = getattr(args, attr, None)
            if target is not None:
                _out_dir_of(target).mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        with _thread_limit(_threads(args)):
            inputs, outputs, out_dir = args.func(args, cfg)
        RunManifest(args.command, config_mod.config_hash(cfg), args.seed, inputs, outputs,
                    duration_s=round(time.perf_counter() - t0, 3)).write(out_dir)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CadenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:  # malformed config values and the like
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


def main():
    sys.exit(dispatch())
