"""Parsers for the four UCI wrist-accelerometer benchmarks plus the canonical
CSV layout used everywhere else in the toolkit.

Every adapter yields ``(Recording, [LabeledInterval, ...])`` pairs, one per
contiguous subject stream. Only wrist acceleration is kept.

Layouts expected under ``root``:

``pamap2``
    ``**/subject1NN.dat``: space separated, 54 columns; column 0 is the
    timestamp in seconds, 1 the activity id, 4-6 the hand IMU +-16 g
    accelerometer in m/s^2. Rows with NaN in those columns are dropped and the stream is
    re-gridded by linear interpolation; dropouts over two sample periods
    split the stream.
``mhealth``
    ``**/mHealth_subjectN.log``: whitespace separated, 24 columns; 14-16 are
    the right-lower-arm accelerometer in m/s^2, 23 is the label. No
    timestamps; rows are contiguous at 50 Hz.
``hmpadl``
    ``<Activity_folder>/Accelerometer-YYYY-MM-DD-HH-MM-SS-<act>-<subj>.txt``:
    three coded integers per row in 0..63, mapped to g as
    ``-1.5 + 3 * code / 63``. One trial per file.
``dailysports``
    ``aNN/pN/sNN.txt``: 125 comma separated rows of 45 columns (5 units x 9
    channels). Right arm acceleration is columns 9-11, left arm 18-20, in
    m/s^2. The 5 s segments of one subject/activity are concatenated in
    filename order; each side becomes its own recording.
``canonical``
    see :func:`write_canonical`.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import MissingColumns, RecordParse, SchemaMismatch, UnknownLayout
from .signal_core import NULL_ACTIVITY, STANDARD_GRAVITY, LabeledInterval, Recording

logger = logging.getLogger(__name__)

MS2_TO_G = 1.0 / STANDARD_GRAVITY
GAP_PERIODS = 2.0

PAMAP2_ACTIVITIES = {
    0: NULL_ACTIVITY, 1: "lying", 2: "sitting", 3: "standing", 4: "walking",
    5: "running", 6: "cycling", 7: "nordic_walking", 9: "watching_tv",
    10: "computer_work", 11: "car_driving", 12: "ascending_stairs",
    13: "descending_stairs", 16: "vacuum_cleaning", 17: "ironing",
    18: "folding_laundry", 19: "house_cleaning", 20: "playing_soccer",
    24: "rope_jumping",
}

MHEALTH_ACTIVITIES = {
    0: NULL_ACTIVITY, 1: "standing", 2: "sitting", 3: "lying", 4: "walking",
    5: "climbing_stairs", 6: "waist_bends", 7: "arms_up", 8: "crouching",
    9: "cycling", 10: "jogging", 11: "running", 12: "jumping",
}

HMPADL_ACTIVITIES = {
    "Brush_teeth": "brush_teeth", "Climb_stairs": "climb_stairs",
    "Comb_hair": "comb_hair", "Descend_stairs": "descend_stairs",
    "Drink_glass": "drink_glass", "Eat_meat": "eat_meat", "Eat_soup": "eat_soup",
    "Getup_bed": "getup_bed", "Liedown_bed": "liedown_bed",
    "Pour_water": "pour_water", "Sitdown_chair": "sitdown_chair",
    "Standup_chair": "standup_chair", "Use_telephone": "use_telephone",
    "Walk": "walk",
}

DAILYSPORTS_ACTIVITIES = {
    1: "sitting", 2: "standing", 3: "lying_back", 4: "lying_right",
    5: "ascending_stairs", 6: "descending_stairs", 7: "elevator_still",
    8: "elevator_moving", 9: "walking_parking_lot", 10: "treadmill_flat",
    11: "treadmill_incline", 12: "treadmill_running", 13: "stepper",
    14: "cross_trainer", 15: "cycling_horizontal", 16: "cycling_vertical",
    17: "rowing", 18: "jumping", 19: "basketball",
}


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    sample_rate_hz: float
    columns: dict  # side -> (x, y, z) column indices
    unit_scale: float
    activities: dict
    wrist_side: str
    n_columns: int = 0
    unit_offset: float = 0.0

    def __post_init__(self):
        for cols in self.columns.values():
            if len(set(cols)) != len(cols):
                raise ValueError(f"{self.name}: duplicate column indices {cols}")


DESCRIPTORS = {
    "pamap2": DatasetDescriptor(
        "pamap2", 100.0, {"hand": (4, 5, 6)}, MS2_TO_G, PAMAP2_ACTIVITIES, "dominant", 54),
    "mhealth": DatasetDescriptor(
        "mhealth", 50.0, {"right": (14, 15, 16)}, MS2_TO_G, MHEALTH_ACTIVITIES, "right", 24),
    "hmpadl": DatasetDescriptor(
        "hmpadl", 32.0, {"right": (0, 1, 2)}, 3.0 / 63.0, HMPADL_ACTIVITIES, "right", 3, -1.5),
    "dailysports": DatasetDescriptor(
        "dailysports", 25.0, {"right": (9, 10, 11), "left": (18, 19, 20)}, MS2_TO_G,
        DAILYSPORTS_ACTIVITIES, "left, right", 45),
    "canonical": DatasetDescriptor("canonical", 30.0, {"wrist": (1, 2, 3)}, 1.0, {}, "unknown", 4),
}


def get_descriptor(name: str) -> DatasetDescriptor:
    try:
        return DESCRIPTORS[name.lower()]
    except KeyError:
        raise UnknownLayout(f"unknown dataset {name!r}; expected one of {sorted(DESCRIPTORS)}") from None


def load_dataset(descriptor: DatasetDescriptor | str, root) -> list[tuple[Recording, list[LabeledInterval]]]:
    if isinstance(descriptor, str):
        descriptor = get_descriptor(descriptor)
    root = Path(root)
    if not root.is_dir():
        raise UnknownLayout(f"{root} is not a directory")
    loader = _LOADERS[descriptor.name]
    out = loader(descriptor, root)
    if not out:
        raise UnknownLayout(f"no {descriptor.name} files found under {root}")
    return out


# ---------------------------------------------------------------------------
# low-level parsing


def _read_table(path: Path, n_columns: int, delimiter: Optional[str] = None) -> np.ndarray:
    """Parse a numeric text table, reporting the first bad line precisely."""
    try:
        table = np.loadtxt(path, delimiter=delimiter, ndmin=2, dtype=np.float64)
    except ValueError:
        table = None
    if table is not None and (table.size == 0 or table.shape[1] >= n_columns):
        return table
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.strip().split(delimiter) if delimiter else line.split()
            if len(fields) < n_columns:
                raise MissingColumns(
                    f"{path}:{lineno}: expected {n_columns} columns, found {len(fields)}")
            for f in fields:
                try:
                    float(f)
                except ValueError:
                    raise RecordParse(path, lineno, f"non-numeric field {f!r}") from None
    raise RecordParse(path, 0, "unparseable table")


def _label_intervals(rec: Recording, codes: np.ndarray, names: dict) -> list[LabeledInterval]:
    """Convert a per-sample label sequence into run-length intervals."""
    if codes.size == 0:
        return []
    change = np.flatnonzero(np.diff(codes)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [codes.size]])
    period = rec.period_ms
    out = []
    for s, e in zip(starts, ends):
        code = codes[s]
        name = names.get(code, names.get(int(code), f"activity_{code}"))
        out.append(LabeledInterval(name, rec.start_time + s * period, rec.start_time + e * period))
    return out


def _split_at_gaps(t_ms: np.ndarray, period_ms: float) -> list[slice]:
    if t_ms.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(t_ms) > GAP_PERIODS * period_ms) + 1
    edges = np.concatenate([[0], breaks, [t_ms.size]])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b - a >= 2]


def _regrid(t_ms: np.ndarray, values: np.ndarray, codes: np.ndarray, period_ms: float):
    """Put a stream with short dropouts back on its regular sample grid.

    Values are linearly interpolated at the missing instants and labels
    carried forward from the previous kept row.
    """
    n = int(round((t_ms[-1] - t_ms[0]) / period_ms)) + 1
    grid = t_ms[0] + np.arange(n) * period_ms
    if n == t_ms.size and np.allclose(grid, t_ms, atol=period_ms / 4):
        return grid, values, codes
    out = np.column_stack([np.interp(grid, t_ms, values[:, j]) for j in range(values.shape[1])])
    idx = np.clip(np.searchsorted(t_ms, grid + period_ms / 4, side="right") - 1, 0, t_ms.size - 1)
    return grid, out, codes[idx]


# ---------------------------------------------------------------------------
# adapters


def _load_pamap2(desc: DatasetDescriptor, root: Path):
    files = sorted(root.rglob("subject*.dat"))
    out = []
    cols = list(desc.columns["hand"])
    for path in files:
        subject = re.sub(r"\D", "", path.stem) or path.stem
        table = _read_table(path, desc.n_columns)
        if table.size == 0:
            continue
        keep = np.all(np.isfinite(table[:, cols]), axis=1) & np.isfinite(table[:, 0])
        table = table[keep]
        t_ms = np.round(table[:, 0] * 1000.0)
        codes = table[:, 1].astype(int)
        period = 1000.0 / desc.sample_rate_hz
        for k, sl in enumerate(_split_at_gaps(t_ms, period)):
            t, values, seg_codes = _regrid(t_ms[sl], table[sl][:, cols], codes[sl], period)
            rec = Recording(
                subject_id=subject, device_id="colibri_hand",
                sample_rate_hz=desc.sample_rate_hz, start_time=float(t[0]),
                samples=values, unit_scale=desc.unit_scale,
                meta={"dataset": desc.name, "file": path.name, "segment": k, "side": desc.wrist_side},
            )
            out.append((rec, _label_intervals(rec, seg_codes, desc.activities)))
    return out


def _load_mhealth(desc: DatasetDescriptor, root: Path):
    files = sorted(root.rglob("mHealth_subject*.log"), key=_natural_key)
    out = []
    cols = list(desc.columns["right"])
    for path in files:
        subject = re.sub(r"\D", "", path.stem) or path.stem
        table = _read_table(path, desc.n_columns)
        if table.size == 0:
            continue
        rec = Recording(
            subject_id=subject, device_id="shimmer2_right_arm",
            sample_rate_hz=desc.sample_rate_hz, start_time=0.0,
            samples=table[:, cols], unit_scale=desc.unit_scale,
            meta={"dataset": desc.name, "file": path.name, "side": desc.wrist_side},
        )
        out.append((rec, _label_intervals(rec, table[:, 23].astype(int), desc.activities)))
    return out


_HMP_NAME = re.compile(
    r"Accelerometer-(\d{4})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(.+)-([a-zA-Z]+\d+)\.txt$")


def _load_hmpadl(desc: DatasetDescriptor, root: Path):
    out = []
    for folder, activity in sorted(desc.activities.items()):
        for path in sorted((root / folder).glob("Accelerometer-*.txt")):
            m = _HMP_NAME.search(path.name)
            if not m:
                raise UnknownLayout(f"unexpected HMP file name {path.name}")
            y, mo, d, hh, mi, ss = (int(v) for v in m.groups()[:6])
            start = dt.datetime(y, mo, d, hh, mi, ss, tzinfo=dt.timezone.utc).timestamp() * 1000.0
            table = _read_table(path, desc.n_columns)
            if table.shape[0] < 2:
                continue
            codes = table[:, list(desc.columns["right"])]
            rec = Recording(
                subject_id=m.group(8), device_id="hmp_right_wrist",
                sample_rate_hz=desc.sample_rate_hz, start_time=start,
                samples=desc.unit_offset + codes * desc.unit_scale, unit_scale=1.0,
                meta={"dataset": desc.name, "file": path.name, "side": desc.wrist_side},
            )
            out.append((rec, [LabeledInterval(activity, rec.start_time, rec.end_time)]))
    return out


def _load_dailysports(desc: DatasetDescriptor, root: Path):
    out = []
    for act_dir in sorted(p for p in root.glob("a[0-9][0-9]") if p.is_dir()):
        code = int(act_dir.name[1:])
        activity = desc.activities.get(code, f"activity_{code}")
        for subj_dir in sorted((p for p in act_dir.glob("p*") if p.is_dir()), key=_natural_key):
            segments = sorted(subj_dir.glob("s*.txt"), key=_natural_key)
            if not segments:
                continue
            table = np.concatenate([_read_table(p, desc.n_columns, ",") for p in segments])
            if table.shape[0] < 2:
                continue
            for side, cols in desc.columns.items():
                rec = Recording(
                    subject_id=subj_dir.name, device_id=f"xsens_{side}_arm",
                    sample_rate_hz=desc.sample_rate_hz, start_time=0.0,
                    samples=table[:, list(cols)], unit_scale=desc.unit_scale,
                    meta={"dataset": desc.name, "activity_dir": act_dir.name, "side": side},
                )
                out.append((rec, [LabeledInterval(activity, rec.start_time, rec.end_time)]))
    return out


def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


# ---------------------------------------------------------------------------
# canonical format

CANONICAL_HEADER = ["t_ms", "ax_g", "ay_g", "az_g"]
LABELS_HEADER = ["activity", "start_ms", "end_ms"]
_META_KEYS = ("subject_id", "device_id", "sample_rate_hz", "start_time_ms")


def _stem(index: int, rec: Recording) -> str:
    safe = lambda s: re.sub(r"[^A-Za-z0-9_.-]", "-", str(s))  # noqa: E731
    return f"{index:04d}_{safe(rec.subject_id)}_{safe(rec.device_id)}"


def write_canonical(recordings: Sequence[tuple[Recording, Sequence[LabeledInterval]]], out_dir) -> list[Path]:
    """Write recordings (in g) as ``NNNN_<subject>_<device>.csv`` plus
    ``.meta.json`` and ``.labels.csv`` sidecars. Returns the CSV paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (rec, intervals) in enumerate(recordings):
        stem = _stem(i, rec)
        values = rec.samples * rec.unit_scale
        t = rec.timestamps()
        table = np.column_stack([t, values])
        path = out_dir / f"{stem}.csv"
        np.savetxt(path, table, fmt=["%.3f", "%.12g", "%.12g", "%.12g"], delimiter=",",
                   header=",".join(CANONICAL_HEADER), comments="")
        meta = {
            "subject_id": rec.subject_id,
            "device_id": rec.device_id,
            "sample_rate_hz": rec.sample_rate_hz,
            "start_time_ms": rec.start_time,
        }
        (out_dir / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        with open(out_dir / f"{stem}.labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LABELS_HEADER)
            for iv in intervals:
                writer.writerow([iv.activity, repr(float(iv.start_time)), repr(float(iv.end_time))])
        written.append(path)
    return written


def read_canonical(in_dir) -> list[tuple[Recording, list[LabeledInterval]]]:
    in_dir = Path(in_dir)
    out = []
    for path in sorted(in_dir.glob("*.csv")):
        if path.name.endswith(".labels.csv"):
            continue
        meta_path = path.with_name(path.stem + ".meta.json")
        if not meta_path.exists():
            raise SchemaMismatch(f"missing metadata sidecar for {path.name}")
        meta = json.loads(meta_path.read_text())
        missing = [k for k in _META_KEYS if k not in meta]
        if missing:
            raise SchemaMismatch(f"{meta_path.name}: missing keys {missing}")
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header != CANONICAL_HEADER:
            raise SchemaMismatch(f"{path.name}: header {header} != {CANONICAL_HEADER}")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2) if path.stat().st_size else None
        if table is None or table.shape[1] != 4:
            raise SchemaMismatch(f"{path.name}: expected 4 columns")
        rec = Recording(
            subject_id=str(meta["subject_id"]), device_id=str(meta["device_id"]),
            sample_rate_hz=float(meta["sample_rate_hz"]), start_time=float(meta["start_time_ms"]),
            samples=table[:, 1:], unit_scale=1.0,
        )
        out.append((rec, _read_labels(path.with_name(path.stem + ".labels.csv"))))
    return out


def _read_labels(path: Path) -> list[LabeledInterval]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABELS_HEADER:
            raise SchemaMismatch(f"{path.name}: header {header} != {LABELS_HEADER}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(LabeledInterval(row[0], float(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise RecordParse(path, lineno, "bad label row") from None
    return out


def _load_canonical(desc: DatasetDescriptor, root: Path):
    return read_canonical(root)


_LOADERS = {
    "pamap2": _load_pamap2,
    "mhealth": _load_mhealth,
    "hmpadl": _load_hmpadl,
    "dailysports": _load_dailysports,
    "canonical": _load_canonical,
}
