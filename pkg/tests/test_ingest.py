from pathlib import Path

import numpy as np
import pytest

from cadence.errors import MissingColumns, RecordParse, SchemaMismatch, UnknownLayout
from cadence.ingest import DESCRIPTORS, get_descriptor, load_dataset, read_canonical, write_canonical
from cadence.signal_core import STANDARD_GRAVITY, LabeledInterval, Recording

FIXTURES = Path(__file__).parent / "fixtures"
NATIVE = {"pamap2": 100.0, "mhealth": 50.0, "hmpadl": 32.0, "dailysports": 25.0}


@pytest.mark.parametrize("name", sorted(NATIVE))
def test_fixture_rates_and_spans(name):
    data = load_dataset(name, FIXTURES / name)
    assert data
    for rec, ivs in data:
        assert rec.sample_rate_hz == NATIVE[name]
        assert rec.samples.shape[1] == 3
        assert ivs
        for iv in ivs:
            assert rec.start_time <= iv.start_time < iv.end_time <= rec.end_time + 1e-6


def test_pamap2_gap_split_and_labels():
    data = load_dataset("pamap2", FIXTURES / "pamap2")
    subjects = [rec.subject_id for rec, _ in data]
    assert subjects == ["101", "102", "102"]
    # 5 s gap in subject 102 splits the stream; dropped NaN rows are re-gridded
    assert [len(rec) for rec, _ in data] == [1200, 600, 700]
    names = {iv.activity for _, ivs in data for iv in ivs}
    assert names == {"null", "lying", "walking"}
    rec = data[0][0]
    assert rec.unit_scale == pytest.approx(1 / STANDARD_GRAVITY)
    assert np.all(np.isfinite(rec.samples))


def test_pamap2_activity_codes():
    acts = DESCRIPTORS["pamap2"].activities
    assert len([k for k in acts if k != 0]) == 18
    assert acts[0] == "null"


def test_mhealth_labels():
    (rec, ivs), = load_dataset("mhealth", FIXTURES / "mhealth")
    assert len(rec) == 1000
    assert [(iv.activity, iv.start_time, iv.end_time) for iv in ivs] == [
        ("null", 0.0, 5000.0), ("walking", 5000.0, 10000.0), ("null", 10000.0, 15000.0), ("jogging", 15000.0, 20000.0)]


def test_hmpadl_coded_values_to_g():
    data = load_dataset("hmpadl", FIXTURES / "hmpadl")
    by_subject = {rec.subject_id: (rec, ivs) for rec, ivs in data}
    rec, ivs = by_subject["f1"]
    assert ivs[0].activity == "walk"
    raw = np.loadtxt(FIXTURES / "hmpadl/Walk/Accelerometer-2011-03-24-10-24-39-walk-f1.txt")
    np.testing.assert_allclose(rec.samples * rec.unit_scale, -1.5 + 3.0 * raw / 63.0, atol=1e-12)
    # start time parsed from the filename
    assert rec.start_time == 1300962279000.0


def test_dailysports_sides_and_concatenation():
    data = load_dataset("dailysports", FIXTURES / "dailysports")
    assert len(data) == 4
    assert {rec.device_id for rec, _ in data} == {"xsens_right_arm", "xsens_left_arm"}
    assert all(len(rec) == 375 for rec, _ in data)
    right = [rec for rec, _ in data if rec.device_id == "xsens_right_arm" and rec.subject_id == "p1"][0]
    first = np.loadtxt(FIXTURES / "dailysports/a01/p1/s01.txt", delimiter=",")
    np.testing.assert_array_equal(right.samples[:125], first[:, 9:12])


def test_unknown_layout(tmp_path):
    with pytest.raises(UnknownLayout):
        get_descriptor("opportunity")
    with pytest.raises(UnknownLayout):
        load_dataset("mhealth", tmp_path)


def test_record_parse_reports_line(tmp_path):
    lines = (FIXTURES / "mhealth/mHealth_subject1.log").read_text().splitlines()[:20]
    fields = lines[6].split("\t")
    fields[15] = "abc"
    lines[6] = "\t".join(fields)
    (tmp_path / "mHealth_subject3.log").write_text("\n".join(lines) + "\n")
    with pytest.raises(RecordParse) as err:
        load_dataset("mhealth", tmp_path)
    assert err.value.line == 7
    assert "mHealth_subject3.log" in str(err.value)


def test_missing_columns(tmp_path):
    (tmp_path / "mHealth_subject4.log").write_text("1 2 3\n4 5 6\n")
    with pytest.raises(MissingColumns):
        load_dataset("mhealth", tmp_path)


def _random_recording(subject, n, seed):
    rng = np.random.default_rng(seed)
    return Recording(subject, "watch", 30.0, 1.6e12 + seed * 1000, rng.normal(size=(n, 3)), 1.0)


def test_canonical_roundtrip(tmp_path):
    recs = [(_random_recording("a", 400, 1), [LabeledInterval("walk", 1.6e12 + 1000, 1.6e12 + 5000)]),
            (_random_recording("b", 250, 2), [])]
    paths = write_canonical(recs, tmp_path)
    assert [p.name for p in paths] == ["0000_a_watch.csv", "0001_b_watch.csv"]
    back = read_canonical(tmp_path)
    assert [r.subject_id for r, _ in back] == ["a", "b"]
    for (r0, iv0), (r1, iv1) in zip(recs, back):
        assert len(r0) == len(r1)
        assert r1.sample_rate_hz == r0.sample_rate_hz and r1.start_time == r0.start_time
        assert np.max(np.abs(r0.samples - r1.samples)) < 1e-9
        assert iv0 == iv1


def test_canonical_deterministic_bytes(tmp_path):
    recs = [(_random_recording("a", 100, 3), [])]
    write_canonical(recs, tmp_path / "x")
    write_canonical(recs, tmp_path / "y")
    for p in (tmp_path / "x").iterdir():
        assert p.read_bytes() == (tmp_path / "y" / p.name).read_bytes()


def test_canonical_schema_mismatch(tmp_path):
    write_canonical([(_random_recording("a", 50, 4), [])], tmp_path)
    csv_path = tmp_path / "0000_a_watch.csv"
    text = csv_path.read_text().replace("t_ms,ax_g", "time,ax", 1)
    csv_path.write_text(text)
    with pytest.raises(SchemaMismatch):
        read_canonical(tmp_path)


def test_canonical_via_load_dataset(tmp_path):
    write_canonical([(_random_recording("z", 60, 5), [])], tmp_path)
    (rec, ivs), = load_dataset("canonical", tmp_path)
    assert rec.subject_id == "z" and ivs == []
