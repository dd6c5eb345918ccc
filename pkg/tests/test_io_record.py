import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dosed.errors import FormatError, IntegrityError
from dosed.events import Annotation, Event
from dosed.io_record import (
    Channel, DatasetManifest, ManifestEntry, Record, read_annotation, read_manifest, read_record,
    write_annotation, write_manifest, write_record,
)


def make_record(c=6, n=46080, fs=256.0, seed=0, rid="r0"):
    rng = np.random.default_rng(seed)
    chans = [Channel(f"ch{i}", -1.0, 1.0, "a.u.") for i in range(c)]
    return Record(rid, chans, fs, 0.05, rng.standard_normal((c, n)).astype(np.float32))


def test_round_trip_six_channels(tmp_path):
    r = make_record()
    write_record(r, tmp_path / "r.json")
    back = read_record(tmp_path / "r.json")
    assert back == r
    assert back.n_channels == 6 and back.duration_s == 180.0


def test_body_is_little_endian_channel_major(tmp_path):
    r = Record("x", [Channel("a", 0, 1), Channel("b", 0, 1)], 1.0, 1.0,
               np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    write_record(r, tmp_path / "x.json")
    raw = (tmp_path / "x.f32").read_bytes()
    assert np.frombuffer(raw, dtype="<f4").tolist() == [1, 2, 3, 4, 5, 6]


def test_minimal_record_round_trips(tmp_path):
    r = Record("m", [Channel("a", 0, 1)], 1.0, 1.0, np.array([[0.5]], dtype=np.float32))
    write_record(r, tmp_path / "m.json")
    assert read_record(tmp_path / "m.json") == r


def test_nan_sample_rejected(tmp_path):
    r = make_record(c=1, n=10)
    r.samples[0, 3] = np.nan
    with pytest.raises(IntegrityError):
        write_record(r, tmp_path / "r.json")


def test_invalid_channel_range_rejected():
    with pytest.raises(IntegrityError):
        Record("x", [Channel("a", 1.0, 1.0)], 1.0, 1.0, np.zeros((1, 4), dtype=np.float32))


def test_header_violations(tmp_path):
    r = make_record(c=2, n=8)
    write_record(r, tmp_path / "r.json")
    header = json.loads((tmp_path / "r.json").read_text())

    bad = dict(header, channels=[])
    (tmp_path / "empty.json").write_text(json.dumps(bad))
    with pytest.raises(FormatError):
        read_record(tmp_path / "empty.json")

    bad = dict(header, channels=[dict(c, nominal_min=5.0) for c in header["channels"]])
    (tmp_path / "range.json").write_text(json.dumps(bad))
    with pytest.raises(IntegrityError):
        read_record(tmp_path / "range.json")

    bad = dict(header, total_samples=9)
    (tmp_path / "len.json").write_text(json.dumps(bad))
    with pytest.raises(IntegrityError):
        read_record(tmp_path / "len.json")

    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_record(tmp_path / "junk.json")


@settings(max_examples=25, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 4), st.integers(1, 50), st.floats(0.5, 512), st.integers(0, 2**31))
def test_random_records_round_trip(tmp_path, c, n, fs, seed):
    r = make_record(c=c, n=n, fs=fs, seed=seed)
    write_record(r, tmp_path / "h.json")
    assert read_record(tmp_path / "h.json") == r


# ------------------------------------------------------------- annotations


def test_annotation_round_trip_and_sort(tmp_path):
    a = Annotation("r0", "s1", [Event(30.0, 4.0), Event(12.0, 2.5)])
    write_annotation(a, tmp_path / "a.json")
    doc = json.loads((tmp_path / "a.json").read_text())
    doc["events"].reverse()
    (tmp_path / "a.json").write_text(json.dumps(doc))
    back = read_annotation(tmp_path / "a.json")
    assert [e.center_s for e in back.events] == [12.0, 30.0]
    assert back == a


def test_empty_annotation(tmp_path):
    write_annotation(Annotation("r0", "s", []), tmp_path / "a.json")
    assert read_annotation(tmp_path / "a.json").events == []


def test_annotation_bad_duration(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps(
        {"record_id": "r0", "scorer_id": "s", "events": [{"center_s": 1.0, "duration_s": 0.0, "label": 1}]}))
    with pytest.raises(IntegrityError):
        read_annotation(tmp_path / "a.json")


def test_annotation_outside_record(tmp_path):
    r = make_record(c=1, n=256)  # 1 s
    write_annotation(Annotation("r0", "s", [Event(5.0, 2.0)]), tmp_path / "a.json")
    with pytest.raises(IntegrityError):
        read_annotation(tmp_path / "a.json", r)


# ---------------------------------------------------------------- manifest


def test_manifest_round_trip_and_checks(tmp_path):
    r = make_record(c=1, n=16)
    write_record(r, tmp_path / "rec" / "r0.json")
    write_annotation(Annotation("r0", "truth", []), tmp_path / "ann" / "r0.json")
    m = DatasetManifest([ManifestEntry(tmp_path / "rec" / "r0.json", [tmp_path / "ann" / "r0.json"], "train")])
    write_manifest(m, tmp_path / "manifest.json")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["entries"][0]["record"] == "rec/r0.json"
    back = read_manifest(tmp_path / "manifest.json")
    assert back.entries[0].record.resolve() == (tmp_path / "rec" / "r0.json").resolve()
    assert [e.split for e in back.split("train")] == ["train"]

    write_annotation(Annotation("other", "truth", []), tmp_path / "ann" / "r0.json")
    with pytest.raises(IntegrityError):
        read_manifest(tmp_path / "manifest.json")


def test_manifest_duplicate_ids(tmp_path):
    r = make_record(c=1, n=16)
    write_record(r, tmp_path / "a.json")
    write_record(r, tmp_path / "b.json")
    m = DatasetManifest([ManifestEntry(tmp_path / "a.json", [], "train"),
                         ManifestEntry(tmp_path / "b.json", [], "test")])
    write_manifest(m, tmp_path / "m.json")
    with pytest.raises(IntegrityError):
        read_manifest(tmp_path / "m.json")
