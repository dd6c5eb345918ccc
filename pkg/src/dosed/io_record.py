"""Records, annotations and dataset manifests on disk.

Record layout: a JSON header ``<name>.json`` next to a raw body
``<name>.f32`` holding little-endian float32 samples, channel-major
(all of channel 0, then channel 1, ...). Header fields::

    {"format": "dosed-record", "version": 1,
     "record_id": str, "sampling_rate_hz": float, "hours_of_sleep": float,
     "total_samples": int, "body": "<name>.f32",
     "channels": [{"name": str, "nominal_min": float, "nominal_max": float, "unit": str}, ...]}

Annotation layout (JSON)::

    {"record_id": str, "scorer_id": str,
     "events": [{"center_s": float, "duration_s": float, "label": 0|1}, ...]}

Manifest layout (JSON)::

    {"format": "dosed-manifest", "version": 1,
     "entries": [{"record": path, "annotations": [path, ...],
                  "scorers": [path, ...], "split": "train"|"validation"|"test"}, ...]}

Relative paths in a manifest resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, IntegrityError
from .events import Annotation, Event

RECORD_FORMAT = "dosed-record"
MANIFEST_FORMAT = "dosed-manifest"
SPLITS = ("train", "validation", "test")
_LE_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class Channel:
    name: str
    nominal_min: float
    nominal_max: float
    unit: str = ""


@dataclass(eq=False)
class Record:
    record_id: str
    channels: list[Channel]
    sampling_rate_hz: float
    hours_of_sleep: float
    samples: np.ndarray  # [C, total_samples]

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.validate()

    def validate(self) -> None:
        if not self.channels:
            raise FormatError(f"record {self.record_id!r} has no channels")
        if not self.sampling_rate_hz > 0:
            raise IntegrityError(f"sampling rate must be > 0, got {self.sampling_rate_hz}")
        if not self.hours_of_sleep > 0:
            raise IntegrityError(f"hours_of_sleep must be > 0, got {self.hours_of_sleep}")
        for ch in self.channels:
            if not ch.nominal_min < ch.nominal_max:
                raise IntegrityError(
                    f"channel {ch.name!r}: nominal_min {ch.nominal_min} >= nominal_max {ch.nominal_max}"
                )
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channels):
            raise IntegrityError(
                f"samples shape {self.samples.shape} does not match {len(self.channels)} channels"
            )

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def total_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.total_samples / self.sampling_rate_hz

    def replace(self, samples: np.ndarray, sampling_rate_hz: float | None = None) -> "Record":
        return Record(
            self.record_id,
            list(self.channels),
            self.sampling_rate_hz if sampling_rate_hz is None else sampling_rate_hz,
            self.hours_of_sleep,
            samples,
        )

    def __eq__(self, other):
        if not isinstance(other, Record):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.channels == other.channels
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.hours_of_sleep == other.hours_of_sleep
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )


# ----------------------------------------------------------------- records


def _body_path(header_path: Path) -> Path:
    return header_path.with_suffix(".f32")


def write_record(record: Record, path: str | Path) -> None:
    record.validate()
    samples = np.asarray(record.samples, dtype=np.float32)
    if not np.all(np.isfinite(samples)):
        raise IntegrityError(f"record {record.record_id!r} contains NaN/Inf samples")
    path = Path(path)
    body = _body_path(path)
    header = {
        "format": RECORD_FORMAT,
        "version": 1,
        "record_id": record.record_id,
        "sampling_rate_hz": float(record.sampling_rate_hz),
        "hours_of_sleep": float(record.hours_of_sleep),
        "total_samples": int(samples.shape[1]),
        "body": body.name,
        "channels": [
            {"name": c.name, "nominal_min": float(c.nominal_min), "nominal_max": float(c.nominal_max), "unit": c.unit}
            for c in record.channels
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    body.write_bytes(samples.astype(_LE_F32).tobytes(order="C"))
    path.write_text(json.dumps(header, indent=2) + "\n")


def _load_json(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top-level JSON object expected")
    return doc


def read_record(path: str | Path) -> Record:
    path = Path(path)
    h = _load_json(path)
    try:
        if h.get("format", RECORD_FORMAT) != RECORD_FORMAT:
            raise FormatError(f"{path}: unexpected format {h.get('format')!r}")
        chans = h["channels"]
        if not isinstance(chans, list) or not chans:
            raise FormatError(f"{path}: channel list is empty")
        channels = [
            Channel(str(c["name"]), float(c["nominal_min"]), float(c["nominal_max"]), str(c.get("unit", "")))
            for c in chans
        ]
        record_id = str(h["record_id"])
        fs = float(h["sampling_rate_hz"])
        hours = float(h["hours_of_sleep"])
        total = int(h["total_samples"])
        body = path.parent / h.get("body", _body_path(path).name)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc!r})") from None
    raw = np.fromfile(body, dtype=_LE_F32)
    if raw.size != total * len(channels):
        raise IntegrityError(
            f"{body}: {raw.size} samples on disk, header promises {len(channels)} x {total}"
        )
    samples = raw.reshape(len(channels), total).astype(np.float32)
    if not np.all(np.isfinite(samples)):
        raise IntegrityError(f"{body}: NaN/Inf samples")
    return Record(record_id, channels, fs, hours, samples)


# ------------------------------------------------------------- annotations


def annotation_to_dict(ann: Annotation) -> dict:
    return {
        "record_id": ann.record_id,
        "scorer_id": ann.scorer_id,
        "events": [
            {"center_s": float(e.center_s), "duration_s": float(e.duration_s), "label": int(e.label)}
            for e in ann.events
        ],
    }


def write_annotation(ann: Annotation, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(annotation_to_dict(ann), indent=1) + "\n")


def read_annotation(path: str | Path, record: Record | None = None) -> Annotation:
    """Read an annotation; with ``record`` given, events must fit inside it."""
    doc = _load_json(Path(path))
    try:
        raw = doc["events"]
        rid, sid = str(doc["record_id"]), str(doc["scorer_id"])
        events = []
        for ev in raw:
            try:
                events.append(Event(float(ev["center_s"]), float(ev["duration_s"]), int(ev.get("label", 1))))
            except DomainError as exc:
                raise IntegrityError(f"{path}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed annotation ({exc!r})") from None
    ann = Annotation(rid, sid, events)
    if record is not None:
        if record.record_id != rid:
            raise IntegrityError(f"{path}: annotation is for {rid!r}, record is {record.record_id!r}")
        ann.check_within(record.duration_s)
    return ann


# ---------------------------------------------------------------- manifest


@dataclass
class ManifestEntry:
    record: Path
    annotations: list[Path]
    split: str
    scorers: list[Path] = field(default_factory=list)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "entries": [
            {
                "record": rel(e.record),
                "annotations": [rel(a) for a in e.annotations],
                "scorers": [rel(s) for s in e.scorers],
                "split": e.split,
            }
            for e in manifest.entries
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    """Parse a manifest and check record-id uniqueness and annotation references."""
    path = Path(path)
    doc = _load_json(path)
    root = path.parent
    try:
        entries = [
            ManifestEntry(
                record=root / e["record"],
                annotations=[root / a for a in e.get("annotations", [])],
                split=str(e["split"]),
                scorers=[root / s for s in e.get("scorers", [])],
            )
            for e in doc["entries"]
        ]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc!r})") from None
    for e in entries:
        if e.split not in SPLITS:
            raise FormatError(f"{path}: unknown split {e.split!r}")
    if check_files:
        seen = set()
        for e in entries:
            if not e.record.exists():
                raise IntegrityError(f"{path}: missing record {e.record}")
            rid = _load_json(e.record).get("record_id")
            if rid in seen:
                raise IntegrityError(f"{path}: duplicate record_id {rid!r}")
            seen.add(rid)
            for a in list(e.annotations) + list(e.scorers):
                if not a.exists():
                    raise IntegrityError(f"{path}: missing annotation {a}")
                if _load_json(a).get("record_id") != rid:
                    raise IntegrityError(f"{path}: annotation {a} does not reference record {rid!r}")
    return DatasetManifest(entries, root)

