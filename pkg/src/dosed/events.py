"""Event algebra: interval IoU, binary mask encoding and multi-scorer consensus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, BoundsError, DomainError, IntegrityError

_EPS = 1e-9


@dataclass(frozen=True)
class Event:
    """A labelled time interval given by its center and duration (seconds).

    ``score`` is an optional detection confidence. It does not take part in
    equality and is never written to annotation files.
    """

    center_s: float
    duration_s: float
    label: int = 1
    score: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.center_s) and math.isfinite(self.duration_s)):
            raise DomainError(f"non-finite event {self.center_s!r}/{self.duration_s!r}")
        if self.duration_s <= 0:
            raise DomainError(f"event duration must be > 0, got {self.duration_s}")
        if self.label not in (0, 1):
            raise DomainError(f"event label must be 0 or 1, got {self.label!r}")

    @property
    def start_s(self) -> float:
        return self.center_s - self.duration_s / 2

    @property
    def stop_s(self) -> float:
        return self.center_s + self.duration_s / 2

    @classmethod
    def from_bounds(cls, start_s: float, stop_s: float, label: int = 1, score: float | None = None) -> "Event":
        return cls((start_s + stop_s) / 2, stop_s - start_s, label, score)


@dataclass
class Annotation:
    """Scored events of one record by one scorer; events are kept sorted by center."""

    record_id: str
    scorer_id: str
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: (e.center_s, e.duration_s))

    def __len__(self) -> int:
        return len(self.events)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return events_to_bounds(self.events)

    def check_within(self, duration_s: float) -> None:
        """Raise :class:`IntegrityError` if an event leaves ``[0, duration_s]``."""
        for e in self.events:
            if e.start_s < -_EPS or e.stop_s > duration_s + _EPS:
                raise IntegrityError(
                    f"event [{e.start_s:.3f}, {e.stop_s:.3f}] s outside record "
                    f"{self.record_id!r} of {duration_s:.3f} s"
                )


def events_to_bounds(events: Iterable[Event]) -> tuple[np.ndarray, np.ndarray]:
    events = list(events)
    start = np.array([e.start_s for e in events], dtype=np.float64)
    stop = np.array([e.stop_s for e in events], dtype=np.float64)
    return start, stop


def iou(a: Event, b: Event) -> float:
    """Intersection over union of two events on the time axis."""
    inter = min(a.stop_s, b.stop_s) - max(a.start_s, b.start_s)
    if inter <= 0:
        return 0.0
    # for overlapping intervals the union is the hull; this keeps the ratio <= 1 in floating point
    return inter / (max(a.stop_s, b.stop_s) - min(a.start_s, b.start_s))


def iou_matrix(a: Sequence[Event], b: Sequence[Event]) -> np.ndarray:
    """Pairwise IoU, shape ``[len(a), len(b)]``."""
    return kernels.iou_matrix(*events_to_bounds(a), *events_to_bounds(b))


# ------------------------------------------------------------------ masks


@dataclass
class BinaryMask:
    sampling_rate_hz: float
    values: np.ndarray

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.sampling_rate_hz


@dataclass(frozen=True)
class ConsensusSpec:
    kappa: float
    n_scorers: int

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ArgumentError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.n_scorers < 1:
            raise ArgumentError(f"n_scorers must be >= 1, got {self.n_scorers}")


def mask_length(fs: float, d: float) -> int:
    return int(round(fs * d))


def events_to_mask(events: Iterable[Event], fs: float, d: float) -> BinaryMask:
    """Rasterize events onto ``round(fs * d)`` samples.

    Sample ``i`` spans ``[i/fs, (i+1)/fs)`` and is set when that span has a
    non-empty intersection with an event.
    """
    if fs <= 0:
        raise DomainError(f"sampling rate must be > 0, got {fs}")
    n = mask_length(fs, d)
    diff = np.zeros(n + 1, dtype=np.int64)
    for e in events:
        if e.start_s < -_EPS or e.stop_s > d + _EPS:
            raise BoundsError(f"event [{e.start_s}, {e.stop_s}] s outside [0, {d}] s")
        # snap products that are integers up to float noise
        lo = e.start_s * fs
        hi = e.stop_s * fs
        lo = round(lo) if abs(lo - round(lo)) < 1e-6 else math.floor(lo)
        hi = round(hi) if abs(hi - round(hi)) < 1e-6 else math.ceil(hi)
        lo, hi = max(lo, 0), min(hi, n)
        if hi > lo:
            diff[lo] += 1
            diff[hi] -= 1
    values = (np.cumsum(diff[:n]) > 0).astype(np.float64)
    return BinaryMask(fs, values)


def mask_runs(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start (inclusive) and stop (exclusive) sample indices of maximal runs of ones."""
    padded = np.concatenate(([0], np.asarray(values, dtype=np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def mask_to_events(mask: BinaryMask, min_duration_s: float = 0.0) -> list[Event]:
    """Turn maximal runs of ones into events (center = run midpoint)."""
    v = np.asarray(mask.values)
    if v.size and not np.all((v == 0) | (v == 1)):
        raise DomainError("mask values must be 0 or 1")
    starts, stops = mask_runs(v)
    fs = mask.sampling_rate_hz
    out = []
    for a, b in zip(starts, stops):
        dur = (b - a) / fs
        if dur >= min_duration_s:
            out.append(Event((a + b) / 2 / fs, dur))
    return out


def consensus_mask(
    annotations: Sequence[Annotation], kappa: float, fs: float, d: float
) -> tuple[np.ndarray, np.ndarray]:
    """Return (mean scorer mask, thresholded consensus mask)."""
    mean = np.zeros(mask_length(fs, d))
    for ann in annotations:
        mean += events_to_mask(ann.events, fs, d).values
    mean /= len(annotations)
    # mean is a multiple of 1/n; compare with slack so that kappa = k/n is inclusive
    keep = mean >= kappa - 1e-12
    return mean, keep.astype(np.float64)


def consensus(
    annotations: Sequence[Annotation],
    spec: ConsensusSpec,
    fs: float,
    d: float,
    *,
    min_duration_s: float = 0.0,
    scorer_id: str = "consensus",
) -> Annotation:
    """Consensus annotation: samples whose scorer-mean reaches ``kappa`` become events."""
    if not annotations:
        raise ArgumentError("consensus needs at least one annotation")
    if len(annotations) != spec.n_scorers:
        raise ArgumentError(f"expected {spec.n_scorers} annotations, got {len(annotations)}")
    ids = {a.record_id for a in annotations}
    if len(ids) != 1:
        raise IntegrityError(f"annotations refer to different records: {sorted(ids)}")
    _, keep = consensus_mask(annotations, spec.kappa, fs, d)
    events = mask_to_events(BinaryMask(fs, keep), min_duration_s=min_duration_s)
    return Annotation(annotations[0].record_id, scorer_id, events)
