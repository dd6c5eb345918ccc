"""Full-record prediction: window tiling, thresholded decoding, NMS and stitching."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError
from .events import Annotation, Event
from .grid import DefaultEventGrid, decode_array
from .io_record import Record
from .model import DosedNet, ModelOutput
from .preprocess import PreprocessConfig, prepare, window_length

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferConfig:
    theta: float = 0.5
    nms_iou: float = 0.5
    stride_frac: float = 0.5
    batch_size: int = 256
    core_only: bool = True  # a window keeps only detections centered in the span it owns

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0 < self.nms_iou <= 1:
            raise ConfigError(f"nms_iou must lie in (0, 1], got {self.nms_iou}")
        if not 0 < self.stride_frac <= 1:
            raise ConfigError(f"stride_frac must lie in (0, 1], got {self.stride_frac}")


@dataclass
class Detections:
    """Scored candidate intervals in record time (parallel arrays)."""

    start: np.ndarray
    stop: np.ndarray
    score: np.ndarray

    def __len__(self) -> int:
        return len(self.score)

    @classmethod
    def empty(cls) -> "Detections":
        z = np.zeros(0)
        return cls(z, z.copy(), z.copy())

    @classmethod
    def concat(cls, parts: Sequence["Detections"]) -> "Detections":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("start", "stop", "score")))

    def take(self, idx) -> "Detections":
        return Detections(self.start[idx], self.stop[idx], self.score[idx])

    def to_events(self) -> list[Event]:
        return [
            Event.from_bounds(float(a), float(b), 1, float(s)) for a, b, s in zip(self.start, self.stop, self.score)
        ]

    @classmethod
    def from_events(cls, events: Sequence[Event]) -> "Detections":
        return cls(
            np.array([e.start_s for e in events], dtype=np.float64),
            np.array([e.stop_s for e in events], dtype=np.float64),
            np.array([1.0 if e.score is None else e.score for e in events], dtype=np.float64),
        )


def decode_arrays(event_probs: np.ndarray, offsets: np.ndarray, grid: DefaultEventGrid, theta: float,
                  origin_s: float = 0.0) -> Detections:
    """Anchors whose event probability exceeds ``theta``, moved by their predicted offsets."""
    keep = np.flatnonzero(event_probs > theta)
    centers, durations = decode_array(offsets[keep], grid.centers[keep], grid.durations[keep])
    return Detections(origin_s + centers - durations / 2, origin_s + centers + durations / 2, event_probs[keep].copy())


def decode_window(output: ModelOutput, grid: DefaultEventGrid, theta: float, index: int = 0) -> list[Event]:
    """Decode one window of ``output`` into scored events (window-local time)."""
    probs = output.class_probs[index] if output.class_probs.ndim == 3 else output.class_probs
    offs = output.offsets[index] if output.offsets.ndim == 3 else output.offsets
    return decode_arrays(probs[:, 1], offs, grid, theta).to_events()


def nms_order(det: Detections) -> np.ndarray:
    """Priority order: score descending, then earlier center, then input order."""
    centers = (det.start + det.stop) / 2
    return np.lexsort((np.arange(len(det)), centers, -det.score))


def nms_detections(det: Detections, max_iou: float) -> Detections:
    if len(det) == 0:
        return det
    keep = kernels.nms_keep(det.start, det.stop, nms_order(det), max_iou)
    return det.take(keep)


def nms(events: Sequence[Event], max_iou: float) -> list[Event]:
    """Greedy NMS: keep the best-scored event, drop the rest overlapping it by IoU > ``max_iou``, repeat."""
    return nms_detections(Detections.from_events(events), max_iou).to_events()


# ------------------------------------------------------------ record level


def tile_starts(total: int, win: int, stride: int) -> np.ndarray:
    """Window start indices at ``stride``; a final window is aligned to the record end if needed."""
    if total <= win:
        return np.zeros(1, dtype=np.int64)
    starts = list(range(0, total - win + 1, stride))
    if starts[-1] + win < total:
        starts.append(total - win)
    return np.asarray(starts, dtype=np.int64)


@dataclass
class RecordScores:
    """Raw network outputs for every tiled window of one prepared record."""

    record_id: str
    duration_s: float
    hours_of_sleep: float
    starts_s: np.ndarray
    window_s: float
    output: ModelOutput


def score_record(model: DosedNet, record: Record, window_s: float, cfg: InferConfig) -> RecordScores:
    """Eval-mode outputs for all windows of an already prepared record."""
    win = window_length(record, window_s)
    stride = max(1, int(round(win * cfg.stride_frac)))
    x = np.asarray(record.samples, dtype=np.float64)
    if x.shape[1] < win:
        log.warning("record %s shorter than one window (%d < %d samples); padding by edge replication",
                    record.record_id, x.shape[1], win)
        x = np.pad(x, ((0, 0), (0, win - x.shape[1])), mode="edge")
    starts = tile_starts(x.shape[1], win, stride)
    windows = np.stack([x[:, s : s + win] for s in starts])
    out = model.predict(windows, batch_size=cfg.batch_size)
    return RecordScores(record.record_id, record.duration_s, record.hours_of_sleep,
                        starts / record.sampling_rate_hz, win / record.sampling_rate_hz, out)


def ownership_bounds(starts_s: np.ndarray, window_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Span of record time owned by each window: cut halfway between consecutive window centers.

    The spans partition the real line; the first and last are unbounded.
    """
    centers = np.asarray(starts_s, dtype=np.float64) + window_s / 2
    cuts = (centers[:-1] + centers[1:]) / 2
    lo = np.concatenate(([-np.inf], cuts))
    hi = np.concatenate((cuts, [np.inf]))
    return lo, hi


def candidate_detections(scores: RecordScores, grid: DefaultEventGrid, theta: float,
                         core_only: bool = False) -> Detections:
    """All above-threshold decoded anchors of all windows, in record time, before NMS.

    With ``core_only`` a window contributes only detections whose center lies
    in the span it owns, so events cut by a window edge are reported by the
    window that sees them whole.
    """
    lo, hi = ownership_bounds(scores.starts_s, scores.window_s)
    parts = []
    for i, s0 in enumerate(scores.starts_s):
        det = decode_arrays(scores.output.class_probs[i, :, 1], scores.output.offsets[i], grid, theta, float(s0))
        if core_only:
            c = (det.start + det.stop) / 2
            det = det.take(np.flatnonzero((c >= lo[i]) & (c < hi[i])))
        parts.append(det)
    return Detections.concat(parts)


def stitch(scores: RecordScores, grid: DefaultEventGrid, theta: float, nms_iou: float,
           core_only: bool = True) -> list[Event]:
    """One global NMS over the windows' detections, then clip to the record."""
    det = nms_detections(candidate_detections(scores, grid, theta, core_only), nms_iou)
    start = np.clip(det.start, 0.0, scores.duration_s)
    stop = np.clip(det.stop, 0.0, scores.duration_s)
    ok = stop > start
    return Detections(start[ok], stop[ok], det.score[ok]).to_events()


def predict_record(model: DosedNet, record: Record, pre_cfg: PreprocessConfig, cfg: InferConfig,
                   prepared: bool = False) -> Annotation:
    """Predict events on a raw record (``prepared=False``) or on an already prepared one."""
    rec = record if prepared else prepare(record, pre_cfg)
    scores = score_record(model, rec, pre_cfg.window_s, cfg)
    events = stitch(scores, model.grid, cfg.theta, cfg.nms_iou, cfg.core_only)
    return Annotation(record.record_id, "model", events)
