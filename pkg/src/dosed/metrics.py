"""Event-level detection metrics, AHI / severity diagnosis and the scorer-vs-consensus harness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, IntegrityError
from .events import Annotation, ConsensusSpec, consensus

IOU_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))
SEVERITY_CLASSES = ("mild", "moderate", "severe")


@dataclass(frozen=True)
class DetectionCounts:
    tp: int
    fp: int
    fn: int
    iou_threshold: float


def _pairs(test: Annotation, reference: Annotation, iou_threshold: float):
    if test.record_id != reference.record_id:
        raise IntegrityError(f"comparing {test.record_id!r} against {reference.record_id!r}")
    iou = kernels.iou_matrix(*test.bounds(), *reference.bounds())
    return kernels.greedy_pairs(iou, iou_threshold)


def match_events(test: Annotation, reference: Annotation, iou_threshold: float) -> DetectionCounts:
    """One-to-one greedy matching, highest IoU first; only pairs with IoU >= threshold count."""
    rows, _ = _pairs(test, reference, iou_threshold)
    tp = len(rows)
    return DetectionCounts(tp, len(test) - tp, len(reference) - tp, iou_threshold)


def prf1(counts: DetectionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1; every zero denominator yields 0."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    pr = tp / (tp + fp) if tp + fp else 0.0
    re = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
    return pr, re, f1


def f1_curve(test: Annotation, reference: Annotation,
             iou_thresholds: Sequence[float] = IOU_THRESHOLDS) -> list[tuple[float, float]]:
    return [(t, prf1(match_events(test, reference, t))[2]) for t in iou_thresholds]


def ahi(annotation: Annotation, hours_of_sleep: float) -> float:
    if not hours_of_sleep > 0:
        raise ArgumentError(f"hours_of_sleep must be > 0, got {hours_of_sleep}")
    return len(annotation.events) / hours_of_sleep


def severity(ahi_value: float, scheme: str = "results") -> str:
    """OSA severity class.

    ``results`` (default): mild <= 15 < moderate <= 30 < severe.
    ``clinical``: none <= 5 < mild < 15 <= moderate <= 30 < severe.
    """
    if scheme == "results":
        if ahi_value <= 15:
            return "mild"
        return "moderate" if ahi_value <= 30 else "severe"
    if scheme == "clinical":
        if ahi_value <= 5:
            return "none"
        if ahi_value < 15:
            return "mild"
        return "moderate" if ahi_value <= 30 else "severe"
    raise ArgumentError(f"unknown severity scheme {scheme!r}")


# ------------------------------------------------------------------ harness


@dataclass(frozen=True)
class MetricsConfig:
    kappa: float = 0.5
    iou: float = 0.3
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    consensus_fs: float | None = None  # None: the record's sampling rate
    min_event_s: float = 0.0
    n_best: int | None = None  # scorers in the model's reference; None: all but one
    severity_scheme: str = "results"


@dataclass
class ScoredRecord:
    """Everything the harness needs to know about one record."""

    record_id: str
    duration_s: float
    hours_of_sleep: float
    sampling_rate_hz: float
    scorers: list[Annotation]
    model: Annotation | None = None


@dataclass
class RecordResult:
    record_id: str
    precision: float
    recall: float
    f1: float
    f1_curve: list[tuple[float, float]]
    ahi: float
    reference_ahi: float
    ahi_error: float
    diagnosis_correct: bool
    counts: DetectionCounts


@dataclass
class EvaluatedAnnotator:
    name: str
    records: list[RecordResult] = field(default_factory=list)
    reference_scorers: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        f1 = np.array([r.f1 for r in self.records])
        err = np.array([r.ahi_error for r in self.records])
        curve = np.array([[v for _, v in r.f1_curve] for r in self.records])
        thresholds = [t for t, _ in self.records[0].f1_curve] if self.records else []
        return {
            "name": self.name,
            "n_records": len(self.records),
            "diagnostic_accuracy": float(np.mean([r.diagnosis_correct for r in self.records])),
            "mean_ahi_error": float(err.mean()),
            "std_ahi_error": float(err.std()),
            "f1": float(f1.mean()),
            "std_f1": float(f1.std()),
            "precision": float(np.mean([r.precision for r in self.records])),
            "recall": float(np.mean([r.recall for r in self.records])),
            "f1_curve": [[t, float(v)] for t, v in zip(thresholds, curve.mean(axis=0))],
            "reference_scorers": list(self.reference_scorers),
        }


def scorer_vs_consensus(
    scorers: Sequence[Annotation],
    evaluated: Annotation | int,
    duration_s: float,
    hours_of_sleep: float,
    fs: float,
    cfg: MetricsConfig = MetricsConfig(),
) -> RecordResult:
    """Score one annotation of one record against a consensus of scorers.

    ``evaluated`` as an int picks a scorer and compares it against the
    consensus of all the others; as an :class:`Annotation` it is compared
    against the consensus of every scorer given. The AHI reference is the
    mean AHI of the reference scorers.
    """
    if isinstance(evaluated, (int, np.integer)):
        if len(scorers) < 2:
            raise ArgumentError("leave-one-out evaluation needs at least 2 scorers")
        test = scorers[evaluated]
        refs = [s for i, s in enumerate(scorers) if i != evaluated]
    else:
        if len(scorers) < 1:
            raise ArgumentError("need at least one reference scorer")
        test, refs = evaluated, list(scorers)
    fs = cfg.consensus_fs or fs
    ref = consensus(refs, ConsensusSpec(cfg.kappa, len(refs)), fs, duration_s, min_duration_s=cfg.min_event_s)
    counts = match_events(test, ref, cfg.iou)
    pr, re, f1 = prf1(counts)
    own = ahi(test, hours_of_sleep)
    ref_ahi = float(np.mean([ahi(s, hours_of_sleep) for s in refs]))
    return RecordResult(
        test.record_id, pr, re, f1,
        f1_curve(test, ref, cfg.iou_thresholds),
        own, ref_ahi, abs(own - ref_ahi),
        severity(own, cfg.severity_scheme) == severity(ref_ahi, cfg.severity_scheme),
        counts,
    )


def evaluate_dataset(records: Sequence[ScoredRecord], cfg: MetricsConfig = MetricsConfig()) -> dict:
    """Leave-one-scorer-out evaluation of every scorer, plus the model against the best scorers.

    Metrics are computed per record and only then averaged.
    """
    if not records:
        raise ArgumentError("no records to evaluate")
    n = len(records[0].scorers)
    if n < 2:
        raise ArgumentError(f"scorer evaluation needs at least 2 scorers, got {n}")
    if any(len(r.scorers) != n for r in records):
        raise IntegrityError("every record must carry the same number of scorers")
    names = [s.scorer_id for s in records[0].scorers]
    humans = []
    for i, name in enumerate(names):
        ev = EvaluatedAnnotator(name, reference_scorers=[m for j, m in enumerate(names) if j != i])
        for r in records:
            ev.records.append(
                scorer_vs_consensus(r.scorers, i, r.duration_s, r.hours_of_sleep, r.sampling_rate_hz, cfg)
            )
        humans.append(ev)
    summaries = [h.summary() for h in humans]
    report = {
        "config": {
            "kappa": cfg.kappa, "iou": cfg.iou, "iou_thresholds": list(cfg.iou_thresholds),
            "severity_scheme": cfg.severity_scheme,
        },
        "scorers": summaries,
        "per_record": {h.name: [_record_row(x) for x in h.records] for h in humans},
    }
    report["average_scorers"] = _average(summaries)
    if all(r.model is not None for r in records):
        k = cfg.n_best or n - 1
        k = max(1, min(k, n))
        ranked = sorted(range(n), key=lambda i: (-summaries[i]["f1"], i))
        best = sorted(ranked[:k])
        ev = EvaluatedAnnotator("model", reference_scorers=[names[i] for i in best])
        for r in records:
            refs = [r.scorers[i] for i in best]
            ev.records.append(
                scorer_vs_consensus(refs, r.model, r.duration_s, r.hours_of_sleep, r.sampling_rate_hz, cfg)
            )
        report["model"] = ev.summary()
        report["per_record"]["model"] = [_record_row(x) for x in ev.records]
    return report


def _record_row(r: RecordResult) -> dict:
    return {
        "record_id": r.record_id, "tp": r.counts.tp, "fp": r.counts.fp, "fn": r.counts.fn,
        "precision": r.precision, "recall": r.recall, "f1": r.f1,
        "ahi": r.ahi, "reference_ahi": r.reference_ahi, "ahi_error": r.ahi_error,
        "diagnosis_correct": bool(r.diagnosis_correct),
        "f1_curve": [[t, v] for t, v in r.f1_curve],
    }


def _average(summaries: list[dict]) -> dict:
    keys = ("diagnostic_accuracy", "mean_ahi_error", "std_ahi_error", "f1", "std_f1", "precision", "recall")
    out = {"name": "avg. scorers"}
    out.update({k: float(np.mean([s[k] for s in summaries])) for k in keys})
    curves = np.array([[v for _, v in s["f1_curve"]] for s in summaries])
    out["f1_curve"] = [[t, float(v)] for (t, _), v in zip(summaries[0]["f1_curve"], curves.mean(axis=0))]
    return out


def detection_f1(tests: Sequence[Annotation], references: Sequence[Annotation], iou_threshold: float = 0.3) -> float:
    """Macro F1: per-record F1 averaged over records."""
    if not tests:
        return 0.0
    return float(np.mean([prf1(match_events(t, r, iou_threshold))[2] for t, r in zip(tests, references, strict=True)]))
