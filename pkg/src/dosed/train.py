"""Anchor matching, the detection loss with hard-negative mining, and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, TrainingError
from .events import Annotation, Event, events_to_bounds
from .grid import DefaultEventGrid, encode_array
from .infer import InferConfig, score_record, stitch
from .io_record import Record
from .metrics import detection_f1
from .model import DosedNet, ModelConfig, build_model
from .nn import Adam, Tensor, functional as F
from .preprocess import AugmentConfig, PreprocessConfig, augment, draw_window

log = logging.getLogger(__name__)

DEFAULT_THETAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.5
    batch_size: int = 128
    learning_rate: float = 5e-4
    weight_decay: float = 1e-8
    epochs: int = 100
    negative_ratio: int = 3
    balance: float = 0.5
    theta_grid: tuple[float, ...] = DEFAULT_THETAS
    eval_iou: float = 0.3
    batches_per_epoch: int | None = None  # None: ceil(#training events / batch_size)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.negative_ratio < 1:
            raise ConfigError("negative_ratio must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.theta_grid or any(not 0 < t < 1 for t in self.theta_grid):
            raise ConfigError("theta_grid must be a non-empty list of values in (0, 1)")
        if not 0 <= self.balance <= 1:
            raise ConfigError("balance must lie in [0, 1]")


# ---------------------------------------------------------------- matching


@dataclass
class MatchResult:
    labels: np.ndarray  # [N_d] in {0, 1}
    matched: np.ndarray  # [N_d] truth index or -1
    targets: np.ndarray  # [N_d, 2] offsets, zero where label is 0


def match(grid: DefaultEventGrid, truth: Sequence[Event], gamma: float = 0.5) -> MatchResult:
    """Label anchors against window-local truth events.

    Each truth event first claims its best-overlapping free anchor; any other
    anchor reaching IoU ``gamma`` with some truth event is positive as well
    and regresses towards its best truth event.
    """
    n = len(grid)
    if not truth:
        return MatchResult(np.zeros(n, dtype=np.int64), np.full(n, -1, dtype=np.int64), np.zeros((n, 2)))
    t_start, t_stop = events_to_bounds(truth)
    iou = kernels.iou_matrix(t_start, t_stop, grid.starts, grid.stops)
    matched = kernels.anchor_assign(iou, gamma)
    labels = (matched >= 0).astype(np.int64)
    targets = np.zeros((n, 2))
    pos = np.flatnonzero(labels)
    if pos.size:
        t = matched[pos]
        targets[pos] = encode_array((t_start[t] + t_stop[t]) / 2, t_stop[t] - t_start[t],
                                    grid.centers[pos], grid.durations[pos])
    return MatchResult(labels, matched, targets)


# -------------------------------------------------------------------- loss


def hard_negatives(event_probs: np.ndarray, labels: np.ndarray, negative_ratio: int) -> np.ndarray:
    """Indices of the worst-classified negatives: highest event probability first.

    ``negative_ratio`` per positive, or ``negative_ratio`` when there is no positive.
    """
    negs = np.flatnonzero(labels == 0)
    k = min(negative_ratio * max(int(labels.sum()), 1), negs.size)
    order = np.argsort(-event_probs[negs], kind="stable")
    return negs[order[:k]]


def detection_loss(class_logits: Tensor, offsets: Tensor, labels: np.ndarray, targets: np.ndarray,
                   negative_ratio: int = 3) -> tuple[Tensor, dict]:
    """Classification + localization loss over a batch.

    Classification: cross-entropy over all positives and the mined hard
    negatives, divided by the number of anchors used. Localization: smooth-L1
    on the offsets of positives only, divided by the number of positives.
    """
    labels = np.asarray(labels).reshape(class_logits.shape[:-1])
    targets = np.asarray(targets).reshape(offsets.shape)
    probs = F.softmax(Tensor(class_logits.data), axis=-1).data[..., 1]
    sel_b, sel_a = [], []
    for b in range(labels.shape[0]):
        pos = np.flatnonzero(labels[b])
        neg = hard_negatives(probs[b], labels[b], negative_ratio)
        idx = np.concatenate([pos, neg])
        sel_b.append(np.full(idx.size, b))
        sel_a.append(idx)
    sel_b = np.concatenate(sel_b).astype(np.int64)
    sel_a = np.concatenate(sel_a).astype(np.int64)
    n_sel = sel_b.size
    cls_loss = F.cross_entropy(class_logits[sel_b, sel_a], labels[sel_b, sel_a], reduction="sum") * (1.0 / n_sel)
    pb, pa = np.nonzero(labels)
    if pb.size:
        loc_loss = F.smooth_l1(offsets[pb, pa], targets[pb, pa], reduction="sum") * (1.0 / pb.size)
        total = cls_loss + loc_loss
        loc_val = loc_loss.item()
    else:
        total, loc_val = cls_loss, 0.0
    return total, {"classification": cls_loss.item(), "localization": loc_val, "n_positive": int(pb.size),
                   "n_selected": int(n_sel)}


# -------------------------------------------------------------------- loop


@dataclass
class TrainingSet:
    """Prepared (normalized + downsampled) records with their target annotations."""

    records: list[Record]
    annotations: list[Annotation]

    def __post_init__(self):
        if len(self.records) != len(self.annotations):
            raise ConfigError("records and annotations differ in number")

    @property
    def n_events(self) -> int:
        return sum(len(a) for a in self.annotations)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    theta: float
    val_f1: float


@dataclass
class TrainResult:
    model: DosedNet
    theta: float
    best_epoch: int
    best_f1: float
    history: list[EpochLog]


def validation_f1(model: DosedNet, data: TrainingSet, pre_cfg: PreprocessConfig, infer_cfg: InferConfig,
                  thetas: Sequence[float], iou: float = 0.3) -> dict[float, float]:
    """Macro F1 at ``iou`` on every record, for each candidate theta (one forward pass per record)."""
    scored = [score_record(model, r, pre_cfg.window_s, infer_cfg) for r in data.records]
    out = {}
    for theta in thetas:
        preds = [
            Annotation(s.record_id, "model", stitch(s, model.grid, theta, infer_cfg.nms_iou, infer_cfg.core_only))
            for s in scored
        ]
        out[theta] = detection_f1(preds, data.annotations, iou)
    return out


def _draw_batch(data: TrainingSet, pre_cfg: PreprocessConfig, cfg: TrainConfig, rng: np.random.Generator):
    durations = np.array([r.duration_s for r in data.records])
    has_events = np.array([len(a) > 0 for a in data.annotations])
    n_event = int(round(cfg.batch_size * cfg.balance))
    if n_event and not has_events.any():
        raise ConfigError("balanced sampling requested but no training record has events")
    windows = []
    for k in range(cfg.batch_size):
        need = k < n_event
        w = durations * has_events if need else durations
        i = int(rng.choice(len(durations), p=w / w.sum()))
        win = draw_window(data.records[i], data.annotations[i].events, pre_cfg, rng, require_event=need)
        windows.append(augment(win, rng, cfg.augment))
    return windows


def train_loop(
    train: TrainingSet,
    validation: TrainingSet,
    model_cfg: ModelConfig,
    pre_cfg: PreprocessConfig = PreprocessConfig(),
    cfg: TrainConfig = TrainConfig(),
    infer_cfg: InferConfig = InferConfig(),
    seed: int = 0,
    on_epoch=None,
) -> TrainResult:
    """Train with Adam on event-balanced random windows; keep the (weights, theta)
    pair with the best validation F1 over all epochs."""
    if not train.records:
        raise ConfigError("empty training split")
    if not validation.records:
        raise ConfigError("empty validation split")
    model = build_model(model_cfg, seed)
    opt = Adam(model.parameters(), learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    n_batches = cfg.batches_per_epoch or max(1, math.ceil(train.n_events / cfg.batch_size))
    best = (-1.0, cfg.theta_grid[0], 0, model.state_copy())
    history = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(n_batches):
            windows = _draw_batch(train, pre_cfg, cfg, rng)
            x = np.stack([w.samples for w in windows])
            matches = [match(model.grid, w.events, cfg.gamma) for w in windows]
            labels = np.stack([m.labels for m in matches])
            targets = np.stack([m.targets for m in matches])
            cls, loc = model.forward(x, training=True, rng=rng)
            loss, _ = detection_loss(cls, loc, labels, targets, cfg.negative_ratio)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"loss diverged to {loss.item()} in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        scores = validation_f1(model, validation, pre_cfg, infer_cfg, cfg.theta_grid, cfg.eval_iou)
        # best theta of this epoch; ties go to the smaller theta
        theta = max(cfg.theta_grid, key=lambda t: (scores[t], -t))
        row = EpochLog(epoch, float(np.mean(losses)), theta, scores[theta])
        history.append(row)
        log.info("epoch %d loss %.5f theta %.2f val_f1 %.4f", epoch, row.loss, theta, row.val_f1)
        if row.val_f1 > best[0]:
            best = (row.val_f1, theta, epoch, model.state_copy())
        if on_epoch is not None:
            on_epoch(row)
    model.load_state(best[3])
    return TrainResult(model, best[1], best[2], best[0], history)


def write_log(history: Sequence[EpochLog], path) -> None:
    lines = ["epoch,loss,theta,val_f1"]
    lines += [f"{h.epoch},{h.loss!r},{h.theta!r},{h.val_f1!r}" for h in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
