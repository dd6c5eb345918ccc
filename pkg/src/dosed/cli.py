"""Command-line pipeline.

    dosed <command> --config <path> [--seed S] [--threads N] [--out DIR] [--set key=value ...]

Commands: synth, train, predict, consensus, evaluate, report. On failure the
process prints ``{"error": <class>, "message": ..., "exit_code": n}`` to
stderr and exits with the code from :data:`dosed.errors.EXIT_CODES`.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._accel import set_threads
from .config import ExperimentConfig, load_config, to_dict
from .errors import EXIT_CODES, ArgumentError, ConfigError, DosedError
from .events import Annotation, ConsensusSpec, consensus
from .infer import predict_record
from .io_record import (DatasetManifest, ManifestEntry, read_annotation, read_manifest, read_record,
                        write_annotation, write_manifest, write_record)
from .metrics import ScoredRecord, evaluate_dataset
from .model import load_checkpoint, save_checkpoint
from .preprocess import prepare
from .synth import generate_dataset
from .train import TrainingSet, train_loop, write_log

log = logging.getLogger("dosed")


# ------------------------------------------------------------------ helpers


def _manifest(cfg: ExperimentConfig) -> DatasetManifest:
    path = cfg.path("manifest")
    if not path.exists():
        raise ConfigError(f"manifest {path} not found")
    return read_manifest(path)


def _target(entry: ManifestEntry, record, kappa: float) -> Annotation:
    """Training/evaluation target of a record: its single annotation or the consensus of several."""
    anns = [read_annotation(p, record) for p in entry.annotations]
    if not anns:
        raise ConfigError(f"record {record.record_id!r} has no annotations")
    if len(anns) == 1:
        return anns[0]
    return consensus(anns, ConsensusSpec(kappa, len(anns)), record.sampling_rate_hz, record.duration_s)


def _load_split(cfg: ExperimentConfig, manifest: DatasetManifest, split: str) -> TrainingSet:
    records, targets = [], []
    for e in manifest.split(split):
        rec = read_record(e.record)
        targets.append(_target(e, rec, cfg.run.train_target_kappa))
        records.append(prepare(rec, cfg.preprocess))
        if records[-1].n_channels != cfg.model.channels_in:
            raise ConfigError(
                f"record {rec.record_id!r} has {records[-1].n_channels} channels, model expects {cfg.model.channels_in}"
            )
    if records:
        win = int(round(cfg.preprocess.window_s * records[0].sampling_rate_hz))
        if win != cfg.model.input_len:
            raise ConfigError(f"prepared windows have {win} samples, model.input_len is {cfg.model.input_len}")
    return TrainingSet(records, targets)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


# ----------------------------------------------------------------- commands


def cmd_synth(cfg: ExperimentConfig) -> None:
    out = cfg.path("data_dir")
    entries = []
    for s in generate_dataset(cfg.synth, cfg.seed):
        rid = s.record.record_id
        rec_path = out / "records" / f"{rid}.json"
        write_record(s.record, rec_path)
        truth_path = out / "annotations" / f"{rid}.truth.json"
        write_annotation(s.truth, truth_path)
        scorer_paths = []
        for sc in s.scorers:
            p = out / "annotations" / f"{rid}.{sc.scorer_id}.json"
            write_annotation(sc, p)
            scorer_paths.append(p)
        entries.append(ManifestEntry(rec_path, [truth_path], s.split, scorer_paths))
        log.info("synth %s (%s): %d events", rid, s.split, len(s.truth))
    write_manifest(DatasetManifest(entries, out), cfg.path("manifest"))


def cmd_train(cfg: ExperimentConfig) -> None:
    manifest = _manifest(cfg)
    train = _load_split(cfg, manifest, "train")
    val = _load_split(cfg, manifest, "validation")
    if not train.records:
        raise ConfigError("manifest has no training records")
    if not val.records:
        raise ConfigError("manifest has no validation records")
    res = train_loop(train, val, cfg.model, cfg.preprocess, cfg.train, cfg.infer, seed=cfg.seed)
    extra = {
        "theta": res.theta,
        "best_epoch": res.best_epoch,
        "best_val_f1": res.best_f1,
        "adam": {"learning_rate": cfg.train.learning_rate, "weight_decay": cfg.train.weight_decay,
                 "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "config": to_dict(cfg),
    }
    save_checkpoint(res.model, cfg.path("checkpoint"), extra)
    write_log(res.history, cfg.path("train_log"))
    log.info("best epoch %d theta %.2f val F1 %.4f", res.best_epoch, res.theta, res.best_f1)


def cmd_predict(cfg: ExperimentConfig) -> None:
    model, doc = load_checkpoint(cfg.path("checkpoint"))
    theta = doc.get("theta", cfg.infer.theta) if cfg.run.theta_from_checkpoint else cfg.infer.theta
    infer_cfg = dataclasses.replace(cfg.infer, theta=theta)
    manifest = _manifest(cfg)
    out = cfg.path("predictions_dir")
    for e in manifest.entries:
        if e.split not in cfg.run.predict_splits:
            continue
        rec = read_record(e.record)
        ann = predict_record(model, rec, cfg.preprocess, infer_cfg)
        write_annotation(ann, out / f"{rec.record_id}.model.json")
        log.info("predicted %s: %d events", rec.record_id, len(ann))


def cmd_consensus(cfg: ExperimentConfig) -> None:
    manifest = _manifest(cfg)
    out = cfg.path("consensus_dir")
    for e in manifest.entries:
        if not e.scorers:
            continue
        rec = read_record(e.record)
        anns = [read_annotation(p, rec) for p in e.scorers]
        fs = cfg.consensus.sampling_rate_hz or rec.sampling_rate_hz
        cons = consensus(anns, ConsensusSpec(cfg.consensus.kappa, len(anns)), fs, rec.duration_s,
                         min_duration_s=cfg.consensus.min_duration_s)
        write_annotation(cons, out / f"{rec.record_id}.consensus.json")


def cmd_evaluate(cfg: ExperimentConfig) -> None:
    manifest = _manifest(cfg)
    preds = cfg.path("predictions_dir")
    scored = []
    for e in manifest.entries:
        if e.split not in cfg.run.evaluate_splits:
            continue
        rec = read_record(e.record)
        scorers = [read_annotation(p, rec) for p in e.scorers]
        if len(scorers) < 2:
            raise ArgumentError(f"record {rec.record_id!r} has {len(scorers)} scorer(s); evaluation needs >= 2")
        model_path = preds / f"{rec.record_id}.model.json"
        model = read_annotation(model_path, rec) if model_path.exists() else None
        scored.append(ScoredRecord(rec.record_id, rec.duration_s, rec.hours_of_sleep, rec.sampling_rate_hz,
                                   scorers, model))
    if not scored:
        raise ConfigError(f"no records in splits {list(cfg.run.evaluate_splits)}")
    if any(s.model is None for s in scored):
        for s in scored:
            s.model = None
    report = evaluate_dataset(scored, cfg.metrics)
    _write_json(cfg.path("evaluation"), report)


def _annotator_rows(report: dict) -> list[dict]:
    rows = list(report["scorers"]) + [report["average_scorers"]]
    if "model" in report:
        rows.append(report["model"])
    return rows


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_report(cfg: ExperimentConfig) -> None:
    path = cfg.path("evaluation")
    if not path.exists():
        raise ConfigError(f"evaluation {path} not found; run `evaluate` first")
    report = json.loads(path.read_text())
    out = cfg.path("report_dir")
    out.mkdir(parents=True, exist_ok=True)
    rows = _annotator_rows(report)
    (out / "annotators.csv").write_text(_csv_text(
        ["annotator", "acc_diagnosis", "mean_ahi_error", "std_ahi_error", "f1_iou_0.3", "std_f1"],
        [[r["name"], f"{r['diagnostic_accuracy']:.4f}", f"{r['mean_ahi_error']:.4f}", f"{r['std_ahi_error']:.4f}",
          f"{r['f1']:.4f}", f"{r['std_f1']:.4f}"] for r in rows],
    ))
    (out / "precision_recall.csv").write_text(_csv_text(
        ["annotator", "precision", "recall"],
        [[r["name"], f"{r['precision']:.4f}", f"{r['recall']:.4f}"] for r in rows],
    ))
    thresholds = [t for t, _ in rows[0]["f1_curve"]]
    (out / "f1_vs_iou.csv").write_text(_csv_text(
        ["annotator"] + [f"iou_{t:.1f}" for t in thresholds],
        [[r["name"]] + [f"{v:.4f}" for _, v in r["f1_curve"]] for r in rows],
    ))
    summary = {r["name"]: {k: r[k] for k in ("diagnostic_accuracy", "mean_ahi_error", "std_ahi_error",
                                              "f1", "std_f1", "precision", "recall")} for r in rows}
    _write_json(out / "summary.json", summary)
    _plots(rows, out)


def _plots(rows: list[dict], out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dosed"
    meta = {"Date": None, "Creator": None}

    fig, ax = plt.subplots(figsize=(6, 4))
    for r in rows:
        t, v = zip(*r["f1_curve"])
        style = "k-o" if r["name"] == "model" else "--"
        ax.plot(t, v, style, label=r["name"], markersize=3)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "f1_vs_iou.svg", format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r["name"] for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r["precision"] for r in rows], 0.4, label="precision")
    ax.bar(x + 0.2, [r["recall"] for r in rows], 0.4, label="recall")
    ax.set_xticks(x, names, rotation=30, fontsize=7)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "precision_recall.svg", format="svg", metadata=meta)
    plt.close(fig)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "consensus": cmd_consensus,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    codes = "\n".join(f"  {k}  {v}" for k, v in EXIT_CODES.items())
    p = argparse.ArgumentParser(
        prog="dosed",
        description="Apnea-hypopnea event detection pipeline.",
        epilog=f"exit codes:\n{codes}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="cap worker threads (numba and BLAS)")
    p.add_argument("--out", help="base directory for relative paths (default: the config file's directory)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set train.epochs=10 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides, base_dir=args.out)
        if args.threads:
            set_threads(args.threads)
        COMMANDS[args.command](cfg)
    except DosedError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
