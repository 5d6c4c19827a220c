"""Command-line surface for the pipeline.

Every command takes an optional TOML config plus ``--set section.key=value``
overrides, seeds all randomness from the config and writes a self-contained
run directory. Logs go to stderr; the exit code is 0 on success.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, config_to_toml, load_config
from .core import BinaryLabel, binarize_label, load_manifest, save_manifest
from .data import FrameStore
from .fixtures import expert_study_path, load_expert_study
from .flow import FlowEncoding, FlowParams, precompute_flow_stream
from .metrics import RaterMatrix, aggregate_runs, load_ratings, rater_threshold_analysis
from .mil import evaluate_video_level, load_predictions, save_predictions
from .model import load_checkpoint, save_checkpoint
from .report import (
    expert_study_report,
    table_thresholds,
    table_transfer,
    table_video_level,
    training_curves,
)
from .runs import RunDir
from .sampling import WindowPlan
from .synth import generate_dataset
from .training import run_cv, scaled_epochs, train_full_dataset
from .transfer import finetune_head, zero_shot_transfer

logger = logging.getLogger("painvid")


def _load_cfg(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config, overrides=args.set or [])
    cfg = ExperimentConfig()
    from .config import apply_override

    for item in args.set or []:
        apply_override(cfg, item)
    return cfg


def cmd_prepare_frames(args) -> int:
    try:
        import cv2
    except ImportError:
        print(
            "prepare-frames needs OpenCV; install the package with the [video] extra",
            file=sys.stderr,
        )
        return 1
    cap = cv2.VideoCapture(str(args.video))
    if not cap.isOpened():
        print(f"cannot open video {args.video}", file=sys.stderr)
        return 1
    src_fps = cap.get(cv2.CAP_PROP_FPS) or args.fps
    step = max(src_fps / args.fps, 1e-9)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    written = 0
    next_take = 0.0
    index = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if index >= next_take:
            rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
            if args.size:
                rgb = cv2.resize(rgb, (args.size[1], args.size[0]), interpolation=cv2.INTER_AREA)
            Image.fromarray(rgb).save(out / f"{written:06d}.png")
            written += 1
            next_take += step
        index += 1
    cap.release()
    print(f"wrote {written} frames at {args.fps} fps to {out}")
    return 0


def cmd_compute_flow(args) -> int:
    cfg = _load_cfg(args)
    manifest = load_manifest(args.manifest)
    params = FlowParams(alpha=cfg.data.flow_alpha, n_iters=cfg.data.flow_iters)
    enc = None
    if cfg.data.flow_clip_range > 0:
        enc = FlowEncoding(clip_range=cfg.data.flow_clip_range, channels=cfg.data.flow_channels)
    precompute_flow_stream(manifest, params, enc)
    print(f"flow written for {len(manifest)} videos under {manifest.base_dir}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    manifest = generate_dataset(cfg.synth_config(), cfg.synth.domain, args.out)
    print(
        f"generated {len(manifest)} videos ({cfg.synth.domain} domain) in {args.out}; "
        f"manifest at {Path(args.out) / 'manifest.csv'}"
    )
    return 0


def cmd_train_cv(args) -> int:
    cfg = _load_cfg(args)
    manifest = load_manifest(args.manifest or cfg.data.manifest)
    run = RunDir(args.out)
    run.write_config(config_to_toml(cfg))
    run.write_inputs_hash([args.manifest or cfg.data.manifest])
    output = run_cv(
        manifest,
        cfg.model.kind,
        cfg.model_config(),
        cfg.train_config(),
        n_repeats=args.repeats or cfg.train.repeats,
        plan=cfg.window_plan(),
    )
    agg = aggregate_runs(output.result)
    payload = {
        "dataset": manifest.domain_id,
        "n_folds": len(manifest.subjects),
        "repeats": args.repeats or cfg.train.repeats,
        "f1": {"mean": agg.mean_f1, "std": agg.std_f1},
        "accuracy": {"mean": agg.mean_acc, "std": agg.std_acc},
        "per_subject": {s: {"mean": m, "std": sd} for s, (m, sd) in agg.per_subject.items()},
        "mean_best_epoch": output.mean_best_epoch,
        "scores": [
            {"repeat": s.repeat, "subject": s.subject, "f1": s.f1, "accuracy": s.acc}
            for s in output.result.scores
        ],
        "globals": [
            {"repeat": g.repeat, "f1": g.f1, "accuracy": g.acc} for g in output.result.globals
        ],
    }
    run.write_json("result.json", payload)
    for fold in output.folds:
        sub = RunDir(run.path / f"rep{fold.repeat}_fold{fold.fold_index}_{fold.test_subject}")
        sub.write_history(fold.history)
        save_predictions(fold.predictions, sub.file("predictions.csv"))
    print(
        f"cross-validation on {manifest.domain_id}: "
        f"F1 {agg.mean_f1:.1f} ± {agg.std_f1:.1f}, "
        f"accuracy {agg.mean_acc:.1f} ± {agg.std_acc:.1f} "
        f"(mean best epoch {output.mean_best_epoch:.1f})"
    )
    return 0


def cmd_train_full(args) -> int:
    cfg = _load_cfg(args)
    manifest = load_manifest(args.manifest or cfg.data.manifest)
    epochs = args.epochs if args.epochs is not None else cfg.transfer.epochs
    if epochs <= 0 and args.scale_from:
        best, n_cv, n_full = args.scale_from
        epochs = scaled_epochs(best, int(n_cv), int(n_full))
    if epochs <= 0:
        print("train-full needs --epochs, --scale-from, or transfer.epochs > 0", file=sys.stderr)
        return 1
    run = RunDir(args.out)
    run.write_config(config_to_toml(cfg))
    run.write_inputs_hash([args.manifest or cfg.data.manifest])
    model, stats, meta = train_full_dataset(
        manifest, cfg.model.kind, cfg.model_config(), int(epochs), cfg.train_config(),
        plan=cfg.window_plan(),
    )
    ckpt = run.file("checkpoint.zip")
    save_checkpoint(ckpt, model, meta=meta)
    run.write_json("result.json", {"domain": manifest.domain_id, "epochs": int(epochs)})
    print(f"trained on full {manifest.domain_id} for {epochs} epochs; checkpoint at {ckpt}")
    return 0


def _resolve_checkpoint(source: str) -> Path:
    p = Path(source)
    if p.is_dir():
        p = p / "checkpoint.zip"
    if not p.exists():
        raise FileNotFoundError(f"no checkpoint at {p}")
    return p


def cmd_transfer(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _resolve_checkpoint(args.source)
    model, meta = load_checkpoint(ckpt)
    target = load_manifest(args.target)
    run = RunDir(args.out)
    run.write_config(config_to_toml(cfg))
    run.write_inputs_hash([ckpt, args.target])
    output = zero_shot_transfer(model, meta, target, plan=cfg.window_plan())
    run.write_text("transfer_result.json", output.to_json())
    save_predictions(output.predictions, run.file("predictions.csv"))
    print(table_transfer(output.per_subject, output.global_f1,
                         f"{output.source_domain} -> {output.target_domain}"))
    print(f"global F1 {output.global_f1:.1f}; results in {run.path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _resolve_checkpoint(args.source)
    model, meta = load_checkpoint(ckpt)
    target = load_manifest(args.target)
    run = RunDir(args.out)
    run.write_config(config_to_toml(cfg))
    run.write_inputs_hash([ckpt, args.target])
    result, output = finetune_head(
        model, meta, target, cfg.train_config(),
        n_repeats=args.repeats or cfg.transfer.repeats, plan=cfg.window_plan(),
    )
    agg = aggregate_runs(result)
    run.write_text("transfer_result.json", output.to_json())
    save_predictions(output.predictions, run.file("predictions.csv"))
    print(table_transfer(output.per_subject, output.global_f1,
                         f"{output.source_domain} FT-> {output.target_domain}"))
    print(f"fine-tuned head: F1 {agg.mean_f1:.1f} ± {agg.std_f1:.1f}; results in {run.path}")
    return 0


def cmd_mil_eval(args) -> int:
    cfg = _load_cfg(args)
    preds = load_predictions(args.predictions, clip_length=cfg.data.w_L)
    manifest = load_manifest(args.labels)
    video_labels = {rec.video_id: binarize_label(rec) for rec in manifest.records}
    rows = evaluate_video_level(preds, video_labels, k_fractions=cfg.mil.k_fractions)
    table = table_video_level(rows)
    print(table)
    if args.out:
        run = RunDir(args.out)
        run.write_text("video_level.txt", table + "\n")
        payload = [
            {"filter": r.name, "k": r.k_fraction, "per_subject": r.per_subject,
             "global": r.global_f1}
            for r in rows
        ]
        run.write_json("video_level.json", payload)
    return 0


def cmd_rater_analysis(args) -> int:
    out_rows = []
    if args.ratings:
        mat, rater_ids, clip_ids = load_ratings(args.ratings)
        labels = {}
        with open(args.labels, encoding="utf-8") as fh:
            import csv as _csv

            for row in _csv.DictReader(fh):
                labels[row["clip_id"]] = int(row["label"])
        raters = RaterMatrix(
            ratings=mat, labels=tuple(BinaryLabel(labels[c]) for c in clip_ids)
        )
        for t in args.thresholds:
            out_rows.append(rater_threshold_analysis(raters, t))
        print(table_thresholds(out_rows))
    else:
        clips = load_expert_study(args.fixture)
        from .metrics import expert_accuracy_from_correct_counts
        from .fixtures import EXPERT_STUDY_N_RATERS

        nopain, pain, total = expert_accuracy_from_correct_counts(
            [c.expert_n_correct for c in clips], [c.label for c in clips],
            EXPERT_STUDY_N_RATERS,
        )
        print(f"{'Threshold':<10}{'No pain':>9}{'Pain':>7}{'Total':>7}")
        print(f"{0:<10}{nopain:>9.1f}{pain:>7.1f}{total:>7.1f}")
    if args.out and out_rows:
        RunDir(args.out).write_text("thresholds.txt", table_thresholds(out_rows) + "\n")
    return 0


def cmd_explain(args) -> int:
    from .explain import grad_cam, render_overlays
    from .training import NormalizationStats, materialize_split
    from .core import Clip

    ckpt = _resolve_checkpoint(args.checkpoint)
    model, meta = load_checkpoint(ckpt)
    manifest = load_manifest(args.manifest)
    store = FrameStore(manifest)
    rec = manifest.by_video(args.video)
    clip = Clip(video_id=args.video, start_frame=args.start, length=args.length,
                label=binarize_label(rec))
    norm = meta["normalization"]
    stats = NormalizationStats(rgb_mean=tuple(norm["rgb_mean"]), rgb_std=tuple(norm["rgb_std"]))
    data = materialize_split([clip], store, stats)
    target = {"pain": 1, "no_pain": 0}[args.target_class]
    maps = grad_cam(model, data.rgb, data.flow, target_class=target, stream=args.stream)
    out_dir = Path(args.out) / f"{args.video}_t{args.start}"
    rgb_raw = store.clip_frames(clip, "rgb")
    flow_raw = store.clip_frames(clip, "flow")
    paths = render_overlays(rgb_raw, flow_raw, maps, out_dir)
    print(f"wrote {len(paths)} files to {out_dir}")
    return 0


def cmd_report(args) -> int:
    target = Path(args.path)
    out = Path(args.out) if args.out else (target if target.is_dir() else target.parent) / "report"
    if target.is_file() and target.suffix == ".csv":
        clips = load_expert_study(target)
        summary = expert_study_report(clips, out)
        print(summary["table"])
        print(f"macro F1 {summary['model_f1']['total']:.1f}")
        return 0
    if not target.is_dir():
        print(f"report target {target} is neither a run directory nor a study CSV",
              file=sys.stderr)
        return 1
    rendered = []
    result_file = target / "result.json"
    if result_file.exists():
        payload = json.loads(result_file.read_text())
        out.mkdir(parents=True, exist_ok=True)
        if "f1" in payload:
            lines = [
                f"dataset {payload.get('dataset', '?')}: "
                f"F1 {payload['f1']['mean']:.1f} ± {payload['f1']['std']:.1f}, "
                f"accuracy {payload['accuracy']['mean']:.1f} ± {payload['accuracy']['std']:.1f}"
            ]
            per_subject = payload.get("per_subject", {})
            for s in sorted(per_subject):
                ps = per_subject[s]
                lines.append(f"  {s}: {ps['mean']:.1f} ± {ps['std']:.1f}")
            text = "\n".join(lines)
            (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
            import csv as _csv, io as _io

            buf = _io.StringIO()
            writer = _csv.writer(buf, lineterminator="\n")
            writer.writerow(["subject", "mean_f1", "std_f1"])
            for s in sorted(per_subject):
                writer.writerow([s, per_subject[s]["mean"], per_subject[s]["std"]])
            (out / "per_subject.csv").write_text(buf.getvalue(), encoding="utf-8")
            print(text)
            rendered.append("summary")
    tr_file = target / "transfer_result.json"
    if tr_file.exists():
        payload = json.loads(tr_file.read_text())
        print(table_transfer(payload["per_subject"], payload["global"],
                             f"{payload['source_domain']} -> {payload['target_domain']}"))
        rendered.append("transfer")
    for hist in sorted(target.rglob("history.csv")):
        rows = []
        for line in hist.read_text().splitlines()[1:]:
            e, l, f = line.split(",")
            rows.append((int(e), float(l), float(f)))
        if rows:
            out.mkdir(parents=True, exist_ok=True)
            training_curves(rows, out / f"{hist.parent.name}_curves.png")
            rendered.append(hist.parent.name)
    if not rendered:
        print(f"nothing to report in {target}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="painvid", description=__doc__)
    parser.add_argument("--version", action="version", version=f"painvid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value")

    p = sub.add_parser("prepare-frames", help="extract frames from a video at a fixed rate")
    p.add_argument("video")
    p.add_argument("out")
    p.add_argument("--fps", type=float, default=2.0)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(func=cmd_prepare_frames)

    p = sub.add_parser("compute-flow", help="precompute the optical-flow stream")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_compute_flow)

    p = sub.add_parser("synth", help="generate a synthetic two-domain dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-cv", help="leave-one-subject-out cross-validation")
    add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_train_cv)

    p = sub.add_parser("train-full", help="train on a whole domain for fixed epochs")
    add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scale-from", type=float, nargs=3,
                   metavar=("BEST_EPOCH", "N_TRAIN_CV", "N_TRAIN_FULL"),
                   help="derive epochs by scaling a CV best epoch")
    p.set_defaults(func=cmd_train_full)

    p = sub.add_parser("transfer", help="zero-shot evaluation on another domain")
    add_common(p)
    p.add_argument("--source", required=True, help="run dir or checkpoint file")
    p.add_argument("--target", required=True, help="target manifest CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("finetune", help="fine-tune the classification head on a target domain")
    add_common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("mil-eval", help="video-level evaluation with MIL filtering")
    add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True, help="manifest CSV carrying video labels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mil_eval)

    p = sub.add_parser("rater-analysis", help="expert-rater threshold analysis")
    add_common(p)
    p.add_argument("--ratings", help="ratings.csv (rater_id,clip_id,rating)")
    p.add_argument("--labels", help="clip_id,label CSV for --ratings")
    p.add_argument("--thresholds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--fixture", default=str(expert_study_path()),
                   help="bundled expert-study CSV (used without --ratings)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rater_analysis)

    p = sub.add_parser("explain", help="saliency overlays for one clip")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--length", type=int, default=10)
    p.add_argument("--target-class", choices=["pain", "no_pain"], default="pain")
    p.add_argument("--stream", choices=["rgb", "flow"], default="rgb")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", help="render tables and figures from results")
    p.add_argument("path", help="run directory or expert-study CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
