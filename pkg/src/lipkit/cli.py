"""Command-line entry points chaining the modules into the data/train/eval pipeline.

Subcommands:

    synth       write a synthetic micro-dataset (clips + manifest)
    build       filter, balance/split and optionally upsample a pool manifest
    preprocess  align, crop and motion-filter raw clips using landmark files
    train       run the training recipe from a config file
    eval        score a checkpoint on a manifest's test split

Landmark files are plain text, one line per frame:

    frame_index x_left y_left x_right y_right x_center y_center x_nose y_nose

giving the lip corners, lip center and nose tip. ``LRWR_SEED`` in the
environment overrides the training config's seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from . import checkpoint as ckpt
from . import dataset as ds
from . import figures
from .config import load_train_config
from .errors import FormatError
from .evaluation import emit_report, evaluate
from .geometry import (
    ClipQualityPredicate,
    FrameLandmarks,
    Point2,
    accept_all_clips,
    align_rotation,
    crop_box,
    extract_mouth_crop,
    motion_filter,
)
from .storage import CLIP_SUFFIX, atomic_write_bytes, read_clip, write_clip
from .training import load_train_state, train

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _parse_landmark_file(path: Path, frame_count: int) -> list[FrameLandmarks]:
    by_index: dict[int, FrameLandmarks] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise FormatError(f"{path}:{lineno}: expected frame index plus 8 reals")
        try:
            idx = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if idx in by_index:
            raise FormatError(f"{path}:{lineno}: duplicate frame index {idx}")
        by_index[idx] = FrameLandmarks(
            left_lip_corner=Point2(vals[0], vals[1]),
            right_lip_corner=Point2(vals[2], vals[3]),
            lip_center=Point2(vals[4], vals[5]),
            nose_tip=Point2(vals[6], vals[7]),
        )
    if sorted(by_index) != list(range(frame_count)):
        raise FormatError(
            f"{path}: landmark frame indices do not cover 0..{frame_count - 1}"
        )
    return [by_index[i] for i in range(frame_count)]


def _load_raw_clip(entry: Path) -> np.ndarray:
    if entry.is_file() and entry.suffix == CLIP_SUFFIX:
        return read_clip(entry)
    if entry.is_dir():
        frames = []
        files = sorted(
            p for p in entry.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not files:
            raise FormatError(f"{entry}: no frame images found")
        for f in files:
            img = cv2.imread(str(f), cv2.IMREAD_GRAYSCALE)
            if img is None:
                raise FormatError(f"{f}: unreadable image")
            frames.append(img)
        if len({f.shape for f in frames}) != 1:
            raise FormatError(f"{entry}: frames have mixed sizes")
        return np.stack(frames)
    raise FormatError(f"{entry}: not a clip file or frame directory")


def run_preprocess(
    frames_dir: str | os.PathLike,
    landmarks_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    min_iou: float = 0.5,
    out_size: int = 112,
    quality_hook: ClipQualityPredicate = accept_all_clips,
) -> tuple[int, int, int]:
    """Align, crop and filter every clip under ``frames_dir``.

    Returns (kept, filtered, failed). Clips whose landmark track jumps below
    ``min_iou`` between consecutive crop boxes, or that the quality hook
    rejects, are filtered; clips with malformed inputs are skipped with a
    warning and counted as failed.
    """
    frames_dir = Path(frames_dir)
    landmarks_dir = Path(landmarks_dir)
    out_dir = Path(out_dir)
    entries = sorted(
        p
        for p in frames_dir.iterdir()
        if p.is_dir() or (p.is_file() and p.suffix == CLIP_SUFFIX)
    )
    kept = filtered = failed = 0
    for entry in entries:
        stem = entry.name[: -len(CLIP_SUFFIX)] if entry.suffix == CLIP_SUFFIX else entry.name
        lm_path = landmarks_dir / f"{stem}.txt"
        try:
            clip = _load_raw_clip(entry)
            landmarks = _parse_landmark_file(lm_path, clip.shape[0])
            aligned, aligned_lm = align_rotation(clip, landmarks)
            track = [crop_box(lm) for lm in aligned_lm]
            if not motion_filter(track, min_iou):
                log.info("filtered %s: sharp movement in the landmark track", entry.name)
                filtered += 1
                continue
            crops = np.stack(
                [
                    extract_mouth_crop(aligned[t], aligned_lm[t], out_size)
                    for t in range(aligned.shape[0])
                ]
            )
            if not quality_hook(crops):
                log.info("filtered %s: rejected by quality hook", entry.name)
                filtered += 1
                continue
            write_clip(crops, out_dir / f"{stem}{CLIP_SUFFIX}")
            kept += 1
        except (FormatError, OSError, ValueError) as exc:
            log.warning("skipping %s: %s", entry.name, exc)
            failed += 1
    return kept, filtered, failed


def _cmd_synth(args) -> int:
    manifest = ds.generate_synthetic(
        args.out,
        classes=args.classes,
        samples_per_class=args.samples,
        frames=args.frames,
        size=args.size,
        seed=args.seed,
    )
    train_n = len(manifest.split_records(ds.SPLIT_TRAIN))
    test_n = len(manifest.split_records(ds.SPLIT_TEST))
    print(
        f"wrote {len(manifest.records)} samples ({train_n} train / {test_n} test) "
        f"across {len(manifest.classes)} classes to {args.out}"
    )
    return 0


def _cmd_build(args) -> int:
    pool = ds.load_manifest(args.pool)
    filtered = ds.filter_classes(pool, args.min_count)
    balanced = ds.balance_and_split(filtered, args.per_class, args.test_per_class, args.seed)
    if args.upsample_to is not None:
        unused = ds.subtract(filtered, balanced)
        balanced = ds.upsample(balanced, unused, args.upsample_to, args.seed)
    out = Path(args.out)
    # Re-anchor clip paths so they stay resolvable from the output manifest.
    root = pool.root if pool.root is not None else Path(".")
    out_parent = out.parent
    records = [
        replace(r, clip_path=os.path.relpath(root / r.clip_path, out_parent))
        for r in balanced.records
    ]
    final = ds.Manifest(
        records,
        balanced.classes,
        root=out_parent,
        per_class_train=balanced.per_class_train,
        per_class_test=balanced.per_class_test,
    )
    final.save(out)
    print(
        f"wrote manifest with {len(final.records)} records, {len(final.classes)} classes "
        f"({final.per_class_train} train / {final.per_class_test} test per class) to {out}"
    )
    return 0


def _cmd_preprocess(args) -> int:
    kept, filtered, failed = run_preprocess(
        args.frames_dir, args.landmarks, args.out, min_iou=args.min_iou
    )
    print(f"kept {kept}, filtered {filtered}, failed {failed}")
    if kept == 0 and filtered == 0 and failed > 0:
        return 1
    return 0


def _cmd_train(args) -> int:
    try:
        config = load_train_config(args.config)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    env_seed = os.environ.get("LRWR_SEED")
    if env_seed is not None:
        config.seed = int(env_seed)
    manifest = ds.load_manifest(args.data)
    out_dir = Path(args.out)
    state, rows = train(manifest, config, out_dir, resume=args.resume)
    if rows:
        print(f"final test accuracy: {rows[-1]['test_acc']:.4f} (best {state.best_acc:.4f})")
    else:
        print("no epochs run; wrote initialized checkpoint")
    ckpt.save_model(state.model, out_dir / "model.ckpt")
    metrics = out_dir / "metrics.csv"
    if rows:
        figures.render_training_curves(metrics, out_dir / "curves.png")
    print(f"metrics: {metrics}")
    return 0


def _load_any_model(path: Path):
    _, meta = ckpt.read_tensors(path)
    if meta.get("kind") == "model":
        return ckpt.load_model(path)
    state, _ = load_train_state(path)
    return state.model


def _cmd_eval(args) -> int:
    model = _load_any_model(Path(args.checkpoint))
    manifest = ds.load_manifest(args.data)
    report = evaluate(model, manifest)
    sys.stdout.write(emit_report(report, "text").decode("utf-8"))
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out_dir / "report.txt", emit_report(report, "text"))
        atomic_write_bytes(out_dir / "report.csv", emit_report(report, "csv"))
        figures.render_confusion(report, out_dir / "confusion.png")
        figures.render_per_class(report, out_dir / "per_class.png")
        metrics = Path(args.checkpoint).parent / "metrics.csv"
        if metrics.exists():
            figures.render_training_curves(metrics, out_dir / "curves.png")
        print(f"report written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipkit", description="word-level lipreading toolkit"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic micro-dataset")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--samples", type=int, default=40, help="samples per class")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=32, help="frame side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build", help="filter, balance and split a pool manifest")
    p.add_argument("--pool", required=True, help="pool manifest path")
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--min-count", type=int, default=500)
    p.add_argument("--upsample-to", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("preprocess", help="align, crop and motion-filter raw clips")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--landmarks", required=True, help="directory of <clip>.txt landmark files")
    p.add_argument("--out", required=True)
    p.add_argument("--min-iou", type=float, default=0.5)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from latest.ckpt in --out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", default=None, help="directory for report files and figures")
    p.set_defaults(func=_cmd_eval)
    return parser


def _validate_args(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "synth":
        if args.classes < 2:
            parser.error("--classes must be at least 2")
        if args.samples < 2:
            parser.error("--samples must be at least 2")
    if args.command == "build" and not 0 <= args.test_per_class < args.per_class:
        parser.error("--test-per-class must be smaller than --per-class")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate_args(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
