"""Command line entry point: synth, split, train, eval, cam, compare, run.

Each subcommand exits nonzero on any validation error and zero on success.
The `run` subcommand chains stages into a self-contained run directory; one
global seed fans out to per-stage seeds by stable hashing, so adding a stage
never perturbs another stage's randomness.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .cam import cam_mask_contrast, grad_cam_pp, render_cam
from .config import RunConfig, load_config, save_config
from .errors import DependencyError, ForgeSegError, ValidationError
from .forge import build_desk_corpus, load_image, load_mask
from .manifest import DatasetManifest, read_manifest, write_manifest
from .metrics import MetricsReport, compare_runs, evaluate
from .model import build_model, load_checkpoint
from .seeding import derive_seed
from .train import TrainConfig, train
from . import forge

PIPELINE_STAGES = ("synth", "train", "eval", "cam")


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = RunConfig()
        config.validate()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _stage_seed(config: RunConfig, stage: str) -> int:
    return derive_seed(config.seed, stage)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    config = _load_run_config(args)
    out_dir = Path(args.out)
    manifest = build_desk_corpus(config.data, _stage_seed(config, "synth"), out_dir)
    counts = {split: len(manifest.split_records(split)) for split in ("train", "val", "test")}
    print(f"wrote {len(manifest.records)} samples to {out_dir} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def _cmd_split(args) -> int:
    path = Path(args.manifest)
    manifest = read_manifest(path)
    splits = forge.split_by_rank(manifest.records, args.train, args.test)
    updated = manifest.with_splits(splits)
    out = Path(args.out) if args.out else path
    write_manifest(updated, out)
    print(f"wrote {out} (train {args.train}, test {args.test}, "
          f"val {len(updated.records) - args.train - args.test})")
    return 0


def _cmd_train(args) -> int:
    config = _load_run_config(args)
    if args.branch:
        config.train.branch_mode = args.branch
    config.train.seed = _stage_seed(config, "train")
    config.validate()
    manifest = read_manifest(args.manifest)
    model = build_model(config.model, rng_seed=config.train.seed)
    result = train(model, manifest, config.train, out_dir=args.out)
    print(f"trained {config.train.steps} steps "
          f"(loss {result.initial_loss:.4f} -> {result.final_loss:.4f}); "
          f"final checkpoint: {result.final_checkpoint}")
    return 0


def _pick_checkpoint(train_dir: Path) -> Path:
    for name in ("ckpt_best.pt", "ckpt_final.pt"):
        candidate = train_dir / name
        if candidate.exists():
            return candidate
    raise DependencyError(f"no checkpoint under {train_dir}")


def _cmd_eval(args) -> int:
    config = _load_run_config(args)
    manifest = read_manifest(args.manifest)
    checkpoint = load_checkpoint(args.checkpoint)
    split = args.split or config.eval.split
    report = evaluate(
        checkpoint.model,
        manifest,
        split,
        threshold_det=config.eval.threshold_det,
        threshold_seg=config.eval.threshold_seg,
        batch_size=config.eval.batch_size,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "report.json")
    text = report.to_text(label=Path(args.checkpoint).stem)
    (out_dir / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def _cmd_cam(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    image = load_image(args.image)
    cam_path, overlay_path = render_cam(checkpoint.model, image, args.out)
    print(f"wrote {cam_path} and {overlay_path}")
    if args.mask:
        mask = load_mask(args.mask)
        inside, outside = cam_mask_contrast(grad_cam_pp(checkpoint.model, image), mask)
        print(f"mean activation inside mask {inside:.4f}, outside {outside:.4f}")
    return 0


def _cmd_compare(args) -> int:
    reports = [MetricsReport.load(p) for p in args.reports]
    labels = args.labels or [Path(p).stem for p in args.reports]
    table = compare_runs(reports, labels)
    text = table.to_text()
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        table.save(out_dir / "compare.json")
        (out_dir / "compare.txt").write_text(text + "\n")
    return 0


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    run_pipeline(config, stages, Path(args.out))
    return 0


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def run_pipeline(config: RunConfig, stages: Sequence[str], out_dir: Path | str) -> dict[str, Path]:
    """Execute the requested stages in order inside one run directory."""
    unknown = set(stages) - set(PIPELINE_STAGES)
    if unknown:
        raise ValidationError(
            f"unknown stages {sorted(unknown)}, expected a subset of {PIPELINE_STAGES}"
        )
    if not stages:
        raise ValidationError("no stages requested")
    config.validate()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / "config.yaml")
    artifacts: dict[str, Path] = {"config": out_dir / "config.yaml"}

    data_dir = out_dir / "data"
    train_dir = out_dir / "train"
    manifest: Optional[DatasetManifest] = None

    if "synth" in stages:
        manifest = build_desk_corpus(config.data, _stage_seed(config, "synth"), data_dir)
        artifacts["manifest"] = data_dir / "manifest.jsonl"

    def _manifest() -> DatasetManifest:
        nonlocal manifest
        if manifest is None:
            path = data_dir / "manifest.jsonl"
            if not path.exists():
                raise DependencyError(
                    f"no dataset at {path}; run the synth stage first or place a manifest there"
                )
            manifest = read_manifest(path)
        return manifest

    if "train" in stages:
        seed = _stage_seed(config, "train")
        train_config = TrainConfig(**{**config.train.to_dict(), "seed": seed})
        model = build_model(config.model, rng_seed=seed)
        result = train(model, _manifest(), train_config, out_dir=train_dir)
        artifacts["train_log"] = result.log_path
        artifacts["checkpoint"] = result.final_checkpoint

    if "eval" in stages or "cam" in stages:
        ckpt_path = _pick_checkpoint(train_dir)
        model = load_checkpoint(ckpt_path).model

    if "eval" in stages:
        report = evaluate(
            model,
            _manifest(),
            config.eval.split,
            threshold_det=config.eval.threshold_det,
            threshold_seg=config.eval.threshold_seg,
            batch_size=config.eval.batch_size,
        )
        reports_dir = out_dir / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        report.save(reports_dir / "report.json")
        (reports_dir / "report.txt").write_text(report.to_text() + "\n")
        artifacts["report"] = reports_dir / "report.json"

    if "cam" in stages:
        artifacts["cam_report"] = _cam_stage(model, _manifest(), config, out_dir / "cam")

    return artifacts


def _cam_stage(model, manifest: DatasetManifest, config: RunConfig, cam_dir: Path,
               max_renders: int = 8) -> Path:
    """Render activation maps for fake eval samples and report mask contrast."""
    cam_dir.mkdir(parents=True, exist_ok=True)
    records = [r for r in manifest.split_records(config.eval.split) if r.label == 1]
    if not records:
        raise DependencyError(f"no fake samples in split {config.eval.split!r} to render")
    rows = []
    hits = 0
    for i, record in enumerate(records):
        image = load_image(manifest.resolve(record.image_path))
        mask = load_mask(manifest.resolve(record.mask_path))
        cam = grad_cam_pp(model, image)
        inside, outside = cam_mask_contrast(cam, mask)
        hits += int(inside > outside)
        rows.append({
            "image": record.image_path,
            "inside_mean": inside,
            "outside_mean": outside,
        })
        if i < max_renders:
            render_cam(model, image, cam_dir / f"{Path(record.image_path).stem}_cam.png")
    report = {
        "n_fake": len(records),
        "n_inside_gt_outside": hits,
        "fraction": hits / len(records),
        "samples": rows,
    }
    path = cam_dir / "cam_report.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forgeseg",
        description="Forgery synthesis, joint detection/segmentation training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("--seed", type=int, help="global seed override")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="reassign train/val/test splits by rank")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", type=int, required=True, help="first N samples become train")
    p.add_argument("--test", type=int, required=True, help="last M samples become test")
    p.add_argument("--out", help="output manifest path (default: rewrite in place)")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train on a manifest's train split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.add_argument("--branch", choices=("joint", "no-seg", "no-det"))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cam", help="render a class activation map for one image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output heat-map path")
    p.add_argument("--mask", help="optional ground-truth mask for a contrast readout")
    p.set_defaults(func=_cmd_cam)

    p = sub.add_parser("compare", help="line up several evaluation reports")
    common(p)
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", help="optional directory for table artifacts")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("run", help="run pipeline stages into one directory")
    common(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--stages", default="synth,train,eval,cam",
                   help="comma-separated subset of synth,train,eval,cam")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ForgeSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
