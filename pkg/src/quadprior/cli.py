"""Command-line entry point wiring the pipeline stages together.

Every stage is also a standalone subcommand. The ``pipeline`` subcommand
chains train -> sample -> annotate -> merge -> export under one master seed;
each stage's summary is printed as a single JSON line and collected into
<out_dir>/summary.json. Failures exit 1 with one machine-parsable error line
on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import boundary as bnd
from . import embedding as emb
from . import evalpck as ev
from . import sampler as smp
from . import vae as vp
from .config import ConfigFileError, PipelineConfig, parse_config
from .poses import PoseError, load_pose_dataset, save_pose_dataset
from .seeding import derive_seed
from .skeleton import (
    ImageMeta,
    annotations_to_coco,
    default_camera,
    default_rig,
    forward_kinematics,
    generate_fk_poses,
    load_camera,
    load_rig,
    make_annotation,
    project_keypoints,
    shift_projection,
)

log = logging.getLogger("quadprior")


def _load_rgb(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _load_rgba(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGBA"), dtype=np.float64) / 255.0


def _rig_and_camera(args):
    rig = load_rig(args.rig) if getattr(args, "rig", None) else default_rig()
    cam = load_camera(args.camera) if getattr(args, "camera", None) else default_camera()
    return rig, cam


def _ranges_table(spec: str) -> smp.AngleRangeTable:
    return smp.default_ranges() if spec == "default" else smp.load_ranges(spec)


def cmd_train_prior(args) -> dict:
    rig, _ = _rig_and_camera(args)
    if args.poses:
        dataset = load_pose_dataset(args.poses)
    else:
        dataset = generate_fk_poses(rig, args.n_poses, derive_seed(args.seed, "dataset"))
    config = vp.TrainConfig(
        learning_rate=args.lr,
        w1=args.w1,
        w2=args.w2,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=derive_seed(args.seed, "train"),
    )
    model = vp.new_prior(seed=derive_seed(args.seed, "weights"))
    model, history = vp.train(model, dataset, config)
    vp.save_model(args.out, model, config)
    log.info("trained %d epochs on %d poses", len(history), len(dataset))
    return {
        "command": "train-prior",
        "model": str(args.out),
        "poses": len(dataset),
        "epochs": len(history),
        "first_epoch": history[0]._asdict() if history else None,
        "final_epoch": history[-1]._asdict() if history else None,
    }


def cmd_sample_poses(args) -> dict:
    model, _ = vp.load_model(args.model)
    table = _ranges_table(args.ranges)
    poses, rep = smp.sample_refined(
        model,
        table,
        n_accepted=args.count,
        variance_scale=args.variance_scale,
        rng_seed=args.seed,
        per_component=args.per_component,
    )
    out = Path(args.out)
    save_pose_dataset(out, poses)
    report_path = out.with_suffix(".report.json")
    report_path.write_text(json.dumps({**vars(rep), "variance_scale": args.variance_scale}))
    return {
        "command": "sample-poses",
        "poses": str(out),
        "report": str(report_path),
        "dropout_rate": rep.dropout_rate,
    }


def _annotate(rig, cam, poses, species, offsets=None):
    """FK + projection + annotation for every pose; returns (annos, metas)."""
    width, height = cam.image_size
    annos, metas = [], []
    for i, pose in enumerate(poses):
        posed = forward_kinematics(rig, pose)
        proj = project_keypoints(posed, rig, cam)
        if offsets is not None:
            proj = shift_projection(proj, *offsets[i], cam.image_size)
        meta = ImageMeta(i, width, height, f"gen_{i:04d}.png")
        annos.append(make_annotation(proj, meta))
        metas.append(meta)
    return annos, metas


def cmd_gen_annotations(args) -> dict:
    rig, cam = _rig_and_camera(args)
    poses = load_pose_dataset(args.poses)
    annos, metas = _annotate(rig, cam, poses, args.species)
    doc = annotations_to_coco(annos, metas, category_name=args.species)
    Path(args.out).write_text(json.dumps(doc, indent=2))
    return {"command": "gen-annotations", "annotations": str(args.out), "count": len(annos)}


def cmd_merge_boundaries(args) -> dict:
    if args.animal_edges:
        if not args.mask:
            raise bnd.ImageError("--mask is required with --animal-edges")
        animal_map = bnd.load_boundary_png(args.animal_edges)
        mask = bnd.load_mask_png(args.mask)
    elif args.animal:
        rgba = _load_rgba(Path(args.animal))
        if args.background:
            h, w = _load_rgb(Path(args.background)).shape[:2]
        else:
            h, w = bnd.load_boundary_png(args.background_edges).values.shape
        placement = bnd.Placement(args.dx, args.dy, args.scale)
        placed, mask = bnd.composite_foreground(rgba, np.zeros((h, w, 3)), placement)
        animal_map = bnd.soft_edges(placed)
    else:
        raise bnd.ImageError("give either --animal (RGBA image) or --animal-edges (map PNG)")

    if args.background_edges:
        bg_map = bnd.load_boundary_png(args.background_edges)
    elif args.background:
        bg_map = bnd.soft_edges(_load_rgb(Path(args.background)))
    else:
        raise bnd.ImageError("give either --background (image) or --background-edges (map PNG)")

    merged = bnd.merge_boundaries(animal_map, mask, bg_map, mask_dilation_px=args.dilate)
    bnd.save_boundary_png(args.out, merged)
    return {"command": "merge-boundaries", "merged": str(args.out)}


def cmd_export_jobs(args) -> dict:
    annotations_path = Path(args.annotations)
    doc = json.loads(annotations_path.read_text())
    image_ids = [img["id"] for img in doc.get("images", [])]
    maps = [bnd.load_boundary_png(p) for p in args.maps]
    if len(maps) != len(image_ids):
        raise bnd.ImageError(
            f"{len(maps)} maps but {len(image_ids)} annotated images; they must pair 1:1"
        )
    jobs = []
    for i, bmap in enumerate(maps):
        env = bnd.DEFAULT_ENVIRONMENTS[
            derive_seed(args.master_seed, "env", i) % len(bnd.DEFAULT_ENVIRONMENTS)
        ]
        weather = bnd.DEFAULT_WEATHER[
            derive_seed(args.master_seed, "weather", i) % len(bnd.DEFAULT_WEATHER)
        ]
        jobs.append(
            bnd.JobSpec(
                conditioning=bmap,
                prompt_text=bnd.build_prompt(args.species, env, weather),
                annotation_ref={"path": str(annotations_path), "image_id": image_ids[i]},
            )
        )
    manifest = bnd.export_jobs(jobs, args.out_dir, args.master_seed)
    return {
        "command": "export-jobs",
        "manifest": str(Path(args.out_dir) / bnd.MANIFEST_NAME),
        "jobs": len(manifest.entries),
    }


def cmd_eval_pck(args) -> None:
    pairs = ev.load_dataset(args.gt, args.pred)
    result = ev.pck(
        pairs,
        alpha=args.alpha,
        normalizer=args.normalizer,
        count_occluded=not args.visible_only,
    )
    sys.stdout.write(ev.report(result, args.format))
    return None


def cmd_tsne(args) -> dict:
    feature_sets = []
    for f in args.features:
        feature_sets.extend(emb.load_features(f))
    config = emb.TsneConfig(
        perplexity=args.perplexity, iterations=args.iterations, seed=args.seed
    )
    result = emb.tsne(feature_sets, config)
    emb.save_embedding_csv(args.out, result)
    return {
        "command": "tsne",
        "embedding": str(args.out),
        "points": len(result.points),
        "kl_initial": result.kl_history[0],
        "kl_final": result.kl_history[-1],
    }


def _synthetic_background(width: int, height: int, seed: int) -> np.ndarray:
    """Low-frequency field with a horizon line; a stand-in scene photo."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.25, 0.9, size=(6, 8, 3))
    img = np.asarray(
        Image.fromarray(np.round(coarse * 255).astype(np.uint8), mode="RGB").resize(
            (width, height), Image.BILINEAR
        ),
        dtype=np.float64,
    ) / 255.0
    horizon = int(height * rng.uniform(0.35, 0.55))
    img[:horizon] = 0.6 * img[:horizon] + 0.4 * np.array([0.65, 0.78, 0.92])
    img[horizon:] = 0.7 * img[horizon:] + 0.3 * np.array([0.35, 0.45, 0.25])
    return np.clip(img, 0.0, 1.0)


def _background_paths(backgrounds_dir: Path | None) -> list[Path]:
    if backgrounds_dir is None:
        return []
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    return sorted(p for p in Path(backgrounds_dir).iterdir() if p.suffix.lower() in exts)


def cmd_pipeline(args) -> dict:
    overrides = {
        "master_seed": args.master_seed,
        "sample.count": args.count,
        "paths.out_dir": str(Path(args.out_dir).resolve()) if args.out_dir else None,
        "train.epochs": args.epochs,
    }
    config = parse_config(args.config, overrides)
    out = Path(config.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ms = config.master_seed
    stages: dict[str, dict] = {}

    rig = load_rig(config.paths.rig) if config.paths.rig else default_rig()
    cam = load_camera(config.paths.camera) if config.paths.camera else default_camera()
    width, height = cam.image_size

    # Stage 1: pose prior (train or load).
    if config.paths.model:
        model, _ = vp.load_model(config.paths.model)
        stages["train"] = {"loaded": str(config.paths.model)}
    else:
        if config.paths.train_poses:
            dataset = load_pose_dataset(config.paths.train_poses)
        else:
            dataset = generate_fk_poses(rig, config.train.n_poses, derive_seed(ms, "dataset"))
        tc = vp.TrainConfig(
            learning_rate=config.train.learning_rate,
            w1=config.train.w1,
            w2=config.train.w2,
            epochs=config.train.epochs,
            batch_size=config.train.batch_size,
            seed=derive_seed(ms, "train"),
        )
        model = vp.new_prior(seed=derive_seed(ms, "weights"))
        model, history = vp.train(model, dataset, tc)
        vp.save_model(out / "model.json", model, tc)
        stages["train"] = {
            "model": str(out / "model.json"),
            "poses": len(dataset),
            "final_rec": history[-1].rec if history else None,
        }
    _write_stage_summary(out, "train", stages["train"])

    # Stage 2: refined pose sampling.
    table = _ranges_table(config.sample.ranges)
    refined, rep = smp.sample_refined(
        model,
        table,
        n_accepted=config.sample.count,
        variance_scale=config.sample.variance_scale,
        rng_seed=derive_seed(ms, "sample"),
        per_component=config.sample.per_component,
    )
    save_pose_dataset(out / "poses.json", refined)
    (out / "poses.report.json").write_text(json.dumps(vars(rep)))
    stages["sample"] = {
        "poses": str(out / "poses.json"),
        "dropout_rate": rep.dropout_rate,
        "count": len(refined),
    }
    _write_stage_summary(out, "sample", stages["sample"])

    # Stage 3: keypoint annotations (with per-image placement jitter shared
    # with the compositing stage so labels stay aligned).
    offsets = []
    for i in range(len(refined)):
        rng = np.random.default_rng(derive_seed(ms, "placement", i))
        offsets.append((int(rng.integers(-15, 16)), int(rng.integers(-15, 16))))
    annos, metas = _annotate(rig, cam, refined, config.annotate.species, offsets)
    coco = annotations_to_coco(annos, metas, category_name=config.annotate.species)
    (out / "annotations.json").write_text(json.dumps(coco, indent=2))
    stages["annotate"] = {"annotations": str(out / "annotations.json"), "count": len(annos)}
    _write_stage_summary(out, "annotate", stages["annotate"])

    # Stage 4: composite silhouettes and merge boundary maps.
    bg_files = _background_paths(config.paths.backgrounds)
    (out / "masks").mkdir(exist_ok=True)
    merged_maps = []
    for i, pose in enumerate(refined):
        posed = forward_kinematics(rig, pose)
        layer = bnd.render_skeleton_silhouette(posed, rig, cam)
        if bg_files:
            bg = _load_rgb(bg_files[i % len(bg_files)])
            if bg.shape[:2] != (height, width):
                img = Image.fromarray(np.round(bg * 255).astype(np.uint8))
                bg = np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64) / 255.0
        else:
            bg = _synthetic_background(width, height, derive_seed(ms, "background", i))
        placement = bnd.Placement(*offsets[i])
        placed, mask = bnd.composite_foreground(layer, np.zeros((height, width, 3)), placement)
        animal_map = bnd.soft_edges(placed)
        bg_map = bnd.soft_edges(bg)
        merged_maps.append(bnd.merge_boundaries(animal_map, mask, bg_map))
        bnd.save_mask_png(out / "masks" / f"mask_{i:04d}.png", mask)
    stages["merge"] = {"maps": len(merged_maps), "masks_dir": str(out / "masks")}
    _write_stage_summary(out, "merge", stages["merge"])

    # Stage 5: export diffusion jobs.
    jobs = []
    for i, bmap in enumerate(merged_maps):
        env = bnd.DEFAULT_ENVIRONMENTS[derive_seed(ms, "env", i) % len(bnd.DEFAULT_ENVIRONMENTS)]
        weather = bnd.DEFAULT_WEATHER[derive_seed(ms, "weather", i) % len(bnd.DEFAULT_WEATHER)]
        jobs.append(
            bnd.JobSpec(
                conditioning=bmap,
                prompt_text=bnd.build_prompt(config.annotate.species, env, weather),
                annotation_ref={"path": "../annotations.json", "image_id": metas[i].image_id},
            )
        )
    manifest = bnd.export_jobs(jobs, out / "jobs", ms)
    stages["export"] = {
        "manifest": str(out / "jobs" / bnd.MANIFEST_NAME),
        "jobs": len(manifest.entries),
    }
    _write_stage_summary(out, "export", stages["export"])

    (out / "summary.json").write_text(json.dumps({"master_seed": ms, "stages": stages}, indent=2))
    return {"command": "pipeline", "out_dir": str(out), "stages": stages}


def _write_stage_summary(out: Path, stage: str, summary: dict) -> None:
    (out / f"summary_{stage}.json").write_text(json.dumps({"stage": stage, **summary}))
    log.info("stage %s done: %s", stage, summary)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadprior",
        description="Quadruped pose prior, pose filtering, synthetic keypoint "
        "annotation, boundary-map conditioning prep, and evaluation tools.",
    )
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-prior", help="train the pose-prior model")
    p.add_argument("--poses", help="training pose dataset JSON (default: FK-generated)")
    p.add_argument("--rig", help="rig JSON for FK-generated training poses")
    p.add_argument("--n-poses", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--w1", type=float, default=0.005)
    p.add_argument("--w2", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_prior)

    p = sub.add_parser("sample-poses", help="sample filtered poses from a trained prior")
    p.add_argument("--model", required=True)
    p.add_argument("--ranges", default="default", help="'default' or a range-table JSON")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--variance-scale", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-component", action="store_true",
                   help="gate all three components per joint, not just the primary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_poses)

    p = sub.add_parser("gen-annotations", help="FK + projection -> COCO keypoints")
    p.add_argument("--rig")
    p.add_argument("--poses", required=True)
    p.add_argument("--camera")
    p.add_argument("--species", default="quadruped")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_annotations)

    p = sub.add_parser("merge-boundaries", help="merge animal/background boundary maps")
    p.add_argument("--animal", help="animal RGBA image")
    p.add_argument("--animal-edges", help="precomputed animal boundary map PNG")
    p.add_argument("--mask", help="foreground mask PNG (required with --animal-edges)")
    p.add_argument("--background", help="background image")
    p.add_argument("--background-edges", help="precomputed background boundary map PNG")
    p.add_argument("--dx", type=int, default=0)
    p.add_argument("--dy", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--dilate", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge_boundaries)

    p = sub.add_parser("export-jobs", help="write conditioning maps + job manifest")
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--species", default="quadruped")
    p.add_argument("--master-seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_jobs)

    p = sub.add_parser("eval-pck", help="PCK scoring of predictions vs ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--normalizer", default="bbox-max", choices=ev.NORMALIZERS)
    p.add_argument("--visible-only", action="store_true",
                   help="count only v==2 keypoints (default counts v>=1)")
    p.add_argument("--format", default="text", choices=["text", "csv", "json"])
    p.set_defaults(func=cmd_eval_pck)

    p = sub.add_parser("tsne", help="2-D embedding of feature files")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("pipeline", help="run train -> sample -> annotate -> merge -> export")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--count", type=int, help="override sample.count")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--out-dir", help="override paths.out_dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
    try:
        summary = args.func(args)
    except (ValueError, RuntimeError, OSError, ConfigFileError, PoseError) as e:
        sys.stderr.write(
            json.dumps({"error": {"command": args.command, "message": str(e)}}) + "\n"
        )
        return 1
    if summary is not None:
        sys.stdout.write(json.dumps(summary) + "\n")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
