"""Command-line driver: consolidate, init, train, query, export, eval, render,
gen-synthetic, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import fileio, metrics as metrics_mod, synthetic
from .embeddings import EmbeddingTable, associate_all, export_object, query as run_query
from .initialize import InitConfig, initialize_scene
from .masks import MaskPipelineConfig, consolidate, load_raw_masks, save_tracked_masks, \
    load_tracked_masks
from .ply import read_point_cloud
from .render import render_scene
from .scene import GranularityLevel, SceneModel, validate_scene
from .training import TrainConfig, TrainingDiverged, save_metrics, train


def _level(code: str):
    return None if code in ("all", "") else GranularityLevel.from_code(code)


def _load_images(images_dir, cameras):
    images = {}
    for cam in cameras:
        path = Path(images_dir) / f"img_f{cam.frame_index:05d}.npy"
        if not path.exists():
            raise FileNotFoundError(f"missing training image {path}")
        images[cam.frame_index] = fileio.load_image_raw(path)
    return images


def cmd_gen_synthetic(args) -> int:
    generators = {"nested": synthetic.generate_nested, "dynamic": synthetic.generate_dynamic,
                  "tracking": synthetic.generate_tracking}
    kwargs = {"seed": args.seed}
    if args.fixture == "nested":
        kwargs["corrupt_fraction"] = args.corrupt_fraction
        kwargs["iterations"] = args.iterations
    elif args.fixture == "dynamic":
        kwargs["iterations"] = args.iterations
    info = generators[args.fixture](args.out, **kwargs)
    print(json.dumps({"fixture": args.fixture, **info}))
    return 0


def cmd_consolidate(args) -> int:
    cfg_dict = {}
    if args.config:
        cfg_dict = fileio.load_scene_config(args.config).get("consolidate", {})
    if args.delta_t is not None:
        cfg_dict["delta_t"] = args.delta_t
    cfg_dict.setdefault("enable_detection", not args.no_detection)
    cfg_dict.setdefault("enable_multitrack", not args.no_multitrack)
    raw, index = load_raw_masks(args.raw)
    if "delta_t" in index:
        cfg_dict.setdefault("delta_t", int(index["delta_t"]))
    config = MaskPipelineConfig.from_dict(cfg_dict)
    tracked = consolidate(raw, config)
    save_tracked_masks(args.out, tracked)
    counts = {lv.value: len(tracked.object_ids(lv)) for lv in GranularityLevel}
    print(json.dumps({"tracks": counts, "frames": tracked.frame_count}))
    return 0


def cmd_init(args) -> int:
    cfg = fileio.load_scene_config(args.config)
    cameras = fileio.load_cameras(cfg["cameras"])
    positions, colors = read_point_cloud(cfg["point_cloud"])
    tracked = load_tracked_masks(args.masks or cfg["masks"])
    init_cfg = InitConfig.from_dict(cfg.get("init", {}))
    images = None
    if cfg.get("images"):
        images = _load_images(cfg["images"], cameras)
    scene, report = initialize_scene(positions, colors, cameras, tracked, init_cfg,
                                     images=images)
    violations = validate_scene(scene)
    if violations:
        print("scene invariant violations:", file=sys.stderr)
        for v in violations:
            print("  " + v, file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(out, scene, {"init": cfg.get("init", {})})
    fileio.write_json(out.parent / "init_report.json", report)
    print(json.dumps({"gaussians": len(scene.gaussians),
                      "merges": len(report["merges"])}))
    return 0


def cmd_train(args) -> int:
    cfg = fileio.load_scene_config(args.config)
    train_dict = dict(cfg.get("train", {}))
    if args.seed is not None:
        train_dict["seed"] = args.seed
    if args.iterations is not None:
        train_dict["iterations"] = args.iterations
    config = TrainConfig.from_dict(train_dict)
    scene, _ = fileio.load_checkpoint(args.checkpoint)
    images = _load_images(cfg["images"], scene.cameras)
    try:
        scene, metric_rows = train(scene, config, images)
    except TrainingDiverged as exc:
        dump = Path(args.out).with_suffix(".diverged.ckpt")
        fileio.save_checkpoint(dump, scene, config.to_dict())
        print(f"training diverged: {exc}; state dumped to {dump}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(out, scene, config.to_dict())
    save_metrics(out.parent / "metrics.csv", metric_rows)
    last_psnr = [r["psnr"] for r in metric_rows if r.get("psnr") != ""]
    print(json.dumps({"iterations": config.iterations, "gaussians": len(scene.gaussians),
                      "final_psnr": last_psnr[-1] if last_psnr else None}))
    return 0


def _query_embedding(args) -> np.ndarray:
    if args.embedding_file:
        return np.load(args.embedding_file).astype(np.float32)
    if args.prompt_id:
        if not args.prompts:
            raise SystemExit("--prompt-id requires --prompts")
        with open(args.prompts) as fh:
            prompts = {p["id"]: p for p in json.load(fh)["prompts"]}
        if args.prompt_id not in prompts:
            raise SystemExit(f"unknown prompt id {args.prompt_id!r}")
        return np.asarray(prompts[args.prompt_id]["embedding"], dtype=np.float32)
    raise SystemExit("provide --embedding-file or --prompt-id")


def cmd_query(args) -> int:
    scene, _ = fileio.load_checkpoint(args.checkpoint)
    table = EmbeddingTable.load(args.embeddings)
    associate_all(scene, table)
    vec = _query_embedding(args)
    result = run_query(vec, _level(args.granularity), scene)
    payload = {"matches": [{"object_id": m.object_id, "granularity": m.granularity.value,
                            "score": m.score, "gaussians": len(m.gaussian_indices)}
                           for m in result.matches[:args.top_k]]}
    if args.out:
        fileio.write_json(args.out, payload)
    print(json.dumps(payload))
    if args.render_out:
        from .service import render_highlight
        cam = scene.cameras[args.camera_index]
        best = result.best
        img = render_highlight(scene, best.object_id, best.granularity, cam, args.time)
        fileio.save_image_png(args.render_out, img)
    return 0


def cmd_export(args) -> int:
    scene, _ = fileio.load_checkpoint(args.checkpoint)
    count = export_object(scene, args.object_id, GranularityLevel.from_code(args.granularity),
                          args.out)
    print(json.dumps({"object_id": args.object_id, "gaussians": count}))
    return 0


def cmd_render(args) -> int:
    scene, _ = fileio.load_checkpoint(args.checkpoint)
    if not (0 <= args.camera_index < len(scene.cameras)):
        print(f"camera index {args.camera_index} out of range", file=sys.stderr)
        return 1
    cam = scene.cameras[args.camera_index]
    with torch.no_grad():
        if args.object_id is not None:
            from .render import render_object
            result = render_object(scene, args.object_id,
                                   GranularityLevel.from_code(args.granularity), cam,
                                   time=args.time)
        else:
            result = render_scene(scene, cam, time=args.time)
    fileio.save_image_png(args.out, result.image_array())
    if args.raw_out:
        fileio.save_image_raw(args.raw_out, result.image_array())
    return 0


def cmd_eval(args) -> int:
    """Query-driven evaluation: query, render the hit, compare to GT masks."""
    from .render import render_object
    scene, _ = fileio.load_checkpoint(args.checkpoint)
    table = EmbeddingTable.load(args.embeddings)
    associate_all(scene, table)
    with open(args.prompts) as fh:
        prompts = json.load(fh)["prompts"]
    gt_dir = Path(args.gt_masks)
    report = {"prompts": [], "miou": None}
    scores = []
    for prompt in prompts:
        vec = np.asarray(prompt["embedding"], dtype=np.float32)
        level = GranularityLevel.from_code(prompt["granularity"])
        result = run_query(vec, level, scene)
        best = result.best
        per_view = []
        for cam in scene.cameras:
            gt_path = gt_dir / f"g{level.value}_f{cam.frame_index:05d}.png"
            if not gt_path.exists():
                continue
            from .masks import load_id_map_png
            gt_mask = load_id_map_png(gt_path) == prompt["expected_object"]
            with torch.no_grad():
                r = render_object(scene, best.object_id, best.granularity, cam, time=cam.time)
            per_view.append(metrics_mod.iou(r.alpha_array() > 0.5, gt_mask))
        entry = {"prompt": prompt["id"], "returned_object": best.object_id,
                 "expected_object": prompt["expected_object"], "score": best.score,
                 "mean_iou": float(np.mean(per_view)) if per_view else None}
        report["prompts"].append(entry)
        if per_view:
            scores.append(entry["mean_iou"])
    report["miou"] = float(np.mean(scores)) if scores else None
    fileio.write_json(args.out, report)
    print(json.dumps({"miou": report["miou"], "prompts": len(report["prompts"])}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(args.checkpoint, embeddings_path=args.embeddings,
                     embed_endpoint=args.embed_endpoint, ui_dir=args.ui_dir,
                     render_workers=args.render_workers)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objsplat",
                                     description="Object-partitioned Gaussian splatting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="emit deterministic synthetic fixtures")
    p.add_argument("fixture", choices=["nested", "dynamic", "tracking"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--corrupt-fraction", type=float, default=0.0)
    p.add_argument("--iterations", type=int, default=3000)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("consolidate", help="repair raw masks into tracked masks")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--delta-t", type=int, default=None)
    p.add_argument("--no-detection", action="store_true")
    p.add_argument("--no-multitrack", action="store_true")
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("init", help="build an object-labeled scene from a point cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--masks", help="override the mask directory from the config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="run staged reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help="initialized scene checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="open-vocabulary object retrieval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--prompt-id")
    p.add_argument("--prompts")
    p.add_argument("--embedding-file")
    p.add_argument("--granularity", default="all", choices=["S", "M", "L", "all"])
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out")
    p.add_argument("--render-out")
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--time", type=float, default=0.0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export", help="write one object's Gaussians as PLY")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object-id", type=int, required=True)
    p.add_argument("--granularity", default="S", choices=["S", "M", "L"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("render", help="render a view (full scene or one object)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--object-id", type=int, default=None)
    p.add_argument("--granularity", default="S", choices=["S", "M", "L"])
    p.add_argument("--out", required=True)
    p.add_argument("--raw-out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="query-driven mIoU evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--gt-masks", required=True)
    p.add_argument("--out", default="eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--embed-endpoint", help="URL of a text-embedding endpoint")
    p.add_argument("--ui-dir", help="static frontend bundle to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--render-workers", type=int, default=2)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve" and args.port is None:
        import os
        args.port = int(os.environ.get("OBJSPLAT_PORT", "8179"))
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
