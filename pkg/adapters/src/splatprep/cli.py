"""splatprep CLI: segment, embed, serve-text, demo-images."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .embeddings import run_embeddings
from .manifest import AdapterManifest
from .segmentation import run_segmentation


def _frames_from_args(args) -> list[str]:
    if args.manifest:
        return AdapterManifest.load(args.manifest).frames
    return sorted(str(p) for p in Path(args.images).glob("*.png"))


def cmd_segment(args) -> int:
    manifest = AdapterManifest.load(args.manifest) if args.manifest else AdapterManifest(
        frames=_frames_from_args(args), delta_t=args.delta_t)
    try:
        info = run_segmentation(manifest.frames, manifest, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for leftover in Path(args.out).glob("*") if Path(args.out).exists() else []:
            leftover.unlink()
        return 1
    manifest.save(Path(args.out) / "manifest.json")
    print(json.dumps(info))
    return 0


def cmd_embed(args) -> int:
    manifest = AdapterManifest.load(args.manifest) if args.manifest else AdapterManifest(
        frames=_frames_from_args(args), embedding_dimension=args.dimension)
    info = run_embeddings(manifest.frames, args.masks, manifest, args.out)
    print(json.dumps(info))
    return 0


def cmd_serve_text(args) -> int:
    import uvicorn
    from .server import create_app
    uvicorn.run(create_app(dimension=args.dimension), host=args.host, port=args.port,
                log_level="warning")
    return 0


def cmd_demo_images(args) -> int:
    """Synthesize a deterministic toy clip: moving colored disks on a gradient."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = w = args.size
    yy, xx = np.mgrid[0:h, 0:w]
    for frame in range(args.frames):
        t = frame / max(args.frames - 1, 1)
        img = np.stack([0.35 + 0.25 * xx / w, 0.35 + 0.25 * yy / h,
                        np.full((h, w), 0.45)], axis=2)
        cx = 0.3 * w + 0.25 * w * t
        cy = 0.55 * h
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= (0.16 * w) ** 2
        img[disk] = (0.85, 0.2, 0.15)
        disk2 = (xx - 0.72 * w) ** 2 + (yy - 0.3 * h) ** 2 <= (0.12 * w) ** 2
        img[disk2] = (0.15, 0.3, 0.8)
        Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8)).save(
            out / f"frame_{frame:05d}.png")
    print(json.dumps({"frames": args.frames, "size": args.size}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatprep")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="grid-prompted segmentation + tracking")
    p.add_argument("--images")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--delta-t", type=int, default=10)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("embed", help="per-(object, frame) crop embeddings")
    p.add_argument("--images")
    p.add_argument("--manifest")
    p.add_argument("--masks", required=True, help="consolidated mask directory")
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", type=int, default=512)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("serve-text", help="text embedding endpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8180)
    p.add_argument("--dimension", type=int, default=512)
    p.set_defaults(func=cmd_serve_text)

    p = sub.add_parser("demo-images", help="emit a deterministic toy clip")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_demo_images)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
