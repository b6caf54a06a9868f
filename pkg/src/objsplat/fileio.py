"""Interchange files: cameras, scene config, images, embeddings, checkpoints.

Binary formats are versioned and little-endian. Checkpoints are written so an
identical training run produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .render import DeformationField
from .scene import Camera, GaussianStore, GranularityLevel, SceneModel, TrackedMasks

EMBEDDING_MAGIC = b"OEMB"
CHECKPOINT_MAGIC = b"OSPL"
FORMAT_VERSION = 1


# --------------------------------------------------------------------------- cameras

def save_cameras(path, cameras: list[Camera]) -> None:
    with open(path, "w") as fh:
        json.dump([cam.to_dict() for cam in cameras], fh, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as fh:
        return [Camera.from_dict(d) for d in json.load(fh)]


# --------------------------------------------------------------------------- images

def save_image_png(path, image: np.ndarray) -> None:
    """8-bit PNG for viewing; image is (H, W, 3) float in [0, 1]."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, compress_level=6)


def save_image_raw(path, image: np.ndarray) -> None:
    """Lossless float32 planar dump (3, H, W) used for training and tests."""
    np.save(path, np.ascontiguousarray(np.asarray(image, dtype=np.float32).transpose(2, 0, 1)))


def load_image_raw(path) -> np.ndarray:
    planes = np.load(path)
    return np.ascontiguousarray(planes.transpose(1, 2, 0))


def png_bytes(image: np.ndarray) -> bytes:
    import io
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


# --------------------------------------------------------------------------- embeddings

def save_embeddings(path, dimension: int, records: list[tuple[int, int, np.ndarray]]) -> None:
    """Write per-(object, frame) embedding records.

    Layout: magic, u32 version, u32 dimension, u32 count, then per record
    u32 object_id, u32 frame, dimension float32 values.
    """
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, dimension, len(records)))
        for object_id, frame, vec in records:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dimension,):
                raise ValueError(f"embedding for object {object_id} has shape {vec.shape}, "
                                 f"expected ({dimension},)")
            fh.write(struct.pack("<II", object_id, frame))
            fh.write(vec.tobytes())


def load_embeddings(path) -> tuple[int, list[tuple[int, int, np.ndarray]]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBEDDING_MAGIC:
            raise ValueError(f"{path}: bad embedding file magic {magic!r}")
        version, dimension, count = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported embedding file version {version}")
        records = []
        for _ in range(count):
            object_id, frame = struct.unpack("<II", fh.read(8))
            vec = np.frombuffer(fh.read(4 * dimension), dtype="<f4").copy()
            if vec.shape != (dimension,):
                raise ValueError(f"{path}: truncated record")
            records.append((object_id, frame, vec))
    return dimension, records


def validate_embedding_file(path) -> list[str]:
    """Schema check used by adapter round-trip tests."""
    problems = []
    try:
        dimension, records = load_embeddings(path)
    except Exception as exc:  # noqa: BLE001 - diagnostic surface
        return [str(exc)]
    for object_id, frame, vec in records:
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-5:
            problems.append(f"object {object_id} frame {frame}: norm {norm:.6f} not unit")
        if not np.isfinite(vec).all():
            problems.append(f"object {object_id} frame {frame}: non-finite values")
    return problems


# --------------------------------------------------------------------------- checkpoints

_STORE_ARRAYS = ("means", "rotations", "log_scales", "opacities", "colors", "object_ids")


def save_checkpoint(path, scene: SceneModel, config_dict: Optional[dict] = None) -> None:
    """Versioned binary: JSON header + raw little-endian arrays."""
    store = scene.gaussians
    arrays: list[tuple[str, np.ndarray]] = []
    for name in _STORE_ARRAYS:
        t = getattr(store, name).detach().cpu().numpy()
        arrays.append((name, t))
    deform_meta = None
    if scene.deformation is not None:
        deform_meta = scene.deformation.config()
        for i, p in enumerate(scene.deformation.parameters()):
            arrays.append((f"deform_{i}", p.detach().cpu().numpy()))

    masks_meta = None
    if scene.masks is not None:
        masks_meta = {
            "width": scene.masks.width, "height": scene.masks.height,
            "frame_count": scene.masks.frame_count,
            "first_seen": {lv.value: {str(k): v for k, v in sorted(scene.masks.first_seen[lv].items())}
                           for lv in GranularityLevel},
            "merges": {lv.value: {str(k): v for k, v in sorted(scene.masks.merges[lv].items())}
                       for lv in GranularityLevel},
            "partial": sorted([f, lv.value, oid] for f, lv, oid in scene.masks.partial),
        }

    header = {
        "count": len(store),
        "seed": scene.rng_seed,
        "config": config_dict or {},
        "cameras": [cam.to_dict() for cam in scene.cameras],
        "deformation": deform_meta,
        "masks": masks_meta,
        "arrays": [{"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
                   for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> tuple[SceneModel, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        loaded: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            dt = np.dtype(spec["dtype"])
            arr = np.frombuffer(fh.read(n * dt.itemsize), dtype=dt).reshape(spec["shape"])
            loaded[spec["name"]] = arr.copy()

    store = GaussianStore(
        means=torch.as_tensor(loaded["means"]),
        rotations=torch.as_tensor(loaded["rotations"]),
        log_scales=torch.as_tensor(loaded["log_scales"]),
        opacities=torch.as_tensor(loaded["opacities"]),
        colors=torch.as_tensor(loaded["colors"]),
        object_ids=torch.as_tensor(loaded["object_ids"]),
    )
    cameras = [Camera.from_dict(d) for d in header["cameras"]]
    deformation = None
    if header.get("deformation"):
        deformation = DeformationField(**header["deformation"])
        with torch.no_grad():
            for i, p in enumerate(deformation.parameters()):
                p.copy_(torch.as_tensor(loaded[f"deform_{i}"]))
    masks = None
    if header.get("masks"):
        mm = header["masks"]
        masks = TrackedMasks(mm["width"], mm["height"], mm["frame_count"])
        for code, seen in mm["first_seen"].items():
            lv = GranularityLevel.from_code(code)
            for oid, frame in seen.items():
                masks.first_seen[lv][int(oid)] = int(frame)
        for code, fwd in mm["merges"].items():
            lv = GranularityLevel.from_code(code)
            for old, new in fwd.items():
                masks.merges[lv][int(old)] = int(new)
        for frame, code, oid in mm["partial"]:
            masks.partial.add((int(frame), GranularityLevel.from_code(code), int(oid)))

    scene = SceneModel(store, cameras, masks=masks, deformation=deformation,
                       rng_seed=header.get("seed", 0))
    return scene, header.get("config", {})


# --------------------------------------------------------------------------- scene config

def load_scene_config(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        cfg = json.load(fh)
    for key in ("cameras", "masks", "point_cloud", "embeddings", "images", "output",
                "raw_masks", "prompts"):
        if key in cfg and cfg[key] is not None:
            cfg[key] = str((path.parent / cfg[key]).resolve())
    return cfg


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
