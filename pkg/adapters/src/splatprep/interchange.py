"""Writers/readers for the splat pipeline's interchange file formats.

These mirror the downstream formats exactly (RLE-JSON raw masks with an
index, 16-bit PNG id maps with tracks.json, and the binary embedding file);
byte-level compatibility is what the round-trip tests check.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

EMBEDDING_MAGIC = b"OEMB"
FORMAT_VERSION = 1
GRANULARITIES = ("L", "M", "S")


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def save_raw_masks(directory, width, height, frame_count, delta_t,
                   frames: dict, first_frames: dict) -> None:
    """``frames``: {(frame, code): [(track_id, mask), ...]};
    ``first_frames``: {code: {track_id: first_frame}}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "format": "rle-json",
        "width": width, "height": height, "frame_count": frame_count,
        "delta_t": delta_t,
        "granularities": list(GRANULARITIES),
        "tracks": {code: {str(tid): {"first_frame": ff}
                          for tid, ff in sorted(first_frames.get(code, {}).items())}
                   for code in GRANULARITIES},
    }
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    for (frame, code), masks in sorted(frames.items()):
        payload = {"masks": [{"track_id": int(tid), "rle": rle_encode(mask)}
                             for tid, mask in sorted(masks, key=lambda tm: tm[0])]}
        with open(directory / f"g{code}_f{frame:05d}.json", "w") as fh:
            json.dump(payload, fh)


def load_id_map(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint16)


def load_tracked_masks(directory):
    """Read a consolidated mask directory (id-map PNGs + tracks.json)."""
    directory = Path(directory)
    with open(directory / "tracks.json") as fh:
        meta = json.load(fh)
    maps = {}
    for frame in range(meta["frame_count"]):
        for code in GRANULARITIES:
            path = directory / f"g{code}_f{frame:05d}.png"
            if path.exists():
                maps[(frame, code)] = load_id_map(path)
    return meta, maps


def save_embeddings(path, dimension: int, records) -> None:
    """records: iterable of (object_id, frame, float32 unit vector)."""
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        records = list(records)
        fh.write(struct.pack("<III", FORMAT_VERSION, dimension, len(records)))
        for object_id, frame, vec in records:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (dimension,):
                raise ValueError(f"embedding for object {object_id} has shape {vec.shape}")
            fh.write(struct.pack("<II", int(object_id), int(frame)))
            fh.write(vec.tobytes())
