"""Model backends behind the adapter surface.

The default backends are deterministic and model-free: a grid-prompted
region-growing segmenter over quantized colors, and a content-hash embedder.
Real neural models plug in behind the same two call signatures.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image
from scipy import ndimage


class GridRegionSegmenter:
    """Segment an image by probing connected color regions from a point grid.

    Quantizes colors, labels connected components, and returns the component
    under each grid point whose area falls inside the requested band.
    """

    def __init__(self, color_levels: int = 6):
        self.color_levels = color_levels

    def _components(self, image: np.ndarray) -> np.ndarray:
        q = np.floor(np.clip(image, 0, 0.999) * self.color_levels).astype(np.int32)
        key = q[:, :, 0] * self.color_levels * self.color_levels \
            + q[:, :, 1] * self.color_levels + q[:, :, 2]
        labels = np.zeros(key.shape, dtype=np.int32)
        next_label = 1
        for value in np.unique(key):
            comp, count = ndimage.label(key == value)
            labels[comp > 0] = comp[comp > 0] + next_label - 1
            next_label += count
        return labels

    def segment(self, image: np.ndarray, grid_points: int,
                area_band: tuple[float, float]) -> list[np.ndarray]:
        """Masks of the distinct regions hit by a grid_points^2 prompt grid."""
        h, w = image.shape[:2]
        labels = self._components(image)
        lo, hi = area_band[0] * h * w, area_band[1] * h * w
        seen = []
        masks = []
        rows = np.linspace(0, h - 1, grid_points + 2)[1:-1].astype(int)
        cols = np.linspace(0, w - 1, grid_points + 2)[1:-1].astype(int)
        for r in rows:
            for c in cols:
                label = labels[r, c]
                if label == 0 or label in seen:
                    continue
                seen.append(label)
                mask = labels == label
                area = int(mask.sum())
                if lo <= area <= hi:
                    masks.append(mask)
        return masks


class HashEmbedder:
    """Deterministic stand-in for an image-text embedding model.

    Image crops hash their downsampled pixel content, texts hash their bytes;
    identical inputs map to identical unit vectors.
    """

    def __init__(self, dimension: int = 512):
        self.dimension = dimension

    def _vector_from_digest(self, digest: bytes) -> np.ndarray:
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dimension).astype(np.float32)
        return v / np.linalg.norm(v)

    def embed_image(self, crop: np.ndarray) -> np.ndarray:
        small = np.asarray(Image.fromarray(
            (np.clip(crop, 0, 1) * 255).astype(np.uint8)).resize((8, 8)))
        return self._vector_from_digest(hashlib.sha256(small.tobytes()).digest())

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector_from_digest(
            hashlib.sha256(("text:" + text).encode("utf-8")).digest())


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
