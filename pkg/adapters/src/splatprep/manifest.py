"""Adapter run manifest: which models, which frames, where outputs go."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class AdapterManifest:
    frames: list[str]                     # image paths, in frame order
    output_masks: str = "masks_raw"
    output_embeddings: str = "embeddings.bin"
    segmenter: str = "grid-region-grow/1.0"
    embedder: str = "hash-embed/1.0"
    embedding_dimension: int = 512
    delta_t: int = 10
    # prompt grid points per side, coarse to fine
    grid_densities: dict = field(default_factory=lambda: {"L": 8, "M": 16, "S": 32})
    # mask area bands per granularity, as fractions of the frame
    area_bands: dict = field(default_factory=lambda: {
        "L": [0.04, 0.90], "M": [0.008, 0.20], "S": [0.0004, 0.05]})
    color_levels: int = 6  # quantization levels per channel for region growing

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "AdapterManifest":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def load(cls, path) -> "AdapterManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
