"""In-memory tensor loading for manifest splits.

Desk-scale corpora fit comfortably in RAM, so splits are loaded eagerly into
channel-first tensors once and sliced per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .forge import load_image, load_mask
from .manifest import DatasetManifest, ManifestRecord


@dataclass
class SplitArrays:
    images: torch.Tensor  # (N, c, h, w) float32
    masks: torch.Tensor  # (N, h, w) float32 in {0, 1}
    labels: torch.Tensor  # (N,) float32 in {0, 1}
    tags: list[str]
    records: list[ManifestRecord]

    def __len__(self) -> int:
        return self.images.shape[0]


def load_split(manifest: DatasetManifest, split: str) -> SplitArrays:
    records = manifest.split_records(split)
    if not records:
        raise ValidationError(f"manifest has no records in split {split!r}")
    images, masks, labels, tags = [], [], [], []
    for rec in records:
        images.append(load_image(manifest.resolve(rec.image_path)))
        masks.append(load_mask(manifest.resolve(rec.mask_path)))
        labels.append(rec.label)
        tags.append(rec.source_tag)
    x = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).contiguous()
    m = torch.from_numpy(np.stack(masks).astype(np.float32))
    y = torch.tensor(labels, dtype=torch.float32)
    return SplitArrays(images=x, masks=m, labels=y, tags=tags, records=records)
