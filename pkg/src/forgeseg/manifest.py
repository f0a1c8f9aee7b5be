"""Dataset manifests: newline-delimited JSON records with a self-describing header.

The header line stores the corpus seed and a hash of the generating config.
Record paths are relative to the manifest file's directory, which keeps a run
directory relocatable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import ValidationError

SPLITS = ("train", "val", "test")

_HEADER_KIND = "forgeseg-manifest"


@dataclass
class ManifestRecord:
    image_path: str
    mask_path: str
    label: int
    source_tag: str
    group_id: str
    split: str

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"record label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"record split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class DatasetManifest:
    """Ordered record set plus the seed that produced it."""

    records: list[ManifestRecord]
    seed: int
    config_hash: str = ""
    root: Optional[Path] = field(default=None, repr=False)

    def validate(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            rec.validate()
            for path in (rec.image_path, rec.mask_path):
                if path in seen:
                    raise ValidationError(f"duplicate path in manifest: {path}")
                seen.add(path)

    def split_records(self, split: str) -> list[ManifestRecord]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def resolve(self, relpath: str) -> Path:
        return Path(relpath) if self.root is None else Path(self.root) / relpath

    def with_splits(self, splits: Iterable[str]) -> "DatasetManifest":
        splits = list(splits)
        if len(splits) != len(self.records):
            raise ValidationError(
                f"split assignment length {len(splits)} != record count {len(self.records)}"
            )
        records = [replace(r, split=s) for r, s in zip(self.records, splits)]
        return DatasetManifest(records, seed=self.seed, config_hash=self.config_hash, root=self.root)


def write_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    path = Path(path)
    manifest.validate()
    lines = [
        json.dumps(
            {"kind": _HEADER_KIND, "version": 1, "seed": manifest.seed, "config_hash": manifest.config_hash},
            sort_keys=True,
        )
    ]
    lines += [json.dumps(asdict(rec), sort_keys=True) for rec in manifest.records]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"empty manifest file: {path}")
    header = json.loads(lines[0])
    if header.get("kind") != _HEADER_KIND:
        raise ValidationError(f"{path} is not a manifest (missing header record)")
    records = []
    for ln in lines[1:]:
        raw = json.loads(ln)
        records.append(ManifestRecord(**raw))
    manifest = DatasetManifest(
        records,
        seed=int(header["seed"]),
        config_hash=str(header.get("config_hash", "")),
        root=path.parent,
    )
    manifest.validate()
    return manifest
