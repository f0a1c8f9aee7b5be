"""Accuracy / IoU evaluation with per-subset breakdown and run comparison.

IoU uses the empty-agreement convention: two empty masks score 1, an empty
ground truth against a non-empty prediction scores 0. That makes the IoU of
real images meaningful (a clean all-zero prediction scores 1). Aggregate IoU
is the unweighted mean of per-sample IoUs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data import SplitArrays, load_split
from .errors import DimensionError, ValidationError
from .manifest import DatasetManifest
from .model import CollabModel


def binarize(s: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold a soft mask: s >= threshold -> 1, else 0."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(s) >= threshold).astype(np.uint8)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks (empty vs empty -> 1)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def accuracy(p_batch, y_batch, threshold: float = 0.5) -> float:
    """Fraction of samples whose thresholded probability matches the label."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(p_batch, dtype=np.float64)
    y = np.asarray(y_batch)
    if p.shape != y.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValidationError("empty batch")
    pred = (p >= threshold).astype(np.int64)
    return float((pred == y.astype(np.int64)).mean())


@dataclass
class MetricsReport:
    """Acc and IoU broken down by subset, Table-style: All / Real / Fake / per tag."""

    counts: dict[str, int] = field(default_factory=dict)
    acc_all: Optional[float] = None
    acc_real: Optional[float] = None
    acc_fake: Optional[float] = None
    acc_per_tag: dict[str, float] = field(default_factory=dict)
    iou_all: Optional[float] = None
    iou_real: Optional[float] = None
    iou_fake: Optional[float] = None
    iou_per_tag: dict[str, float] = field(default_factory=dict)
    threshold_det: float = 0.5
    threshold_seg: float = 0.5

    def validate(self) -> None:
        for name, value in self.cells().items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"metric {name} = {value} outside [0, 1]")

    def tag_names(self) -> list[str]:
        """Subset tags present in the evaluated data, in stable order."""
        reserved = {"all", "real", "fake"}
        tags = sorted(k for k in self.counts if k not in reserved)
        if not tags:
            tags = sorted(set(self.acc_per_tag) | set(self.iou_per_tag))
        return tags

    def cells(self) -> dict[str, Optional[float]]:
        # Column set depends on the data alone, so reports from models that
        # lack one branch still line up against full models in a comparison.
        tags = self.tag_names()
        out: dict[str, Optional[float]] = {
            "Acc-All": self.acc_all,
            "Acc-Real": self.acc_real,
            "Acc-Fake": self.acc_fake,
        }
        for tag in tags:
            out[f"Acc-{tag}"] = self.acc_per_tag.get(tag)
        out["IoU-All"] = self.iou_all
        out["IoU-Real"] = self.iou_real
        out["IoU-Fake"] = self.iou_fake
        for tag in tags:
            out[f"IoU-{tag}"] = self.iou_per_tag.get(tag)
        return out

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "acc_all": self.acc_all,
            "acc_real": self.acc_real,
            "acc_fake": self.acc_fake,
            "acc_per_tag": dict(self.acc_per_tag),
            "iou_all": self.iou_all,
            "iou_real": self.iou_real,
            "iou_fake": self.iou_fake,
            "iou_per_tag": dict(self.iou_per_tag),
            "threshold_det": self.threshold_det,
            "threshold_seg": self.threshold_seg,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        return cls(**raw)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_text(self, label: str = "model") -> str:
        return format_table([self], [label])


def _subset_mean(values: np.ndarray, mask: np.ndarray) -> Optional[float]:
    if not mask.any():
        return None
    return float(values[mask].mean())


def evaluate_arrays(
    model: CollabModel,
    arrays: SplitArrays,
    threshold_det: float = 0.5,
    threshold_seg: float = 0.5,
    batch_size: int = 64,
) -> MetricsReport:
    """Forward a loaded split and aggregate Acc / IoU per subset."""
    for name, value in (("threshold_det", threshold_det), ("threshold_seg", threshold_seg)):
        if not 0.0 < value < 1.0:
            raise ValidationError(f"{name} must lie in (0, 1), got {value}")
    n = len(arrays)
    has_det = model.det_head is not None
    has_seg = model.seg_decoder is not None
    probs = np.zeros(n, dtype=np.float64)
    ious = np.zeros(n, dtype=np.float64)
    model.eval()
    with torch.no_grad():
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            out = model(arrays.images[sl])
            if has_det:
                probs[sl] = out.p.double().numpy()
            if has_seg:
                pred = binarize(out.S.numpy(), threshold_seg)
                gt = arrays.masks[sl].numpy()
                for i in range(pred.shape[0]):
                    ious[sl.start + i] = iou(pred[i], gt[i])

    labels = arrays.labels.numpy().astype(np.int64)
    tags = np.array([t if t else "other" for t in arrays.tags])
    real = labels == 0
    fake = labels == 1

    report = MetricsReport(threshold_det=threshold_det, threshold_seg=threshold_seg)
    report.counts = {"all": n, "real": int(real.sum()), "fake": int(fake.sum())}
    for tag in sorted(set(tags)):
        report.counts[tag] = int((tags == tag).sum())

    if has_det:
        correct = ((probs >= threshold_det).astype(np.int64) == labels).astype(np.float64)
        report.acc_all = float(correct.mean())
        report.acc_real = _subset_mean(correct, real)
        report.acc_fake = _subset_mean(correct, fake)
        for tag in sorted(set(tags)):
            value = _subset_mean(correct, tags == tag)
            if value is not None:
                report.acc_per_tag[tag] = value
    if has_seg:
        report.iou_all = float(ious.mean())
        report.iou_real = _subset_mean(ious, real)
        report.iou_fake = _subset_mean(ious, fake)
        for tag in sorted(set(tags)):
            value = _subset_mean(ious, tags == tag)
            if value is not None:
                report.iou_per_tag[tag] = value
    report.validate()
    return report


def evaluate(
    model: CollabModel,
    manifest: DatasetManifest,
    split: str,
    threshold_det: float = 0.5,
    threshold_seg: float = 0.5,
    batch_size: int = 64,
) -> MetricsReport:
    """Run the model over a manifest split and build the per-subset report."""
    arrays = load_split(manifest, split)
    return evaluate_arrays(
        model,
        arrays,
        threshold_det=threshold_det,
        threshold_seg=threshold_seg,
        batch_size=batch_size,
    )


# ---------------------------------------------------------------------------
# Run comparison
# ---------------------------------------------------------------------------


def format_table(reports: list[MetricsReport], labels: list[str]) -> str:
    columns = list(reports[0].cells().keys())
    rows = [[lbl] + ["--" if v is None else f"{v:.4f}" for v in r.cells().values()]
            for lbl, r in zip(labels, reports)]
    header = ["Method"] + columns
    widths = [max(len(header[i]), *(len(row[i]) for row in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


@dataclass
class ComparisonTable:
    labels: list[str]
    reports: list[MetricsReport]

    def to_text(self) -> str:
        return format_table(self.reports, self.labels)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.reports[0].cells().keys()),
            "rows": [
                {"label": lbl, "cells": r.cells(), "counts": dict(r.counts)}
                for lbl, r in zip(self.labels, self.reports)
            ],
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def compare_runs(reports: list[MetricsReport], labels: Optional[list[str]] = None) -> ComparisonTable:
    """Line up several reports side by side in the same column layout."""
    if not reports:
        raise ValidationError("no reports to compare")
    if len(reports) < 2:
        raise ValidationError("need at least two reports to compare")
    if labels is None:
        labels = [f"run-{i}" for i in range(len(reports))]
    if len(labels) != len(reports):
        raise ValidationError(f"{len(labels)} labels for {len(reports)} reports")
    columns = list(reports[0].cells().keys())
    for lbl, rep in zip(labels[1:], reports[1:]):
        if list(rep.cells().keys()) != columns:
            raise ValidationError(
                f"report {lbl!r} has different columns than {labels[0]!r}: "
                f"{list(rep.cells().keys())} vs {columns}"
            )
    return ComparisonTable(labels=list(labels), reports=list(reports))
