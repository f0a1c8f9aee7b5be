"""Class-activation maps over the last encoder stage (Grad-CAM++ weighting).

Maps are taken against the pre-sigmoid detection score. The positive factor
contributed by the score's exponential cancels under min-max normalization,
so it is never materialized; that keeps the computation overflow-free for
confident models.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import CapabilityError, DependencyError, DimensionError, ValidationError
from .model import CollabModel

_EPS = 1e-8


def _as_batch(model: CollabModel, image) -> torch.Tensor:
    h, w, c = model.config.input_size
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[2] != c:
            raise DimensionError(f"expected (h, w, {c}) array, got {image.shape}")
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1).unsqueeze(0)
    elif torch.is_tensor(image):
        x = image.detach().float()
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[0] != 1:
            raise DimensionError(f"expected a single image, got shape {tuple(image.shape)}")
    else:
        raise ValidationError(f"unsupported image type {type(image).__name__}")
    if x.shape[1:] != (c, h, w):
        raise DimensionError(f"expected (1, {c}, {h}, {w}), got {tuple(x.shape)}")
    return x


def grad_cam_pp(model: CollabModel, image) -> np.ndarray:
    """Activation map for one image, min-max normalized to [0, 1].

    A constant raw map carries no localization signal and collapses to all
    zeros instead of dividing by a zero range.
    """
    if model.det_head is None:
        raise CapabilityError("class activation maps require the detection branch")
    x = _as_batch(model, image)
    model.eval()
    with torch.enable_grad():
        feats = model.encode(x)
        score = model.detect_score(feats)
        grads = torch.autograd.grad(score.sum(), feats)[0]

    g2 = grads * grads
    g3 = g2 * grads
    denom = 2.0 * g2 + (feats * g3).sum(dim=(2, 3), keepdim=True)
    denom = torch.where(denom.abs() < _EPS, torch.full_like(denom, _EPS), denom)
    alpha = g2 / denom
    channel_w = (alpha * grads.clamp(min=0)).sum(dim=(2, 3))
    raw = (channel_w[:, :, None, None] * feats).sum(dim=1).clamp(min=0)

    h, w = model.config.input_size[0], model.config.input_size[1]
    cam = F.interpolate(raw.unsqueeze(1), size=(h, w), mode="bilinear", align_corners=False)
    cam = cam.squeeze(0).squeeze(0).detach()
    lo = float(cam.min())
    hi = float(cam.max())
    if hi - lo < _EPS:
        return np.zeros((h, w), dtype=np.float32)
    return ((cam - lo) / (hi - lo)).numpy().astype(np.float32)


def cam_mask_contrast(cam: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """Mean activation inside versus outside a binary mask."""
    cam = np.asarray(cam, dtype=np.float64)
    mask = np.asarray(mask)
    if cam.shape != mask.shape:
        raise DimensionError(f"shape mismatch: cam {cam.shape} vs mask {mask.shape}")
    inside = mask.astype(bool)
    if not inside.any() or inside.all():
        raise ValidationError("mask must contain both regions to compare against")
    return float(cam[inside].mean()), float(cam[~inside].mean())


def heatmap_to_rgb(cam: np.ndarray) -> np.ndarray:
    """Colorize a [0, 1] map with the jet colormap, as (h, w, 3) uint8."""
    try:
        from matplotlib import cm
    except ImportError as exc:
        raise DependencyError("matplotlib is required to colorize activation maps") from exc
    rgba = cm.jet(np.clip(np.asarray(cam, dtype=np.float64), 0.0, 1.0))
    return (rgba[..., :3] * 255.0).round().astype(np.uint8)


def overlay(image: np.ndarray, cam: np.ndarray, strength: float = 0.45) -> np.ndarray:
    """Blend a colorized map onto an (h, w, 3) image in [0, 1]."""
    if not 0.0 <= strength <= 1.0:
        raise ValidationError(f"strength must lie in [0, 1], got {strength}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected (h, w, 3) image, got {image.shape}")
    if image.shape[:2] != np.asarray(cam).shape:
        raise DimensionError(f"image {image.shape[:2]} does not match cam {np.asarray(cam).shape}")
    heat = heatmap_to_rgb(cam).astype(np.float64) / 255.0
    blend = (1.0 - strength) * image + strength * heat
    return (np.clip(blend, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def render_cam(
    model: CollabModel,
    image: np.ndarray,
    out_path: Path | str,
    overlay_path: Path | str | None = None,
) -> tuple[Path, Path]:
    """Write the 8-bit grayscale map to out_path and an RGB overlay beside it."""
    cam_path = Path(out_path)
    cam_path.parent.mkdir(parents=True, exist_ok=True)
    if overlay_path is None:
        overlay_path = cam_path.with_name(cam_path.stem + "_overlay" + (cam_path.suffix or ".png"))
    overlay_path = Path(overlay_path)
    cam = grad_cam_pp(model, image)
    Image.fromarray((cam * 255.0).round().astype(np.uint8), mode="L").save(cam_path)
    Image.fromarray(overlay(image, cam), mode="RGB").save(overlay_path)
    return cam_path, overlay_path
