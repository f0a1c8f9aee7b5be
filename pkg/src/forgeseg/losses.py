"""Joint training objective: per-pixel BCE for segmentation, BCE for detection,
and their weighted sum. Includes a finite-difference gradient checker used to
verify analytic gradients of any scalar objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .errors import NumericalError, ValidationError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_det: float = 1.0
    lambda_seg: float = 1.0

    def __post_init__(self):
        if self.lambda_det < 0 or self.lambda_seg < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.lambda_det == 0 and self.lambda_seg == 0:
            raise ValidationError("loss weights cannot both be zero")


@dataclass
class LossReport:
    l_total: float
    l_det: float
    l_seg: float
    batch_size: int

    def validate(self, weights: LossWeights = LossWeights()) -> None:
        expect = weights.lambda_det * self.l_det + weights.lambda_seg * self.l_seg
        if abs(self.l_total - expect) > 1e-7 * max(1.0, abs(expect)):
            raise ValidationError(
                f"l_total {self.l_total} inconsistent with weighted parts {expect}"
            )


def _check_binary(t: torch.Tensor, what: str) -> None:
    if not torch.logical_or(t == 0, t == 1).all():
        raise ValidationError(f"{what} must contain only 0 and 1")


def seg_loss(s_batch: torch.Tensor, m_batch: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Per-pixel binary cross-entropy averaged over pixels, then over the batch.

    `s_batch` is the soft mask in (0,1)^{N,h,w}; `m_batch` the binary ground
    truth. Predictions are clamped to [eps, 1-eps] before the logs.
    """
    if s_batch.shape != m_batch.shape:
        raise ValidationError(f"shape mismatch: {tuple(s_batch.shape)} vs {tuple(m_batch.shape)}")
    _check_binary(m_batch, "ground-truth mask")
    s = s_batch.clamp(eps, 1.0 - eps)
    m = m_batch.to(s.dtype)
    per_pixel = (1.0 - m) * torch.log(1.0 - s) + m * torch.log(s)
    return -per_pixel.mean()


def det_loss(p_batch: torch.Tensor, y_batch: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Binary cross-entropy of forgery probabilities against binary labels."""
    if p_batch.shape != y_batch.shape:
        raise ValidationError(f"shape mismatch: {tuple(p_batch.shape)} vs {tuple(y_batch.shape)}")
    _check_binary(y_batch, "labels")
    p = p_batch.clamp(eps, 1.0 - eps)
    y = y_batch.to(p.dtype)
    per_sample = (1.0 - y) * torch.log(1.0 - p) + y * torch.log(p)
    return -per_sample.mean()


def total_loss(l_det: torch.Tensor | float, l_seg: torch.Tensor | float, weights: LossWeights = LossWeights()):
    return weights.lambda_det * l_det + weights.lambda_seg * l_seg


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    n_coords: int = 100,
    step: float = 1e-5,
    rng_seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn` is a no-argument closure over `params` (leaf tensors, ideally
    float64). Samples at least `n_coords` coordinates across all parameters
    and returns the maximum relative error, using `floor` as the denominator
    floor so near-zero gradient pairs do not blow up the ratio.
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    params = list(params)
    for p in params:
        p.requires_grad_(True)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericalError(f"loss is non-finite: {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [
        torch.zeros_like(p) if g is None else g.detach().clone() for p, g in zip(params, grads)
    ]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = torch.Generator().manual_seed(rng_seed)
    n = min(n_coords, total)
    flat_idx = torch.randperm(total, generator=rng)[:n]

    max_rel = 0.0
    with torch.no_grad():
        for fi in flat_idx.tolist():
            pi, offset = 0, fi
            while offset >= sizes[pi]:
                offset -= sizes[pi]
                pi += 1
            flat = params[pi].view(-1)
            orig = flat[offset].item()
            flat[offset] = orig + step
            f_plus = loss_fn().item()
            flat[offset] = orig - step
            f_minus = loss_fn().item()
            flat[offset] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            analytic = grads[pi].view(-1)[offset].item()
            denom = max(abs(fd), abs(analytic), floor)
            max_rel = max(max_rel, abs(fd - analytic) / denom)
    return max_rel
