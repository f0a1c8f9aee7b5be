"""Shared-encoder network with a detection head and a segmentation decoder.

One encoder feeds both branches: detection applies global average pooling and
two fully connected layers; segmentation upsamples back to input resolution
with transposed-convolution blocks (no encoder-decoder skip connections, so
everything the decoder sees must pass through the shared features).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

from .errors import CapabilityError, DimensionError, IntegrityError, ValidationError
from .seeding import derive_seed, stable_hash

BRANCHES = ("detection", "segmentation")
ENCODERS = ("plain", "separable")

# keeps p and S strictly inside (0,1) even when the sigmoid saturates in fp32
OUT_EPS = 1e-6

_CKPT_KIND = "forgeseg-checkpoint"


@dataclass
class ModelConfig:
    encoder: str = "plain"
    input_size: tuple[int, int, int] = (64, 64, 3)
    stages: int = 4
    base_channels: int = 16
    head_hidden: int = 128
    branches: tuple[str, ...] = BRANCHES

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.branches = tuple(sorted(set(self.branches)))

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ValidationError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if len(self.input_size) != 3:
            raise ValidationError(f"input_size must be (h, w, c), got {self.input_size}")
        h, w, c = self.input_size
        if h <= 0 or w <= 0 or c <= 0:
            raise ValidationError(f"input_size entries must be positive, got {self.input_size}")
        if self.stages < 1:
            raise ValidationError("stages must be >= 1")
        down = 2**self.stages
        if h % down or w % down:
            raise ValidationError(
                f"input size {h}x{w} is not divisible by 2^stages = {down}; "
                "the decoder could not reach input resolution"
            )
        if self.base_channels <= 0 or self.head_hidden <= 0:
            raise ValidationError("channel counts must be positive")
        if not self.branches:
            raise ValidationError("at least one branch is required")
        unknown = set(self.branches) - set(BRANCHES)
        if unknown:
            raise ValidationError(f"unknown branches {sorted(unknown)}; valid: {BRANCHES}")

    def stage_channels(self) -> list[int]:
        return [min(self.base_channels * 2**i, self.base_channels * 8) for i in range(self.stages)]

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "input_size": list(self.input_size),
            "stages": self.stages,
            "base_channels": self.base_channels,
            "head_hidden": self.head_hidden,
            "branches": list(self.branches),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        cfg = cls(
            encoder=raw["encoder"],
            input_size=tuple(raw["input_size"]),
            stages=int(raw["stages"]),
            base_channels=int(raw["base_channels"]),
            head_hidden=int(raw["head_hidden"]),
            branches=tuple(raw["branches"]),
        )
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())


@dataclass
class ModelOutput:
    """Forward result: forgery probability and/or soft segmentation map."""

    p: Optional[torch.Tensor] = None  # (N,) in (0,1)
    S: Optional[torch.Tensor] = None  # (N, h, w) in (0,1)


def _sep_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, in_ch, 3, padding=1, groups=in_ch, bias=False),
        nn.Conv2d(in_ch, out_ch, 1, bias=False),
    )


class _SeparableBlock(nn.Module):
    """Residual downsampling block built from depthwise-separable convolutions."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.main = nn.Sequential(
            _sep_conv(in_ch, out_ch),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            _sep_conv(out_ch, out_ch),
            nn.BatchNorm2d(out_ch),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.skip = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 1, stride=2, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.main(x) + self.skip(x))


def _plain_encoder(config: ModelConfig) -> nn.Sequential:
    chs = config.stage_channels()
    c_in = config.input_size[2]
    layers: list[nn.Module] = [
        nn.Conv2d(c_in, config.base_channels, 3, padding=1),
        nn.BatchNorm2d(config.base_channels),
        nn.ReLU(inplace=True),
    ]
    prev = config.base_channels
    for ch in chs:
        layers += [
            nn.Conv2d(prev, ch, 3, stride=2, padding=1),
            nn.BatchNorm2d(ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.BatchNorm2d(ch),
            nn.ReLU(inplace=True),
        ]
        prev = ch
    return nn.Sequential(*layers)


def _separable_encoder(config: ModelConfig) -> nn.Sequential:
    chs = config.stage_channels()
    c_in = config.input_size[2]
    layers: list[nn.Module] = [
        nn.Conv2d(c_in, config.base_channels, 3, padding=1),
        nn.BatchNorm2d(config.base_channels),
        nn.ReLU(inplace=True),
    ]
    prev = config.base_channels
    for ch in chs:
        layers.append(_SeparableBlock(prev, ch))
        prev = ch
    return nn.Sequential(*layers)


def _decoder(config: ModelConfig) -> nn.Sequential:
    chs = config.stage_channels()
    in_chs = list(reversed(chs))
    layers: list[nn.Module] = []
    for i, ch in enumerate(in_chs):
        out = in_chs[i + 1] if i + 1 < len(in_chs) else config.base_channels
        layers += [
            nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1),
            nn.BatchNorm2d(out),
            nn.ReLU(inplace=True),
        ]
    proj = nn.Conv2d(config.base_channels, 1, 1)
    # start the mask output near empty: background pixels dominate every
    # dataset, so a negative prior avoids spending early steps unlearning 0.5
    nn.init.constant_(proj.bias, -2.0)
    layers.append(proj)
    return nn.Sequential(*layers)


def _detection_head(config: ModelConfig) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(config.stage_channels()[-1], config.head_hidden),
        nn.ReLU(inplace=True),
        nn.Linear(config.head_hidden, 1),
    )


class CollabModel(nn.Module):
    """Shared encoder with optional detection and segmentation branches.

    Submodules are initialized under per-submodule derived seeds, so the
    encoder (and any branch both models share) starts identically across
    different branch subsets built from the same seed.
    """

    def __init__(self, config: ModelConfig, rng_seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        torch.manual_seed(derive_seed(rng_seed, "encoder"))
        build_enc = _plain_encoder if config.encoder == "plain" else _separable_encoder
        self.encoder = build_enc(config)
        self.det_head = None
        self.seg_decoder = None
        if "detection" in config.branches:
            torch.manual_seed(derive_seed(rng_seed, "detection"))
            self.det_head = _detection_head(config)
        if "segmentation" in config.branches:
            torch.manual_seed(derive_seed(rng_seed, "segmentation"))
            self.seg_decoder = _decoder(config)

    # -- pieces ------------------------------------------------------------

    def _check_input(self, x: torch.Tensor) -> None:
        h, w, c = self.config.input_size
        if x.ndim != 4 or x.shape[1] != c or x.shape[2] != h or x.shape[3] != w:
            raise DimensionError(
                f"expected batch of shape (N, {c}, {h}, {w}), got {tuple(x.shape)}"
            )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.encoder(x)

    def detect_score(self, feats: torch.Tensor) -> torch.Tensor:
        if self.det_head is None:
            raise CapabilityError("model was built without a detection branch")
        pooled = feats.mean(dim=(2, 3))
        return self.det_head(pooled).squeeze(1)

    def detect(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.detect_score(feats)).clamp(OUT_EPS, 1.0 - OUT_EPS)

    def segment(self, feats: torch.Tensor) -> torch.Tensor:
        if self.seg_decoder is None:
            raise CapabilityError("model was built without a segmentation branch")
        logits = self.seg_decoder(feats).squeeze(1)
        return torch.sigmoid(logits).clamp(OUT_EPS, 1.0 - OUT_EPS)

    # -- public forward ----------------------------------------------------

    def forward(self, x: torch.Tensor, branches: Optional[tuple[str, ...]] = None) -> ModelOutput:
        wanted = self.config.branches if branches is None else tuple(branches)
        unknown = set(wanted) - set(self.config.branches)
        if unknown:
            raise CapabilityError(f"model has no branch {sorted(unknown)}")
        feats = self.encode(x)
        out = ModelOutput()
        if "detection" in wanted:
            out.p = self.detect(feats)
        if "segmentation" in wanted:
            out.S = self.segment(feats)
        return out

    def spatial_activations(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Last encoder stage activations plus p, graph-connected so the caller
        can take gradients of p with respect to the activations."""
        if self.det_head is None:
            raise CapabilityError("spatial activations require the detection branch")
        feats = self.encode(x)
        feats.retain_grad()
        return feats, self.detect(feats)


def build_model(config: ModelConfig, rng_seed: int) -> CollabModel:
    """Construct the model with deterministic, seed-keyed initialization."""
    return CollabModel(config, rng_seed=rng_seed)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: CollabModel
    step: int
    optimizer_state: Optional[dict] = None
    torch_rng: Optional[torch.Tensor] = field(default=None, repr=False)
    config_hash: str = ""


def save_checkpoint(
    model: CollabModel,
    path: Path | str,
    step: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": _CKPT_KIND,
        "version": 1,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "step": int(step),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: Path | str, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != _CKPT_KIND:
        raise IntegrityError(f"{path} is not a checkpoint file")
    stored_hash = payload.get("config_hash", "")
    actual_hash = stable_hash(payload["config"])
    if stored_hash != actual_hash:
        raise IntegrityError(
            f"checkpoint {path} config-hash mismatch: stored {stored_hash[:12]}..., "
            f"recomputed {actual_hash[:12]}... (file corrupted or edited)"
        )
    config = ModelConfig.from_dict(payload["config"])
    if expected_config is not None and expected_config.config_hash() != stored_hash:
        raise IntegrityError(
            f"checkpoint {path} was written for config hash {stored_hash[:12]}..., "
            f"expected {expected_config.config_hash()[:12]}..."
        )
    model = build_model(config, rng_seed=0)
    model.load_state_dict(payload["model_state"])
    return Checkpoint(
        model=model,
        step=int(payload["step"]),
        optimizer_state=payload.get("optimizer_state"),
        torch_rng=payload.get("torch_rng"),
        config_hash=stored_hash,
    )
