"""Training loop for the shared-encoder detector / segmenter.

Batch order is stateless: every epoch's permutation is derived from the run
seed and the epoch index alone, so resuming from a checkpoint at step k
replays exactly the batches a straight run would have seen from step k+1.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data import SplitArrays, load_split
from .errors import CapabilityError, NumericalError, ValidationError
from .losses import LossWeights, det_loss, seg_loss
from .manifest import DatasetManifest
from .metrics import MetricsReport, evaluate_arrays
from .model import Checkpoint, CollabModel, save_checkpoint
from .seeding import derive_seed, stable_hash

BRANCH_MODES = ("joint", "no-seg", "no-det")
_LOG_KIND = "forgeseg-train-log"


def branches_for_mode(mode: str) -> tuple[str, ...]:
    if mode == "joint":
        return ("detection", "segmentation")
    if mode == "no-seg":
        return ("detection",)
    if mode == "no-det":
        return ("segmentation",)
    raise ValidationError(f"unknown branch_mode {mode!r}, expected one of {BRANCH_MODES}")


OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 16
    optimizer: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_det: float = 1.0
    lambda_seg: float = 1.0
    branch_mode: str = "joint"
    seed: int = 0
    eval_interval: int = 0
    checkpoint_interval: int = 0
    include_real_in_seg: bool = True

    def validate(self) -> None:
        if self.steps <= 0:
            raise ValidationError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(
                f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}"
            )
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {beta}")
        branches_for_mode(self.branch_mode)
        if self.lambda_det < 0 or self.lambda_seg < 0:
            raise ValidationError("loss weights must be non-negative")
        active = self.active_weights()
        if ("detection" in branches_for_mode(self.branch_mode) and active.lambda_det == 0
                and "segmentation" not in branches_for_mode(self.branch_mode)):
            raise ValidationError("detection-only run with lambda_det = 0 trains nothing")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ValidationError("intervals must be >= 0 (0 disables)")

    def active_weights(self) -> LossWeights:
        branches = branches_for_mode(self.branch_mode)
        return LossWeights(
            lambda_det=self.lambda_det if "detection" in branches else 0.0,
            lambda_seg=self.lambda_seg if "segmentation" in branches else 0.0,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return cls(**raw)

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())


@dataclass
class TrainLogRecord:
    step: int
    l_total: float
    lr: float
    l_det: Optional[float] = None
    l_seg: Optional[float] = None
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        payload: dict = {
            "step": self.step,
            "l_total": self.l_total,
            "lr": self.lr,
            "wall_time": self.wall_time,
        }
        if self.l_det is not None:
            payload["l_det"] = self.l_det
        if self.l_seg is not None:
            payload["l_seg"] = self.l_seg
        return json.dumps(payload, sort_keys=True)


def read_train_log(path: Path | str) -> tuple[dict, list[TrainLogRecord]]:
    """Parse a training log, returning its header and step records."""
    path = Path(path)
    header: dict = {}
    records: list[TrainLogRecord] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            if raw.get("kind") == _LOG_KIND:
                if records:
                    raise ValidationError(f"{path}:{lineno}: header after records")
                header = raw
                continue
            records.append(TrainLogRecord(
                step=int(raw["step"]),
                l_total=float(raw["l_total"]),
                lr=float(raw["lr"]),
                l_det=raw.get("l_det"),
                l_seg=raw.get("l_seg"),
                wall_time=float(raw.get("wall_time", 0.0)),
            ))
    for prev, cur in zip(records, records[1:]):
        if cur.step <= prev.step:
            raise ValidationError(
                f"{path}: steps not strictly increasing ({prev.step} then {cur.step})"
            )
    return header, records


def make_batches(split, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch, derived from (seed, epoch) alone.

    `split` may be a sample count or any sized collection of samples.
    """
    n = split if isinstance(split, int) else len(split)
    if n <= 0:
        raise ValidationError(f"need at least one sample, got {n}")
    if batch_size <= 0:
        raise ValidationError(f"batch_size must be positive, got {batch_size}")
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, f"epoch:{epoch}")))
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    model: CollabModel
    records: list[TrainLogRecord]
    log_path: Optional[Path] = None
    final_checkpoint: Optional[Path] = None
    best_checkpoint: Optional[Path] = None
    val_history: list[tuple[int, MetricsReport]] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.records[0].l_total

    @property
    def final_loss(self) -> float:
        return self.records[-1].l_total


def _batch_losses(
    model: CollabModel,
    images: torch.Tensor,
    masks: torch.Tensor,
    labels: torch.Tensor,
    branches: tuple[str, ...],
    include_real_in_seg: bool,
):
    out = model(images, branches=branches)
    l_det = det_loss(out.p, labels) if "detection" in branches else None
    l_seg = None
    if "segmentation" in branches:
        if include_real_in_seg:
            l_seg = seg_loss(out.S, masks)
        else:
            fake = labels >= 0.5
            if bool(fake.any()):
                l_seg = seg_loss(out.S[fake], masks[fake])
            else:
                l_seg = out.S.sum() * 0.0
    return l_det, l_seg


def train(
    model: CollabModel,
    manifest: DatasetManifest,
    config: TrainConfig,
    out_dir: Optional[Path | str] = None,
    resume: Optional[Checkpoint] = None,
) -> TrainResult:
    """Run the optimization loop over the manifest's train split."""
    config.validate()
    branches = branches_for_mode(config.branch_mode)
    for branch in branches:
        if branch not in model.config.branches:
            raise CapabilityError(
                f"branch_mode {config.branch_mode!r} needs a {branch} branch "
                f"but the model has {model.config.branches}"
            )

    start_step = 0
    if resume is not None:
        start_step = resume.step
        if start_step >= config.steps:
            raise ValidationError(
                f"checkpoint is at step {start_step}, nothing left of {config.steps}"
            )
        if resume.torch_rng is not None:
            torch.set_rng_state(resume.torch_rng)

    arrays = load_split(manifest, "train")
    n = len(arrays)
    batches_per_epoch = math.ceil(n / config.batch_size)
    weights = config.active_weights()

    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(
            model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2)
        )
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=config.lr)
    if resume is not None and resume.optimizer_state is not None:
        optimizer.load_state_dict(resume.optimizer_state)

    val_arrays: Optional[SplitArrays] = None
    if config.eval_interval > 0:
        if any(r.split == "val" for r in manifest.records):
            val_arrays = load_split(manifest, "val")

    out_path: Optional[Path] = None
    log_path: Optional[Path] = None
    log_fh = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        log_path = out_path / "train_log.jsonl"
        if resume is not None and log_path.exists():
            log_fh = log_path.open("a")
        else:
            log_fh = log_path.open("w")
            header = {
                "kind": _LOG_KIND,
                "version": 1,
                "seed": config.seed,
                "config_hash": config.config_hash(),
            }
            log_fh.write(json.dumps(header, sort_keys=True) + "\n")

    records: list[TrainLogRecord] = []
    val_history: list[tuple[int, MetricsReport]] = []
    best_metric = -math.inf
    best_path: Optional[Path] = None
    last_ckpt: Optional[Path] = None
    epoch = -1
    batches: list[np.ndarray] = []
    t0 = time.perf_counter()

    model.train()
    try:
        for step in range(start_step + 1, config.steps + 1):
            step_epoch = (step - 1) // batches_per_epoch
            if step_epoch != epoch:
                epoch = step_epoch
                batches = make_batches(n, config.batch_size, config.seed, epoch)
            idx = batches[(step - 1) % batches_per_epoch]
            sel = torch.from_numpy(idx)

            l_det, l_seg = _batch_losses(
                model,
                arrays.images[sel],
                arrays.masks[sel],
                arrays.labels[sel],
                branches,
                config.include_real_in_seg,
            )
            total = None
            if l_det is not None:
                total = weights.lambda_det * l_det
            if l_seg is not None:
                term = weights.lambda_seg * l_seg
                total = term if total is None else total + term

            if not torch.is_tensor(total):
                raise CapabilityError("no active loss term, nothing to optimize")
            total_val = float(total.detach())
            if not math.isfinite(total_val):
                where = f"last checkpoint: {last_ckpt}" if last_ckpt else "no checkpoint written"
                raise NumericalError(f"non-finite loss {total_val} at step {step}; {where}")

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            record = TrainLogRecord(
                step=step,
                l_total=total_val,
                lr=config.lr,
                l_det=None if l_det is None else float(l_det.detach()),
                l_seg=None if l_seg is None else float(l_seg.detach()),
                wall_time=time.perf_counter() - t0,
            )
            records.append(record)
            if log_fh is not None:
                log_fh.write(record.to_json() + "\n")

            if val_arrays is not None and step % config.eval_interval == 0:
                report = evaluate_arrays(model, val_arrays)
                model.train()
                val_history.append((step, report))
                metric = report.iou_all if report.iou_all is not None else report.acc_all
                if out_path is not None and metric is not None and metric > best_metric:
                    best_metric = metric
                    best_path = out_path / "ckpt_best.pt"
                    save_checkpoint(model, best_path, step=step, optimizer=optimizer)

            if (out_path is not None and config.checkpoint_interval > 0
                    and step % config.checkpoint_interval == 0):
                last_ckpt = out_path / f"ckpt_step_{step:06d}.pt"
                save_checkpoint(model, last_ckpt, step=step, optimizer=optimizer)
    finally:
        if log_fh is not None:
            log_fh.close()

    final_path: Optional[Path] = None
    if out_path is not None:
        final_path = out_path / "ckpt_final.pt"
        save_checkpoint(model, final_path, step=config.steps, optimizer=optimizer)

    model.eval()
    return TrainResult(
        model=model,
        records=records,
        log_path=log_path,
        final_checkpoint=final_path,
        best_checkpoint=best_path,
        val_history=val_history,
    )
