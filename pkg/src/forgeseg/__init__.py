"""Forgery synthesis, joint detection/segmentation training, and evaluation."""

from .errors import (
    CapabilityError,
    DependencyError,
    DimensionError,
    ForgeSegError,
    IntegrityError,
    NumericalError,
    ValidationError,
)
from .seeding import derive_seed, stable_hash
from .manifest import DatasetManifest, ManifestRecord, read_manifest, write_manifest
from .forge import (
    BoundingBox,
    CorpusConfig,
    Ellipse,
    ImageSample,
    Polygon,
    Rect,
    build_desk_corpus,
    composite,
    enlarge_box,
    load_image,
    load_mask,
    quota_sample,
    save_image,
    save_mask,
    split_by_rank,
    synth_component_mask,
    synth_sample,
)
from .losses import LossReport, LossWeights, det_loss, grad_check, seg_loss, total_loss
from .model import (
    Checkpoint,
    CollabModel,
    ModelConfig,
    ModelOutput,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .data import SplitArrays, load_split
from .train import (
    TrainConfig,
    TrainLogRecord,
    TrainResult,
    make_batches,
    read_train_log,
    train,
)
from .metrics import (
    ComparisonTable,
    MetricsReport,
    accuracy,
    binarize,
    compare_runs,
    evaluate,
    evaluate_arrays,
    format_table,
    iou,
)
from .cam import cam_mask_contrast, grad_cam_pp, heatmap_to_rgb, overlay, render_cam
from .config import EvalConfig, RunConfig, load_config, parse_config, save_config
from .cli import main, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CapabilityError",
    "Checkpoint",
    "CollabModel",
    "ComparisonTable",
    "CorpusConfig",
    "DatasetManifest",
    "DependencyError",
    "DimensionError",
    "Ellipse",
    "EvalConfig",
    "ForgeSegError",
    "ImageSample",
    "IntegrityError",
    "LossReport",
    "LossWeights",
    "ManifestRecord",
    "MetricsReport",
    "ModelConfig",
    "ModelOutput",
    "NumericalError",
    "Polygon",
    "Rect",
    "RunConfig",
    "SplitArrays",
    "TrainConfig",
    "TrainLogRecord",
    "TrainResult",
    "ValidationError",
    "accuracy",
    "binarize",
    "build_desk_corpus",
    "build_model",
    "cam_mask_contrast",
    "compare_runs",
    "composite",
    "derive_seed",
    "det_loss",
    "enlarge_box",
    "evaluate",
    "evaluate_arrays",
    "format_table",
    "grad_cam_pp",
    "grad_check",
    "heatmap_to_rgb",
    "iou",
    "load_checkpoint",
    "load_config",
    "load_image",
    "load_mask",
    "load_split",
    "main",
    "make_batches",
    "overlay",
    "parse_config",
    "quota_sample",
    "read_manifest",
    "read_train_log",
    "render_cam",
    "run_pipeline",
    "save_checkpoint",
    "save_config",
    "save_image",
    "save_mask",
    "seg_loss",
    "split_by_rank",
    "stable_hash",
    "synth_component_mask",
    "synth_sample",
    "total_loss",
    "train",
    "write_manifest",
]
