"""Forgery synthesis with pixel-exact ground-truth masks.

Fakes are built by mask-compositing content from a second pristine image into
a target image, so the binary mask used for compositing *is* the segmentation
ground truth. Also houses crop-box enlargement, quota sampling and rank-based
split assignment used for manifest construction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from PIL import Image, ImageDraw

from .errors import DimensionError, ValidationError
from .manifest import DatasetManifest, ManifestRecord, write_manifest
from .seeding import derive_seed, stable_hash

# Fractional anchor zones where component regions are placed: two eye zones,
# a center (nose) zone and a lower-center (mouth) zone of the crop.
COMPONENT_ZONES = {
    "upper-left": (0.32, 0.36),
    "upper-right": (0.68, 0.36),
    "center": (0.50, 0.58),
    "lower-center": (0.50, 0.80),
}

REAL_TAGS = ("real-a", "real-b")
FAKE_TAGS = ("spliced-entire", "spliced-partial")


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


def validate_binary_mask(mask: np.ndarray) -> None:
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError("mask contains values other than 0 and 1")


@dataclass
class ImageSample:
    """An image, its manipulation mask, and bookkeeping metadata."""

    image: np.ndarray  # (h, w, c) float in [0, 1]
    mask: np.ndarray  # (h, w) binary
    label: int
    source_tag: str
    group_id: str
    split: str = "train"

    def validate(self) -> None:
        validate_binary_mask(self.mask)
        if self.image.shape[:2] != self.mask.shape:
            raise DimensionError(
                f"image spatial shape {self.image.shape[:2]} != mask shape {self.mask.shape}"
            )
        popcount = int(self.mask.sum())
        if self.label == 0 and popcount != 0:
            raise ValidationError("real sample has a non-empty manipulation mask")
        if self.label == 1 and popcount == 0:
            raise ValidationError("fake sample has an empty manipulation mask")


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box sides must be positive, got w={self.w}, h={self.h}")


def enlarge_box(box: BoundingBox, factor: float, image_bounds: tuple[int, int]) -> BoundingBox:
    """Scale a box about its center by `factor` per side, then clip to the image.

    `image_bounds` is (H, W). A box that clips to zero area is an error.
    """
    if factor < 1:
        raise ValidationError(f"enlargement factor must be >= 1, got {factor}")
    bh, bw = image_bounds
    cx = box.x + box.w / 2.0
    cy = box.y + box.h / 2.0
    nw = box.w * factor
    nh = box.h * factor
    x0 = max(0.0, cx - nw / 2.0)
    y0 = max(0.0, cy - nh / 2.0)
    x1 = min(float(bw), cx + nw / 2.0)
    y1 = min(float(bh), cy + nh / 2.0)
    if x1 <= x0 or y1 <= y0:
        raise ValidationError(f"box {box} enlarged by {factor} clips to zero area in bounds {image_bounds}")
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------


def composite(source_generated: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Blend generated content into a target image under a binary mask.

    Returns the per-channel mix: source pixels where the mask is 1, target
    pixels where it is 0, bit-exactly (pixel selection, no arithmetic).
    """
    if source_generated.shape != target.shape:
        raise DimensionError(
            f"source shape {source_generated.shape} != target shape {target.shape}"
        )
    validate_binary_mask(np.asarray(mask))
    if mask.shape != source_generated.shape[:2]:
        raise DimensionError(
            f"mask shape {mask.shape} != image spatial shape {source_generated.shape[:2]}"
        )
    m = mask.astype(bool)
    if source_generated.ndim == 3:
        m = m[..., None]
    return np.where(m, source_generated, target)


# ---------------------------------------------------------------------------
# Component region rasterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float


@dataclass(frozen=True)
class Polygon:
    points: tuple[tuple[float, float], ...]


RegionSpec = Union[Ellipse, Rect, Polygon]


def _rasterize(shape: tuple[int, int], spec: RegionSpec) -> np.ndarray:
    h, w = shape
    if isinstance(spec, Ellipse):
        yy, xx = np.mgrid[0:h, 0:w]
        # pixel-center containment
        d = ((xx + 0.5 - spec.cx) / spec.rx) ** 2 + ((yy + 0.5 - spec.cy) / spec.ry) ** 2
        return d <= 1.0
    if isinstance(spec, Rect):
        yy, xx = np.mgrid[0:h, 0:w]
        return (
            (xx + 0.5 >= spec.x)
            & (xx + 0.5 < spec.x + spec.w)
            & (yy + 0.5 >= spec.y)
            & (yy + 0.5 < spec.y + spec.h)
        )
    if isinstance(spec, Polygon):
        img = Image.new("1", (w, h), 0)
        ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in spec.points], fill=1)
        return np.asarray(img, dtype=bool)
    raise ValidationError(f"unknown region descriptor {type(spec).__name__}")


def _jittered(spec: RegionSpec, rng: np.random.Generator, jitter: float, shape: tuple[int, int]) -> RegionSpec:
    h, w = shape
    dx = rng.uniform(-jitter, jitter) * w
    dy = rng.uniform(-jitter, jitter) * h
    if isinstance(spec, Ellipse):
        scale = 1.0 + rng.uniform(-jitter, jitter)
        return Ellipse(spec.cx + dx, spec.cy + dy, spec.rx * scale, spec.ry * scale)
    if isinstance(spec, Rect):
        scale = 1.0 + rng.uniform(-jitter, jitter)
        return Rect(spec.x + dx, spec.y + dy, spec.w * scale, spec.h * scale)
    return Polygon(tuple((x + dx, y + dy) for x, y in spec.points))


def synth_component_mask(
    shape: tuple[int, int],
    components: Sequence[RegionSpec],
    rng_seed: int = 0,
    jitter: float = 0.0,
) -> np.ndarray:
    """Rasterize the union of component regions into a binary mask.

    With `jitter` > 0 each region is randomly displaced/rescaled by up to that
    fraction of the image size, deterministically under `rng_seed`.
    """
    if not components:
        raise ValidationError("component list is empty")
    rng = np.random.default_rng(rng_seed)
    mask = np.zeros(shape, dtype=bool)
    for spec in components:
        if jitter > 0.0:
            spec = _jittered(spec, rng, jitter, shape)
        mask |= _rasterize(shape, spec)
    if not mask.any():
        raise ValidationError("components rasterized to an empty mask")
    return mask.astype(np.uint8)


# ---------------------------------------------------------------------------
# Sampling and splitting
# ---------------------------------------------------------------------------


def _label_of(sample) -> int:
    if isinstance(sample, Mapping):
        return int(sample["label"])
    return int(sample.label)


def quota_sample(
    groups: Mapping[str, Sequence],
    real_quota: int,
    fake_quota: int,
    rng_seed: int,
) -> list:
    """Select up to `real_quota` frames per real group and `fake_quota` per fake group.

    Groups must be label-homogeneous. A group smaller than its quota yields all
    of its frames. Selection is deterministic under the seed and independent
    per group.
    """
    if real_quota < 0 or fake_quota < 0:
        raise ValidationError("quotas must be non-negative")
    selected = []
    for gid in sorted(groups):
        frames = list(groups[gid])
        if not frames:
            continue
        labels = {_label_of(f) for f in frames}
        if len(labels) != 1:
            raise ValidationError(f"group {gid!r} mixes real and fake frames")
        quota = fake_quota if labels.pop() == 1 else real_quota
        if quota == 0:
            continue
        if len(frames) <= quota:
            selected.extend(frames)
            continue
        rng = np.random.default_rng(derive_seed(rng_seed, f"quota:{gid}"))
        idx = np.sort(rng.choice(len(frames), size=quota, replace=False))
        selected.extend(frames[i] for i in idx)
    return selected


def split_by_rank(samples: Sequence, n_train: int, n_test: int) -> list[str]:
    """First `n_train` samples -> train, last `n_test` -> test, remainder -> val."""
    n = len(samples)
    if n_train < 0 or n_test < 0:
        raise ValidationError("split counts must be non-negative")
    if n_train + n_test > n:
        raise ValidationError(f"n_train + n_test = {n_train + n_test} exceeds sample count {n}")
    return ["train"] * n_train + ["val"] * (n - n_train - n_test) + ["test"] * n_test


# ---------------------------------------------------------------------------
# Image / mask files
# ---------------------------------------------------------------------------


def save_image(path: Path | str, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L").save(path, format="PNG")


def load_image(path: Path | str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def save_mask(path: Path | str, mask: np.ndarray) -> None:
    validate_binary_mask(np.asarray(mask))
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask(path: Path | str) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# Desk-scale corpus
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    """Procedural corpus parameters. Defaults target desk-scale experiments."""

    n_samples: int = 250
    image_size: int = 64
    fake_fraction: float = 0.5
    entire_fraction: float = 0.4
    n_groups: int = 25
    n_train: int = 200
    n_test: int = 50
    min_components: int = 1
    max_components: int = 3
    noise: float = 0.02

    def validate(self) -> None:
        if self.n_samples <= 0:
            raise ValidationError("n_samples must be positive")
        if self.image_size <= 0:
            raise ValidationError("image_size must be positive")
        if not 0.0 <= self.fake_fraction <= 1.0:
            raise ValidationError("fake_fraction must lie in [0, 1]")
        if not 0.0 <= self.entire_fraction <= 1.0:
            raise ValidationError("entire_fraction must lie in [0, 1]")
        if self.n_groups <= 1:
            raise ValidationError("need at least 2 groups to splice across groups")
        if self.n_train + self.n_test > self.n_samples:
            raise ValidationError("n_train + n_test exceeds n_samples")
        if not 1 <= self.min_components <= self.max_components <= len(COMPONENT_ZONES):
            raise ValidationError(
                f"component counts must satisfy 1 <= min <= max <= {len(COMPONENT_ZONES)}"
            )


def _group_params(corpus_seed: int, gid: int) -> dict:
    rng = np.random.default_rng(derive_seed(corpus_seed, f"group:{gid}"))
    warm = gid % 2 == 1
    # warm groups lean red/yellow, cool groups lean blue/green
    lo = np.array([0.45, 0.25, 0.05]) if warm else np.array([0.05, 0.25, 0.45])
    hi = np.array([0.95, 0.75, 0.45]) if warm else np.array([0.45, 0.75, 0.95])
    return {
        "warm": warm,
        "theta": rng.uniform(0.0, 2.0 * math.pi),
        "c0": rng.uniform(lo, hi),
        "c1": rng.uniform(lo, hi),
        "lo": lo,
        "hi": hi,
    }


def render_pristine(size: int, params: dict, rng: np.random.Generator, noise: float) -> np.ndarray:
    """Render one pristine face-like image: a smooth oriented gradient with
    soft component blobs at the four anchor zones plus fine pixel noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    t = math.cos(params["theta"]) * xx + math.sin(params["theta"]) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0 = np.clip(params["c0"] + rng.uniform(-0.05, 0.05, 3), 0, 1)
    c1 = np.clip(params["c1"] + rng.uniform(-0.05, 0.05, 3), 0, 1)
    img = c0 + (c1 - c0) * t[..., None]
    for zx, zy in COMPONENT_ZONES.values():
        cx = (zx + rng.uniform(-0.03, 0.03)) * size
        cy = (zy + rng.uniform(-0.03, 0.03)) * size
        rx = rng.uniform(0.08, 0.14) * size
        ry = rng.uniform(0.08, 0.14) * size
        color = rng.uniform(params["lo"], params["hi"])
        d = ((xx * size - cx) / rx) ** 2 + ((yy * size - cy) / ry) ** 2
        alpha = np.clip(1.4 - d, 0.0, 1.0)[..., None] * 0.85
        img = img * (1.0 - alpha) + color * alpha
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def _component_specs(size: int, zone_names: Sequence[str]) -> list[Ellipse]:
    specs = []
    for name in zone_names:
        zx, zy = COMPONENT_ZONES[name]
        specs.append(Ellipse(zx * size, zy * size, 0.12 * size, 0.10 * size))
    return specs


def _entire_face_spec(size: int) -> Ellipse:
    return Ellipse(0.5 * size, 0.56 * size, 0.34 * size, 0.42 * size)


def synth_sample(config: CorpusConfig, corpus_seed: int, index: int, label: int, group: int) -> ImageSample:
    """Render sample `index`: a pristine frame, or a splice-composited fake."""
    size = config.image_size
    rng = np.random.default_rng(derive_seed(corpus_seed, f"sample:{index}"))
    params = _group_params(corpus_seed, group)
    target = render_pristine(size, params, rng, config.noise)
    gid = f"g{group:03d}"
    if label == 0:
        tag = "real-b" if params["warm"] else "real-a"
        return ImageSample(target.astype(np.float32), np.zeros((size, size), np.uint8), 0, tag, gid)

    # donor comes from the opposite palette family so every splice carries a
    # chromatic seam; same-family donors can blend in invisibly
    donors = [g for g in range(config.n_groups) if g % 2 != group % 2]
    donor_group = int(donors[rng.integers(0, len(donors))])
    donor = render_pristine(size, _group_params(corpus_seed, donor_group), rng, config.noise)
    if rng.uniform() < config.entire_fraction:
        tag = "spliced-entire"
        specs: list[RegionSpec] = [_entire_face_spec(size)]
    else:
        tag = "spliced-partial"
        count = int(rng.integers(config.min_components, config.max_components + 1))
        zones = list(COMPONENT_ZONES)
        picked = [zones[i] for i in rng.choice(len(zones), size=count, replace=False)]
        specs = _component_specs(size, picked)
    mask = synth_component_mask(
        (size, size), specs, rng_seed=derive_seed(corpus_seed, f"mask:{index}"), jitter=0.04
    )
    fake = composite(donor, target, mask).astype(np.float32)
    sample = ImageSample(fake, mask, 1, tag, gid)
    sample.validate()
    return sample


def _label_pattern(n: int, fake_fraction: float) -> list[int]:
    # Bresenham-style spread: exact floor(n * fraction) fakes, interleaved so
    # rank-based splits stay class-balanced.
    return [int(math.floor((i + 1) * fake_fraction) > math.floor(i * fake_fraction)) for i in range(n)]


def build_desk_corpus(config: CorpusConfig, rng_seed: int, out_dir: Path | str) -> DatasetManifest:
    """Generate images, masks and a manifest under `out_dir`, deterministically."""
    config.validate()
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directories under {out_dir}: {exc}") from exc

    labels = _label_pattern(config.n_samples, config.fake_fraction)
    splits = split_by_rank(labels, config.n_train, config.n_test)
    records = []
    for i, (label, split) in enumerate(zip(labels, splits)):
        sample = synth_sample(config, rng_seed, i, label, group=i % config.n_groups)
        sample.split = split
        sample.validate()
        image_rel = f"images/{i:05d}.png"
        mask_rel = f"masks/{i:05d}.png"
        save_image(out_dir / image_rel, sample.image)
        save_mask(out_dir / mask_rel, sample.mask)
        records.append(
            ManifestRecord(
                image_path=image_rel,
                mask_path=mask_rel,
                label=sample.label,
                source_tag=sample.source_tag,
                group_id=sample.group_id,
                split=split,
            )
        )

    manifest = DatasetManifest(
        records, seed=rng_seed, config_hash=stable_hash(asdict(config)), root=out_dir
    )
    manifest.validate()
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
