"""Corpus handling: manifests, image normalization, synthetic test corpora.

A corpus is a CSV manifest of samples plus image files on disk. Each eye
of each subject is a separate identity, so the identity label is the pair
(subject_id, eye). Geometric normalization brings every eye to the same
sclera radius, center and orientation before feature extraction.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

EYES = ("left", "right")

MANIFEST_COLUMNS = (
    "sample_id",
    "subject_id",
    "eye",
    "session",
    "image_path",
    "sclera_cx",
    "sclera_cy",
    "sclera_r",
    "orientation",
    "distance_group",
)

# ITU-R 601 luma weights, applied to (R, G, B)
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class ManifestParseError(ValueError):
    pass


class DuplicateSampleIdError(ValueError):
    pass


class MissingAnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class ScleraAnnotation:
    """Sclera circle (center, radius R_s) and eye-axis orientation in degrees."""

    center_x: float
    center_y: float
    radius: float
    orientation: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sclera radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    subject_id: str
    eye: str
    session: int | None = None
    image_path: str | None = None
    sclera: ScleraAnnotation | None = None
    distance_group: int | None = None

    def __post_init__(self):
        if self.eye not in EYES:
            raise ValueError(f"eye must be one of {EYES}, got {self.eye!r}")

    @property
    def identity(self) -> tuple[str, str]:
        return (self.subject_id, self.eye)


@dataclass(frozen=True)
class NormalizationConfig:
    target_sclera_radius: float = 30.0
    crop_factor: float = 7.6
    output_side: int = 224
    mode: str = "full"  # or "resize_only"
    interpolation: str = "bicubic"

    def __post_init__(self):
        if self.crop_factor <= 0 or self.output_side <= 0:
            raise ValueError("crop_factor and output_side must be positive")
        if self.mode not in ("full", "resize_only"):
            raise ValueError(f"unknown normalization mode: {self.mode!r}")
        if self.interpolation != "bicubic":
            raise ValueError("only bicubic interpolation is supported")

    @property
    def crop_side(self) -> int:
        """Pre-resize crop side in pixels: crop_factor times the target radius."""
        return int(round(self.crop_factor * self.target_sclera_radius))


@dataclass(frozen=True)
class NormalizedImage:
    sample_id: str
    pixels: np.ndarray  # uint8, output_side x output_side
    provenance: NormalizationConfig


def identities(records) -> list[tuple[str, str]]:
    """Distinct identities in first-appearance order."""
    seen: dict[tuple[str, str], None] = {}
    for rec in records:
        seen.setdefault(rec.identity, None)
    return list(seen)


def load_manifest(path, warn_missing: bool = True) -> list[SampleRecord]:
    """Parse a manifest CSV into SampleRecords.

    Duplicate sample_ids raise; a nonexistent image_path only warns, so
    partially-fetched corpora can still be partitioned.
    """
    path = Path(path)
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestParseError(
                f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = _parse_row(row)
            except (ValueError, TypeError) as exc:
                raise ManifestParseError(f"{path}:{lineno}: {exc}") from exc
            if rec.sample_id in seen:
                raise DuplicateSampleIdError(
                    f"{path}:{lineno}: duplicate sample_id {rec.sample_id!r}"
                )
            seen.add(rec.sample_id)
            if warn_missing and rec.image_path and not Path(rec.image_path).exists():
                warnings.warn(f"image file missing for {rec.sample_id}: {rec.image_path}")
            records.append(rec)
    return records


def _parse_row(row: dict) -> SampleRecord:
    def opt(key):
        value = row.get(key)
        if value is None:
            raise ValueError(f"missing column {key}")
        value = value.strip()
        return value if value else None

    sample_id = opt("sample_id")
    subject_id = opt("subject_id")
    eye = opt("eye")
    if not sample_id or not subject_id or not eye:
        raise ValueError("sample_id, subject_id and eye are required")
    cx, cy, r = opt("sclera_cx"), opt("sclera_cy"), opt("sclera_r")
    if (cx is None) != (r is None) or (cy is None) != (r is None):
        raise ValueError("sclera_cx, sclera_cy, sclera_r must be given together")
    sclera = None
    if r is not None:
        orientation = opt("orientation")
        sclera = ScleraAnnotation(
            center_x=float(cx),
            center_y=float(cy),
            radius=float(r),
            orientation=float(orientation) if orientation is not None else 0.0,
        )
    session = opt("session")
    distance_group = opt("distance_group")
    return SampleRecord(
        sample_id=sample_id,
        subject_id=subject_id,
        eye=eye,
        session=int(session) if session is not None else None,
        image_path=opt("image_path"),
        sclera=sclera,
        distance_group=int(distance_group) if distance_group is not None else None,
    )


def save_manifest(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for rec in records:
            sclera = rec.sclera
            writer.writerow(
                [
                    rec.sample_id,
                    rec.subject_id,
                    rec.eye,
                    "" if rec.session is None else rec.session,
                    rec.image_path or "",
                    "" if sclera is None else repr(sclera.center_x),
                    "" if sclera is None else repr(sclera.center_y),
                    "" if sclera is None else repr(sclera.radius),
                    "" if sclera is None else repr(sclera.orientation),
                    "" if rec.distance_group is None else rec.distance_group,
                ]
            )


def load_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    return img


def to_gray(image: np.ndarray) -> np.ndarray:
    """Collapse a color image to 8-bit gray with ITU-R 601 luma weights."""
    if image.ndim == 2:
        return image if image.dtype == np.uint8 else np.clip(image, 0, 255).astype(np.uint8)
    if image.ndim == 3 and image.shape[2] == 3:
        # cv2 images are BGR in memory
        return cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    if image.ndim == 3 and image.shape[2] == 4:
        return cv2.cvtColor(image, cv2.COLOR_BGRA2GRAY)
    raise ValueError(f"unsupported image shape {image.shape}")


def normalize_image(record: SampleRecord, image: np.ndarray, cfg: NormalizationConfig) -> NormalizedImage:
    """Geometric + photometric normalization of one sample.

    full mode: rescale so the annotated sclera radius equals the target,
    rotate by minus the annotated orientation, crop a square of
    crop_factor * target radius centered on the sclera center (zero-padded
    where the crop leaves the image), convert to gray and bicubic-resize
    to the output side. The whole rescale/rotate/crop/resize chain is one
    affine map and is applied as a single warp, so the image is resampled
    once; re-normalizing an already-normalized image is then an identity
    warp rather than a second round of interpolation error.

    resize_only mode: gray, center-crop to the short side, bicubic resize.
    """
    if cfg.mode == "resize_only":
        gray = to_gray(image)
        h, w = gray.shape
        side = min(h, w)
        top, left = (h - side) // 2, (w - side) // 2
        square = gray[top : top + side, left : left + side]
        out = cv2.resize(square, (cfg.output_side, cfg.output_side), interpolation=cv2.INTER_CUBIC)
        return NormalizedImage(sample_id=record.sample_id, pixels=out, provenance=cfg)

    ann = record.sclera
    if ann is None:
        raise MissingAnnotationError(f"{record.sample_id}: full normalization needs a sclera annotation")
    if not ann.radius > 0:
        raise ValueError(f"{record.sample_id}: degenerate sclera radius {ann.radius}")
    h, w = image.shape[:2]
    if not (0 <= ann.center_x < w and 0 <= ann.center_y < h):
        raise ValueError(f"{record.sample_id}: sclera center outside image bounds")

    side = cfg.output_side
    scale = (cfg.target_sclera_radius / ann.radius) * (side / cfg.crop_side)
    matrix = cv2.getRotationMatrix2D((ann.center_x, ann.center_y), -ann.orientation, scale)
    # retarget the translation so the sclera center lands on the output center
    matrix[0, 2] += (side - 1) / 2 - ann.center_x
    matrix[1, 2] += (side - 1) / 2 - ann.center_y
    warped = cv2.warpAffine(
        image,
        matrix,
        (side, side),
        flags=cv2.INTER_CUBIC,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
    return NormalizedImage(sample_id=record.sample_id, pixels=to_gray(warped), provenance=cfg)


def implied_annotation(cfg: NormalizationConfig) -> ScleraAnnotation:
    """Annotation describing the sclera in a full-mode normalized output."""
    center = (cfg.output_side - 1) / 2
    return ScleraAnnotation(
        center_x=center,
        center_y=center,
        radius=cfg.target_sclera_radius * cfg.output_side / cfg.crop_side,
        orientation=0.0,
    )


def group_mean_radius(records) -> dict[int | None, float]:
    """Mean annotated sclera radius per distance_group.

    Records without annotations are skipped; records without a group fall
    under the None key. Used to retarget normalization per acquisition
    distance before a full-mode pass.
    """
    sums: dict[int | None, list[float]] = {}
    for rec in records:
        if rec.sclera is None:
            continue
        sums.setdefault(rec.distance_group, []).append(rec.sclera.radius)
    return {group: float(np.mean(vals)) for group, vals in sums.items()}


def synth_corpus(
    n_identities: int,
    samples_per_identity: int,
    noise_level: float,
    seed: int,
    side: int = 160,
) -> tuple[list[SampleRecord], dict[str, np.ndarray]]:
    """Procedural labeled corpus for end-to-end tests.

    Each identity gets a distinct smooth random texture prototype; each
    sample adds fresh seeded noise, lightly smoothed so it is not erased
    by the prototype's own smoothing, scaled by noise_level. Fully
    deterministic in the arguments. Identity k belongs to subject k // 2,
    alternating left/right eyes, so eye-identity handling is exercised.
    """
    if n_identities < 1 or samples_per_identity < 1:
        raise ValueError("counts must be >= 1")
    if noise_level < 0:
        raise ValueError("noise_level must be nonnegative")
    rng = np.random.default_rng(seed)
    records: list[SampleRecord] = []
    images: dict[str, np.ndarray] = {}
    annotation = ScleraAnnotation(
        center_x=(side - 1) / 2, center_y=(side - 1) / 2, radius=side / 5.0, orientation=0.0
    )
    for ident in range(n_identities):
        prototype = cv2.GaussianBlur(rng.normal(0.0, 1.0, size=(side, side)), (0, 0), sigmaX=3.0)
        for k in range(samples_per_identity):
            noise = cv2.GaussianBlur(rng.normal(0.0, 1.0, size=(side, side)), (0, 0), sigmaX=1.0)
            smooth = prototype + noise_level * noise
            low, high = smooth.min(), smooth.max()
            if high == low:
                pixels = np.zeros((side, side), np.uint8)
            else:
                pixels = (255.0 * (smooth - low) / (high - low)).round().astype(np.uint8)
            sample_id = f"id{ident:04d}_s{k:03d}"
            records.append(
                SampleRecord(
                    sample_id=sample_id,
                    subject_id=f"subj{ident // 2:04d}",
                    eye=EYES[ident % 2],
                    session=k,
                    image_path=None,
                    sclera=annotation,
                )
            )
            images[sample_id] = pixels
    return records, images


def write_corpus(records, images, out_dir) -> Path:
    """Write images as PNGs plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "images").mkdir(exist_ok=True)
    on_disk = []
    for rec in records:
        rel = f"images/{rec.sample_id}.png"
        if not cv2.imwrite(str(out_dir / rel), images[rec.sample_id]):
            raise OSError(f"failed to write {out_dir / rel}")
        on_disk.append(replace(rec, image_path=str(out_dir / rel)))
    manifest = out_dir / "manifest.csv"
    save_manifest(on_disk, manifest)
    return manifest
