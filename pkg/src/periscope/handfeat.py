"""Hand-crafted baseline features: block LBP histograms, block HOG, SIFT.

LBPH and HOG produce fixed-length vectors (grid_rows x grid_cols blocks,
`bins` histogram bins per block, concatenated row-major) that feed the
cosine scorer. SIFT produces variable-size keypoint sets scored by the
match-ratio rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .corpus import NormalizedImage

# 8-neighborhood at radius 1, clockwise from the top-left corner; bit k of
# an LBP code is (neighbor_k > center)
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))

POPCOUNT = np.array([bin(code).count("1") for code in range(256)], dtype=np.uint8)

LOWE_RATIO = 0.8


class ImageTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class BlockHistogramConfig:
    grid_rows: int = 8
    grid_cols: int = 8
    bins: int = 8
    lbp_raw_codes: bool = False  # 256 raw-code bins instead of popcount buckets

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must be at least 1x1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.lbp_raw_codes and self.bins != 256:
            raise ValueError("raw-code LBP requires bins == 256")

    def as_dict(self) -> dict:
        return {
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "bins": self.bins,
            "lbp_raw_codes": self.lbp_raw_codes,
        }


@dataclass(frozen=True)
class FeatureVector:
    sample_id: str
    values: np.ndarray  # float32
    source: str  # lbph | hog | tap:<layer>


@dataclass(frozen=True)
class KeypointSet:
    """SIFT keypoints of one sample: geometry rows (x, y, scale,
    orientation degrees) parallel to unit-L2 descriptor rows."""

    sample_id: str
    geometry: np.ndarray  # (n, 4) float32
    descriptors: np.ndarray  # (n, 128) float32

    def __len__(self) -> int:
        return len(self.geometry)

    @property
    def keypoints(self) -> list[tuple[float, float, float, float, np.ndarray]]:
        return [
            (float(x), float(y), float(s), float(o), d)
            for (x, y, s, o), d in zip(self.geometry, self.descriptors)
        ]


@dataclass(frozen=True)
class MatchStats:
    """Match count and keypoint counts: the M, K_a, K_b of the ratio score."""

    m: int
    k_a: int
    k_b: int


def _blocks(pixels: np.ndarray, cfg: BlockHistogramConfig, min_side: int):
    h, w = pixels.shape
    bh, bw = h // cfg.grid_rows, w // cfg.grid_cols
    if bh < min_side or bw < min_side:
        raise ImageTooSmallError(
            f"{h}x{w} image with {cfg.grid_rows}x{cfg.grid_cols} grid leaves "
            f"{bh}x{bw} blocks; need at least {min_side}x{min_side}"
        )
    for r in range(cfg.grid_rows):
        for c in range(cfg.grid_cols):
            yield pixels[r * bh : (r + 1) * bh, c * bw : (c + 1) * bw]


def lbp_codes(block: np.ndarray) -> np.ndarray:
    """Raw 8-neighbor LBP codes of a block's interior pixels.

    A neighbor contributes its bit iff it is strictly greater than the
    center, so a constant region codes to 0.
    """
    center = block[1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.uint8)
    h, w = block.shape
    for bit, (dy, dx) in enumerate(LBP_OFFSETS):
        neighbor = block[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        codes |= (neighbor > center).astype(np.uint8) << bit
    return codes


def lbph(image: NormalizedImage, cfg: BlockHistogramConfig = BlockHistogramConfig()) -> FeatureVector:
    """Concatenated per-block LBP histograms.

    Codes are bucketed by popcount: 9 possible bit counts are spread over
    `bins` buckets with floor(popcount * bins / 9), which at the default 8
    bins merges counts 0 and 1 and keeps every other count separate. With
    lbp_raw_codes the 256 raw codes are their own bins. Each block is coded
    independently, so a block's histogram mass is its interior pixel count.
    """
    pixels = image.pixels
    parts = []
    for block in _blocks(pixels, cfg, min_side=3):
        codes = lbp_codes(block)
        if cfg.lbp_raw_codes:
            idx = codes
        else:
            idx = POPCOUNT[codes].astype(np.int64) * cfg.bins // 9
        parts.append(np.bincount(idx.ravel(), minlength=cfg.bins))
    values = np.concatenate(parts).astype(np.float32)
    return FeatureVector(sample_id=image.sample_id, values=values, source="lbph")


def hog(image: NormalizedImage, cfg: BlockHistogramConfig = BlockHistogramConfig()) -> FeatureVector:
    """Concatenated per-block histograms of gradient orientation.

    Orientations are unsigned (folded into [0, 180) degrees), hard-assigned
    to `bins` equal sectors and weighted by gradient magnitude.
    """
    pixels = image.pixels.astype(np.float64)
    gy, gx = np.gradient(pixels)
    magnitude = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    idx = np.minimum((angle * cfg.bins / 180.0).astype(np.int64), cfg.bins - 1)
    parts = []
    h, w = pixels.shape
    bh, bw = h // cfg.grid_rows, w // cfg.grid_cols
    if bh < 1 or bw < 1:
        raise ImageTooSmallError(f"{h}x{w} image cannot host a {cfg.grid_rows}x{cfg.grid_cols} grid")
    for r in range(cfg.grid_rows):
        for c in range(cfg.grid_cols):
            sl = np.s_[r * bh : (r + 1) * bh, c * bw : (c + 1) * bw]
            parts.append(
                np.bincount(idx[sl].ravel(), weights=magnitude[sl].ravel(), minlength=cfg.bins)
            )
    values = np.concatenate(parts).astype(np.float32)
    return FeatureVector(sample_id=image.sample_id, values=values, source="hog")


def sift_detect(image: NormalizedImage) -> KeypointSet:
    """SIFT keypoints + descriptors (Lowe's defaults), unit-L2 descriptors.

    Detection runs the standard DoG pipeline (3 scales per octave, sigma
    1.6, contrast threshold 0.04, edge ratio 10). Keypoints are sorted by
    (x, y, scale, orientation) so output order is reproducible.
    """
    pixels = image.pixels
    if min(pixels.shape) < 32:
        raise ImageTooSmallError(f"SIFT needs side >= 32, got {pixels.shape}")
    sift = cv2.SIFT_create(nOctaveLayers=3, contrastThreshold=0.04, edgeThreshold=10, sigma=1.6)
    keypoints, descriptors = sift.detectAndCompute(pixels, None)
    if not keypoints:
        return KeypointSet(
            sample_id=image.sample_id,
            geometry=np.zeros((0, 4), np.float32),
            descriptors=np.zeros((0, 128), np.float32),
        )
    geometry = np.array(
        [[kp.pt[0], kp.pt[1], kp.size, kp.angle] for kp in keypoints], dtype=np.float32
    )
    descriptors = descriptors.astype(np.float32)
    norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
    descriptors = descriptors / np.where(norms > 0, norms, 1.0)
    order = np.lexsort((geometry[:, 3], geometry[:, 2], geometry[:, 1], geometry[:, 0]))
    return KeypointSet(
        sample_id=image.sample_id, geometry=geometry[order], descriptors=descriptors[order]
    )


def sift_match(a: KeypointSet, b: KeypointSet) -> MatchStats:
    """Mutual nearest-neighbor matches passing Lowe's ratio test.

    A pair (i, j) counts iff i and j are each other's nearest descriptor
    and the nearest/second-nearest distance ratio is < 0.8 on both sides
    (a side with a single candidate has no second-nearest and imposes no
    ratio constraint). Symmetric in a and b by construction.
    """
    k_a, k_b = len(a), len(b)
    if k_a == 0 or k_b == 0:
        return MatchStats(m=0, k_a=k_a, k_b=k_b)
    da = a.descriptors.astype(np.float64)
    db = b.descriptors.astype(np.float64)
    sq = np.maximum(
        (da * da).sum(1)[:, None] - 2.0 * (da @ db.T) + (db * db).sum(1)[None, :], 0.0
    )
    dist = np.sqrt(sq)
    nn_ab = dist.argmin(axis=1)
    nn_ba = dist.argmin(axis=0)
    mutual = np.nonzero(nn_ba[nn_ab] == np.arange(k_a))[0]

    def ratio_ok(row: np.ndarray) -> bool:
        if len(row) < 2:
            return True
        d1, d2 = np.partition(row, 1)[:2]
        return bool(d1 < LOWE_RATIO * d2)

    m = 0
    for i in mutual:
        j = nn_ab[i]
        if ratio_ok(dist[i, :]) and ratio_ok(dist[:, j]):
            m += 1
    return MatchStats(m=m, k_a=k_a, k_b=k_b)
