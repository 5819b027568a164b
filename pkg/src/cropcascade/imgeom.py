"""Exact, deterministic image geometry: crop, square padding, resize, tensors.

Every operation here is a pure function of its inputs and bit-exact across
runs; the sampling conventions are pinned so tests can assert exact pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import BoundingBox, Image
from .errors import InvalidInputError


class ResizeFilter(str, Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


@dataclass(frozen=True)
class ResizePolicy:
    """Target dimensions plus the sampling filter."""

    width: int
    height: int
    filter: ResizeFilter = ResizeFilter.BILINEAR

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(
                f"resize target must be at least 1x1, got {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel mean/std applied after scaling pixels to [0, 1]."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.mean) != 3 or len(self.std) != 3:
            raise InvalidInputError("normalization needs exactly 3 channel constants")
        if any(not 0.0 <= m <= 1.0 for m in self.mean):
            raise InvalidInputError("channel means must lie in [0, 1]")
        if any(s <= 0.0 for s in self.std):
            raise InvalidInputError("channel stds must be strictly positive")


# Standard preprocessing constants for models pretrained on the usual
# large-scale photo corpus.
IMAGENET_NORMALIZATION = NormalizationSpec(
    mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)
)


def crop(image: Image, box: BoundingBox) -> Image:
    """Copy the sub-raster covered by `box`.

    The continuous box is integerized with floor(min)/ceil(max) so the
    detector's box is fully covered, then clamped to the image bounds.
    """
    x0, y0, x1, y1 = box.pixel_bounds(image.width, image.height)
    return Image(image.pixels[y0:y1, x0:x1])


def square_pad(image: Image, fill: tuple[int, int, int] = (0, 0, 0)) -> Image:
    """Pad to S x S with S = max(width, height), input centered.

    Odd remainders put the extra fill pixel on the right/bottom.
    """
    w, h = image.width, image.height
    side = max(w, h)
    if w == h:
        return image
    left = (side - w) // 2
    top = (side - h) // 2
    out = np.empty((side, side, 3), dtype=np.uint8)
    out[:, :] = np.asarray(fill, dtype=np.uint8)
    out[top : top + h, left : left + w] = image.pixels
    return Image(out)


def _source_positions(n_dst: int, n_src: int) -> np.ndarray:
    # Half-pixel-center mapping: dst center k+0.5 lands at src coordinate
    # (k+0.5)*scale - 0.5.
    scale = n_src / n_dst
    return (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5


def _resize_nearest(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    xs = _source_positions(width, w)
    ys = _source_positions(height, h)
    # Round half down, then clamp to the valid index range.
    ix = np.clip(np.ceil(xs - 0.5).astype(np.int64), 0, w - 1)
    iy = np.clip(np.ceil(ys - 0.5).astype(np.int64), 0, h - 1)
    return pixels[iy[:, None], ix[None, :]]


def _resize_bilinear(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    xs = np.clip(_source_positions(width, w), 0.0, w - 1.0)
    ys = np.clip(_source_positions(height, h), 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    p = pixels.astype(np.float64)
    top = p[y0[:, None], x0[None, :]] * (1.0 - fx) + p[y0[:, None], x1[None, :]] * fx
    bot = p[y1[:, None], x0[None, :]] * (1.0 - fx) + p[y1[:, None], x1[None, :]] * fx
    value = top * (1.0 - fy) + bot * fy
    # Round half up; values are already within [0, 255].
    return np.floor(value + 0.5).astype(np.uint8)


def resize(image: Image, policy: ResizePolicy) -> Image:
    """Resample to the policy's target size.

    Bilinear uses half-pixel-center sampling with edge clamping and
    rounds half up; nearest uses round-half-down source mapping. Both
    are deterministic and bit-exact.
    """
    if policy.filter is ResizeFilter.NEAREST:
        out = _resize_nearest(image.pixels, policy.width, policy.height)
    else:
        out = _resize_bilinear(image.pixels, policy.width, policy.height)
    return Image(out)


def to_model_input(
    image: Image, policy: ResizePolicy, norm: NormalizationSpec
) -> np.ndarray:
    """Resize, scale to [0, 1], normalize per channel; returns (3, H, W) float32."""
    resized = resize(image, policy)
    scaled = resized.pixels.astype(np.float32) / np.float32(255.0)
    mean = np.asarray(norm.mean, dtype=np.float32)
    std = np.asarray(norm.std, dtype=np.float32)
    normalized = (scaled - mean) / std
    return np.ascontiguousarray(normalized.transpose(2, 0, 1))
