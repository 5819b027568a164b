"""Vectorized hue/chroma helpers used by the synthetic backends and generator."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def hsv_to_rgb_u8(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Convert HSV arrays (each in [0, 1], hue wraps) to uint8 RGB (..., 3)."""
    h = np.mod(np.asarray(h, dtype=np.float64), 1.0)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h6 = h * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    # Channel values per sector: 0:(v,t,p) 1:(q,v,p) 2:(p,v,t) 3:(p,q,v)
    # 4:(t,p,v) 5:(v,p,q)
    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    rgb = np.stack([r, g, b], axis=-1)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def hue_and_chroma(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel hue in [0, 1) and chroma (max-min channel) in [0, 1].

    Gray pixels have zero chroma and hue 0 by convention.
    """
    rgb = np.asarray(pixels, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    chroma = mx - mn
    safe = np.where(chroma == 0.0, 1.0, chroma)
    hue = np.where(
        mx == r,
        np.mod((g - b) / safe, 6.0),
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    hue = np.where(chroma == 0.0, 0.0, hue / 6.0)
    return hue, chroma


def weighted_mean_hue(pixels: np.ndarray) -> float:
    """Chroma-weighted circular mean hue of an RGB raster, in [0, 1).

    Low-chroma (grayish) pixels contribute almost nothing, so background
    noise and pad fill barely move the estimate. Returns 0.0 when the
    raster carries no chroma at all.
    """
    hue, chroma = hue_and_chroma(pixels)
    total = chroma.sum()
    if total == 0.0:
        return 0.0
    angle = hue * (2.0 * np.pi)
    x = float((chroma * np.cos(angle)).sum())
    y = float((chroma * np.sin(angle)).sum())
    if x == 0.0 and y == 0.0:
        return 0.0
    return float(np.mod(np.arctan2(y, x) / (2.0 * np.pi), 1.0))


def circular_hue_distance(a: float, b: float) -> float:
    """Shortest distance between two hues on the unit circle, in [0, 0.5]."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def default_hue_bands(n_classes: int) -> tuple[tuple[float, float], ...]:
    """Evenly partition the hue circle into n disjoint half-open bands."""
    if n_classes < 1:
        raise ConfigError("need at least one class for hue bands")
    return tuple((i / n_classes, (i + 1) / n_classes) for i in range(n_classes))


def validate_hue_bands(bands: tuple[tuple[float, float], ...]) -> None:
    """Bands must be sub-intervals of [0, 1] and pairwise disjoint."""
    if len(bands) < 1:
        raise ConfigError("need at least one hue band")
    for i, (lo_i, hi_i) in enumerate(bands):
        if not (0.0 <= lo_i < hi_i <= 1.0):
            raise ConfigError(f"hue band {i} is not a valid sub-interval of [0, 1]")
        for j in range(i + 1, len(bands)):
            lo_j, hi_j = bands[j]
            if lo_i < hi_j and lo_j < hi_i:
                raise ConfigError(f"hue bands {i} and {j} overlap")


def band_center(band: tuple[float, float]) -> float:
    return (band[0] + band[1]) / 2.0
