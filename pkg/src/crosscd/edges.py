"""Canny edge clues for the decoder's full-resolution input."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# magnitudes are rounded to this many decimals so float noise (e.g. x vs 1 - x)
# cannot flip suppression ties or threshold comparisons
_MAG_DECIMALS = 10

# (drow, dcol) step along the quantized gradient direction
_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))


@dataclass
class CannyConfig:
    sigma: float = 1.0
    mode: str = "percentile"  # or "fixed"
    low: float = 70.0  # percentile, or fraction of max gradient in fixed mode
    high: float = 90.0

    @classmethod
    def fixed(cls, low: float = 0.1, high: float = 0.2, sigma: float = 1.0) -> "CannyConfig":
        return cls(sigma=sigma, mode="fixed", low=low, high=high)


def _gradients(channel: np.ndarray, sigma: float):
    x = channel.astype(np.float64)
    if sigma > 0:
        x = ndimage.gaussian_filter(x, sigma, mode="nearest")
    gy = ndimage.sobel(x, axis=0, mode="nearest")
    gx = ndimage.sobel(x, axis=1, mode="nearest")
    mag = np.round(np.hypot(gx, gy), _MAG_DECIMALS)
    return gx, gy, mag


def _direction_bins(gx, gy):
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    return (np.floor(ang / (np.pi / 4) + 0.5).astype(np.int64)) % 4


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are local maxima across the edge.

    A pixel survives if it is ``>=`` its neighbor behind and ``>`` its neighbor
    ahead along the quantized gradient axis; the asymmetry turns a plateau of
    two equal maxima into a single-pixel line.
    """
    bins = _direction_bins(gx, gy)
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dr, dc) in enumerate(_DIRECTIONS):
        ahead = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        behind = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (bins == b) & (mag >= behind) & (mag > ahead)
    return keep & (mag > 0)


def _thresholds(mag: np.ndarray, cfg: CannyConfig):
    if cfg.mode == "fixed":
        peak = mag.max()
        return cfg.low * peak, cfg.high * peak
    if cfg.mode != "percentile":
        raise ValueError(f"unknown threshold mode {cfg.mode!r}")
    nz = mag[mag > 0]
    if nz.size == 0:
        return np.inf, np.inf
    return np.percentile(nz, cfg.low), np.percentile(nz, cfg.high)


def hysteresis(strength: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = strength >= low
    if not weak.any():
        return weak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    strong_ids = np.unique(labels[(strength >= high) & weak])
    return np.isin(labels, strong_ids[strong_ids > 0])


def canny(channel: np.ndarray, cfg: CannyConfig | None = None) -> np.ndarray:
    """Binary edge map (uint8 in {0, 1}) of one 2D channel."""
    cfg = cfg or CannyConfig()
    gx, gy, mag = _gradients(channel, cfg.sigma)
    low, high = _thresholds(mag, cfg)
    if not np.isfinite(high) or high <= 0:
        return np.zeros(channel.shape, dtype=np.uint8)
    thin = non_max_suppression(mag, gx, gy)
    strength = np.where(thin, mag, 0.0)
    return hysteresis(strength, max(low, np.finfo(float).tiny), high).astype(np.uint8)


def canny_image(img: np.ndarray, cfg: CannyConfig | None = None) -> np.ndarray:
    return np.stack([canny(img[..., c], cfg) for c in range(img.shape[2])], axis=-1)


def edge_clues(hr_s: np.ndarray, lr_u: np.ndarray, cfg: CannyConfig | None = None) -> np.ndarray:
    """Per-channel Canny maps of both images summed pixelwise; values in {0, 1, 2}."""
    if hr_s.shape != lr_u.shape:
        raise ValueError(f"edge clues need equal shapes, got {hr_s.shape} and {lr_u.shape}")
    return (canny_image(hr_s, cfg) + canny_image(lr_u, cfg)).astype(np.float32)
