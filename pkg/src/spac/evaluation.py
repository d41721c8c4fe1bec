"""PSNR / SSIM, rain-edge precision-recall and the superpixel-vs-block alignment benchmark."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .alignment import RainMask, build_buffer, spatiotemporal_match
from .core import DimensionMismatchError, Frame, InvalidInputError
from .superpixel import SpRegion, extract_regions, slic_segment

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _plane(x) -> np.ndarray:
    return x.y if isinstance(x, Frame) else np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB on luma; ``inf`` for identical inputs."""
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5)."""
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WIN:
        raise InvalidInputError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    win = gaussian_window()
    r = SSIM_WIN // 2

    def filt(x):
        return ndimage.correlate(x, win, mode="constant")[r:-r, r:-r]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.precision.tolist(), self.recall.tolist()))

    def rows(self):
        for t, p, r in zip(self.thresholds, self.precision, self.recall):
            yield float(t), float(p), float(r)


def pr_curve(rainy, derained, gt_mask: np.ndarray, thresholds) -> PrCurve:
    """Precision/recall of the modification map |rainy - derained| against the true rain mask.

    A pixel counts as modified when its absolute change exceeds the threshold.
    """
    a, b = _plane(rainy), _plane(derained)
    gt = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape or a.shape != gt.shape:
        raise DimensionMismatchError("rainy, derained and mask shapes differ")
    th = np.asarray(sorted(thresholds), dtype=np.float64)
    diff = np.abs(a - b)
    n_gt = int(gt.sum())
    if n_gt == 0:
        warnings.warn("empty ground-truth rain mask: recall is undefined", RuntimeWarning, stacklevel=2)
    # Counting through sorted differences keeps this O(N log N) for long threshold lists.
    d_rain = np.sort(diff[gt])
    d_clean = np.sort(diff[~gt])
    tp = d_rain.size - np.searchsorted(d_rain, th, side="right")
    fp = d_clean.size - np.searchsorted(d_clean, th, side="right")
    fn = n_gt - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp == 0, 1.0, tp / np.maximum(tp + fp, 1))
        recall = tp / n_gt if n_gt else np.full(th.shape, np.nan)
    return PrCurve(th, precision.astype(float), np.asarray(recall, dtype=float), tp, fp, fn)


def block_regions(height: int, width: int, block_size: int) -> list[SpRegion]:
    """Tile the frame with square blocks (clipped at the right/bottom border)."""
    if block_size < 1:
        raise InvalidInputError("block_size must be >= 1")
    regions = []
    for y0 in range(0, height, block_size):
        for x0 in range(0, width, block_size):
            bh, bw = min(block_size, height - y0), min(block_size, width - x0)
            regions.append(SpRegion(len(regions), y0, x0, np.ones((bh, bw), dtype=bool), block_size))
    return regions


def align_bench(
    views,
    unit: str = "sp",
    block_size: int = 16,
    r_s: int = 15,
    sp_count: int | None = None,
    compactness: float = 10.0,
) -> float:
    """Reconstruct the central view from each unit's single best match in the side views.

    Units are SLIC superpixels (``sp``, template = superpixel mask) or square
    blocks (``block``, all-ones template).  Returns the reconstruction PSNR.
    ``sp_count`` defaults to the number of blocks, so both units have the
    same mean area.
    """
    views = list(views)
    if len(views) < 3 or len(views) % 2 == 0:
        raise InvalidInputError("align_bench needs an odd number (>= 3) of views")
    c = len(views) // 2
    target = views[c]
    h, w = target.shape
    if unit == "sp":
        if sp_count is None:
            sp_count = max(1, round(h * w / block_size**2))
        regions = extract_regions(slic_segment(target, sp_count, compactness))
    elif unit == "block":
        regions = block_regions(h, w, block_size)
    else:
        raise InvalidInputError(f"unit must be 'sp' or 'block', got {unit!r}")

    recon = np.array(target.y, copy=True)
    for region in regions:
        buf = build_buffer(views, region, r_s)
        no_rain = np.zeros(region.mask.shape, dtype=bool)
        t1 = spatiotemporal_match(region, buf, RainMask(no_rain, no_rain, no_rain, no_rain), 1)
        recon[region.box][region.mask] = t1.slices[0][region.mask]
    return psnr(recon, target.y)
