"""Per-superpixel restoration and the sliding-window video loop.

Three back-ends share the alignment front-end:

* ``avg``  - mean of the sorted spatial-temporal matches,
* ``f1``   - the target patch with only the detected rain pixels replaced by that mean,
* ``rpca`` - first column of the low-rank part of [target | matches].

Only the luma plane is restored; chroma is passed through untouched.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from skimage.filters import window
from skimage.registration import phase_cross_correlation

from .alignment import (
    MatchTensorT0,
    MatchTensorT1,
    RainMask,
    build_buffer,
    detect_rain,
    spatiotemporal_match,
    temporal_match,
)
from .core import Frame, InvalidInputError, SpacConfig
from .rpca import RpcaResult, rpca_alm
from .superpixel import SpRegion, extract_regions, slic_segment


@dataclass(frozen=True)
class SpFeatures:
    x_avg: np.ndarray
    f1: np.ndarray
    f2: np.ndarray  # (n_t - 1, h, w)
    f3: np.ndarray  # (n_st, h, w)
    f1_hat: np.ndarray
    f2_hat: np.ndarray
    f3_hat: np.ndarray


# A detail compensator maps the features of one superpixel to a patch that is
# added to x_avg.  It must be finite and zero outside the superpixel.
DetailCompensator = Callable[[SpFeatures, SpRegion], np.ndarray]


def zero_compensator(features: SpFeatures, region: SpRegion) -> np.ndarray:
    return np.zeros_like(features.x_avg)


def mask_blend_compensator(features: SpFeatures, region: SpRegion) -> np.ndarray:
    return features.f1_hat


def sp_average(t1: MatchTensorT1) -> np.ndarray:
    """Elementwise mean of the match slices.

    Accumulated relative to the first slice so identical slices average to
    exactly that slice.
    """
    if t1.n_st < 1:
        raise InvalidInputError("cannot average an empty match tensor")
    base = t1.slices[0]
    return base + (t1.slices - base).mean(axis=0)


def sp_f1(target: np.ndarray, x_avg: np.ndarray, mask: RainMask) -> np.ndarray:
    if target.shape != x_avg.shape or target.shape != mask.m_rain.shape:
        raise InvalidInputError("patch shapes disagree")
    return np.where(mask.m_rain, x_avg, target)


def build_features(region: SpRegion, t0: MatchTensorT0, t1: MatchTensorT1, mask: RainMask) -> SpFeatures:
    x_avg = sp_average(t1)
    f1 = sp_f1(t0.target, x_avg, mask)
    f2 = np.delete(t0.slices, t0.centre, axis=0)
    f3 = t1.slices
    m = region.mask
    return SpFeatures(
        x_avg=x_avg,
        f1=f1,
        f2=f2,
        f3=f3,
        f1_hat=np.where(m, f1 - x_avg, 0.0),
        f2_hat=np.where(m[None], f2 - x_avg[None], 0.0),
        f3_hat=np.where(m[None], f3 - x_avg[None], 0.0),
    )


def vectorize(region: SpRegion, patch: np.ndarray) -> np.ndarray:
    """Superpixel pixels of a box-sized patch, row-major over the mask."""
    return patch[region.mask]


def unvectorize(region: SpRegion, column: np.ndarray, fill: np.ndarray) -> np.ndarray:
    out = np.array(fill, dtype=np.float64, copy=True)
    out[region.mask] = column
    return out


def build_psi(region: SpRegion, target: np.ndarray, t1: MatchTensorT1, n_st: int | None = None) -> np.ndarray:
    """[V(target) | V(T1[0]) | ... | V(T1[n_st-2])], an n_p x n_st matrix."""
    n_st = t1.n_st if n_st is None else n_st
    cols = [vectorize(region, target)]
    cols += [vectorize(region, s) for s in t1.slices[: max(0, n_st - 1)]]
    return np.stack(cols, axis=1)


def sp_rpca(
    region: SpRegion,
    target: np.ndarray,
    t1: MatchTensorT1,
    lam: float | None = None,
    tol: float = 1e-7,
    max_iter: int = 500,
    n_st: int | None = None,
) -> tuple[np.ndarray, RpcaResult]:
    psi = build_psi(region, target, t1, n_st)
    if lam is None:
        lam = 1.0 / max(np.sqrt(psi.shape[0]), np.sqrt(psi.shape[1]))
    result = rpca_alm(psi, lam, tol=tol, max_iter=max_iter)
    return unvectorize(region, result.low_rank[:, 0], target), result


def phase_correlation_shift(reference: np.ndarray, moving: np.ndarray) -> tuple[int, int]:
    """Integer (u, v) such that ``moving[y + v, x + u]`` best matches ``reference[y, x]``.

    Both planes are median filtered (removing thin rain streaks, which would
    otherwise correlate with each other) and Hann-windowed (otherwise the frame
    borders dominate the whitened spectrum and smooth content locks onto zero
    shift).
    """
    win = window("hann", reference.shape)
    ref = ndimage.median_filter(reference, size=5) * win
    mov = ndimage.median_filter(moving, size=5) * win
    shift, _, _ = phase_cross_correlation(ref, mov, normalization="phase")
    dy, dx = (int(round(float(c))) for c in shift)
    return -dx, -dy


def translate(plane: np.ndarray, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
    """Resample so that out[y, x] = plane[y + v, x + u]; returns (plane, valid map)."""
    h, w = plane.shape
    yy = np.arange(h) + v
    xx = np.arange(w) + u
    valid = ((yy >= 0) & (yy < h))[:, None] & ((xx >= 0) & (xx < w))[None, :]
    return plane[np.ix_(np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1))], valid


@dataclass
class FrameDiagnostics:
    regions: int = 0
    fallback_regions: int = 0
    rpca_iterations: int = 0
    rpca_nonconverged: int = 0
    rain_pixels: int = 0
    timings: dict = field(default_factory=dict)
    prealign_shifts: list = field(default_factory=list)
    matches: list = field(default_factory=list, repr=False)  # (label, t, u, v, cost)
    rain_map: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "regions": self.regions,
            "fallback_regions": self.fallback_regions,
            "rpca_iterations": self.rpca_iterations,
            "rpca_nonconverged": self.rpca_nonconverged,
            "rain_pixels": self.rain_pixels,
            "prealign_shifts": self.prealign_shifts,
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }


def _window_planes(window, cfg: SpacConfig):
    c = len(window) // 2
    planes = [f.y for f in window]
    valid = [None] * len(window)
    shifts = []
    if cfg.prealign:
        for i, f in enumerate(window):
            if i == c:
                continue
            u, v = phase_correlation_shift(window[c].y, f.y)
            if u or v:
                planes[i], valid[i] = translate(f.y, u, v)
            shifts.append((i - c, u, v))
    return planes, valid, shifts


def _process_region(region, planes, valid, target: Frame, cfg: SpacConfig, compensator, detect_only=False):
    buf = build_buffer(planes, region, cfg.r_s, cfg.n_t, valid)
    t0 = temporal_match(region, buf)
    cb, cr = region.crop(target.cb), region.crop(target.cr)
    mask = detect_rain(region, t0, cb, cr, cfg)
    if detect_only:
        return None, mask, None, None, t0
    t1 = spatiotemporal_match(region, buf, mask, cfg)
    rpca_res = None
    if cfg.method == "rpca" and compensator is None:
        restored, rpca_res = sp_rpca(
            region, t0.target, t1, cfg.rpca_lambda(region.n_p), cfg.rpca_tol, cfg.rpca_max_iter, cfg.n_st
        )
    else:
        x_avg = sp_average(t1)
        if compensator is not None:
            feats = build_features(region, t0, t1, mask)
            detail = np.asarray(compensator(feats, region), dtype=np.float64)
            if detail.shape != x_avg.shape or not np.all(np.isfinite(detail)):
                raise InvalidInputError("compensator returned a bad detail patch")
            restored = x_avg + np.where(region.mask, detail, 0.0)
        elif cfg.method == "f1":
            restored = sp_f1(t0.target, x_avg, mask)
        else:
            restored = x_avg
    return restored, mask, t1, rpca_res, t0


def _map_regions(fn, regions, threads: int):
    if threads <= 1:
        return [fn(r) for r in regions]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, regions))


def derain_frame(
    window: list[Frame],
    cfg: SpacConfig,
    compensator: DetailCompensator | None = None,
    threads: int = 1,
    record_matches: bool = False,
) -> tuple[Frame, FrameDiagnostics]:
    """Restore the luma of the centre frame of ``window``."""
    if len(window) != cfg.n_t:
        raise InvalidInputError(f"window has {len(window)} frames, expected n_t={cfg.n_t}")
    diag = FrameDiagnostics()
    target = window[len(window) // 2]

    t = time.perf_counter()
    seg = slic_segment(target, cfg.sp_count, cfg.compactness)
    regions = extract_regions(seg)
    diag.timings["segment"] = time.perf_counter() - t

    t = time.perf_counter()
    planes, valid, diag.prealign_shifts = _window_planes(window, cfg)
    results = _map_regions(lambda r: _process_region(r, planes, valid, target, cfg, compensator), regions, threads)
    diag.timings["align_restore"] = time.perf_counter() - t

    t = time.perf_counter()
    out = np.array(target.y, copy=True)
    rain_map = np.zeros(target.shape, dtype=bool)
    for region, (restored, mask, t1, rpca_res, t0) in zip(regions, results):
        box = region.box
        out[box][region.mask] = restored[region.mask]
        rain_map[box] |= mask.m_rain & region.mask
        diag.fallback_regions += int(t1.fallback)
        if rpca_res is not None:
            diag.rpca_iterations += rpca_res.iterations
            diag.rpca_nonconverged += int(not rpca_res.converged)
        if record_matches:
            for i, (u, v, tt) in enumerate(t1.sources):
                diag.matches.append((region.label, int(tt), int(u), int(v), float(t1.costs[i])))
    np.clip(out, 0.0, 1.0, out=out)
    diag.regions = len(regions)
    diag.rain_map = rain_map
    diag.rain_pixels = int(rain_map.sum())
    diag.timings["reassemble"] = time.perf_counter() - t
    return target.with_luma(out), diag


def detect_frame_rain(window: list[Frame], cfg: SpacConfig, threads: int = 1) -> np.ndarray:
    """Frame-sized rain mask for the centre frame (segmentation, temporal matching, detection)."""
    if len(window) != cfg.n_t:
        raise InvalidInputError(f"window has {len(window)} frames, expected n_t={cfg.n_t}")
    target = window[len(window) // 2]
    regions = extract_regions(slic_segment(target, cfg.sp_count, cfg.compactness))
    planes, valid, _ = _window_planes(window, cfg)
    results = _map_regions(
        lambda r: _process_region(r, planes, valid, target, cfg, None, detect_only=True), regions, threads
    )
    rain = np.zeros(target.shape, dtype=bool)
    for region, (_, mask, _, _, _) in zip(regions, results):
        rain[region.box] |= mask.m_rain & region.mask
    return rain


def window_indices(i: int, n_frames: int, n_t: int) -> list[int]:
    half = n_t // 2
    return [min(max(i + o, 0), n_frames - 1) for o in range(-half, half + 1)]


def derain_video(
    frames: list[Frame],
    cfg: SpacConfig,
    compensator: DetailCompensator | None = None,
    threads: int = 1,
    record_matches: bool = False,
    on_frame: Callable[[int, Frame, FrameDiagnostics], None] | None = None,
) -> tuple[list[Frame], list[FrameDiagnostics]]:
    """Derain every frame with a sliding window.

    Window slots before the target hold frames that were already derained;
    slots beyond the sequence ends repeat the nearest frame.
    """
    if not frames:
        raise InvalidInputError("no frames to process")
    out: list[Frame] = []
    diags = []
    n = len(frames)
    for i in range(n):
        window = [out[j] if j < i else frames[j] for j in window_indices(i, n, cfg.n_t)]
        restored, diag = derain_frame(window, cfg, compensator, threads, record_matches)
        out.append(restored)
        diags.append(diag)
        if on_frame is not None:
            on_frame(i, restored, diag)
    return out, diags
