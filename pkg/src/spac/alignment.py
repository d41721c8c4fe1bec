"""Superpixel template matching across the sliding window and rain-mask estimation.

Offsets are ``(u, v)`` = (horizontal, vertical) displacements in pixels; a
candidate at offset (u, v) in frame t is the box-sized crop whose top-left
corner sits at ``(x0 + u, y0 + v)`` in that frame.  Tensors keep time on the
first axis: ``slices[i]`` is an ``(h, w)`` patch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import functools

import numba
import numpy as np

from .core import Frame, InvalidInputError, SpacConfig
from .superpixel import SpRegion

MIN_VALID_FRACTION = 0.5


@dataclass(frozen=True)
class SpBuffer:
    data: np.ndarray  # (n_t, h + 2 r_s, w + 2 r_s) luma
    valid: np.ndarray  # same shape, False on edge-replicated samples
    frame_offsets: tuple[int, ...]
    r_s: int

    @property
    def n_t(self) -> int:
        return self.data.shape[0]

    @property
    def centre(self) -> int:
        return self.n_t // 2

    @functools.cached_property
    def _flat(self):
        return self.data.reshape(-1), self.valid.reshape(-1).astype(np.float64)

    def crop(self, t_index: int, u: int, v: int, h: int, w: int) -> np.ndarray:
        r = self.r_s
        return self.data[t_index, r + v : r + v + h, r + u : r + u + w]


@dataclass(frozen=True)
class MatchTensorT0:
    slices: np.ndarray  # (n_t, h, w); slices[centre] is the target patch
    offsets: np.ndarray  # (n_t, 2) int (u, v)
    costs: np.ndarray  # (n_t,)

    @property
    def centre(self) -> int:
        return self.slices.shape[0] // 2

    @property
    def target(self) -> np.ndarray:
        return self.slices[self.centre]


@dataclass(frozen=True)
class RainMask:
    m_rain: np.ndarray
    m_hat: np.ndarray
    m_edge: np.ndarray
    votes: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class MatchTensorT1:
    slices: np.ndarray  # (k, h, w), k <= n_st
    sources: np.ndarray  # (k, 3) int (u, v, t) with t the relative frame index
    costs: np.ndarray  # (k,) ascending
    fallback: bool = False  # True when the whole superpixel was flagged as rain

    @property
    def n_st(self) -> int:
        return self.slices.shape[0]


def _luma(f) -> np.ndarray:
    return f.y if isinstance(f, Frame) else np.asarray(f, dtype=np.float64)


def build_buffer(frames, region: SpRegion, r_s: int, n_t: int | None = None, frame_valid=None) -> SpBuffer:
    """Cut the region's box, padded by ``r_s`` on every side, out of each window frame.

    ``frames`` holds Frames or luma planes with the target in the middle.
    Samples outside a frame are edge-replicated and marked invalid; the optional
    ``frame_valid`` maps (one per frame) mark further invalid pixels.
    """
    n = len(frames)
    if n_t is not None and n != n_t:
        raise InvalidInputError(f"window has {n} frames, expected n_t={n_t}")
    if n % 2 == 0 or n < 1:
        raise InvalidInputError("window length must be odd")
    planes = [_luma(f) for f in frames]
    H, W = planes[0].shape
    yy = np.arange(region.y0 - r_s, region.y0 + region.height + r_s)
    xx = np.arange(region.x0 - r_s, region.x0 + region.width + r_s)
    inside = ((yy >= 0) & (yy < H))[:, None] & ((xx >= 0) & (xx < W))[None, :]
    yc, xc = np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)
    ix = np.ix_(yc, xc)
    data = np.stack([p[ix] for p in planes])
    valid = np.repeat(inside[None], n, axis=0)
    if frame_valid is not None:
        for i, fv in enumerate(frame_valid):
            if fv is not None:
                valid[i] &= np.asarray(fv, dtype=bool)[ix]
    half = n // 2
    return SpBuffer(data, valid, tuple(range(-half, half + 1)), r_s)


@numba.njit(cache=True, nogil=True)
def _key_less(c1, u1, v1, t1, c2, u2, v2, t2):
    if c1 != c2:
        return c1 < c2
    a1 = abs(u1) + abs(v1)
    a2 = abs(u2) + abs(v2)
    if a1 != a2:
        return a1 < a2
    if u1 != u2:
        return u1 < u2
    if v1 != v2:
        return v1 < v2
    return t1 < t2


@functools.lru_cache(maxsize=8)
def _spiral(r_s: int) -> np.ndarray:
    """The (2 r_s + 1)^2 offset grid ordered by |u| + |v|."""
    v, u = np.mgrid[-r_s : r_s + 1, -r_s : r_s + 1]
    grid = np.stack([u.ravel(), v.ravel()], axis=1).astype(np.int64)
    grid = grid[np.argsort(np.abs(grid).sum(axis=1), kind="stable")]
    grid.flags.writeable = False
    return grid


@numba.njit(cache=True, nogil=True)
def _top_matches(flat, validf, slab, row_stride, t_list, t_rel, base, vals, grid, k):
    """k lowest masked mean-squared-difference candidates over offsets and frames.

    ``flat``/``validf`` are the buffer and its 0/1 validity flattened; ``base``
    holds the template pixels' flat indices at offset (0, 0) of slice 0.
    Ordered by (cost, |u|+|v|, u, v, t).  Candidates with fewer than half of the
    template pixels valid are skipped.  Offsets are visited centre-out so the
    early-termination bound tightens quickly; the visiting order does not
    affect the result.
    """
    n = base.size
    n4 = n - n % 4
    out_c = np.full(k, np.inf)
    out_u = np.zeros(k, dtype=np.int64)
    out_v = np.zeros(k, dtype=np.int64)
    out_t = np.zeros(k, dtype=np.int64)
    filled = 0
    for ti in range(t_list.size):
        tr = t_rel[ti]
        for g in range(grid.shape[0]):
            u = grid[g, 0]
            v = grid[g, 1]
            off = t_list[ti] * slab + v * row_stride + u
            # Final cost >= s / n; the small margin keeps float rounding from
            # discarding a candidate that would tie with the current worst.
            bound = out_c[k - 1] * n * (1.0 + 1e-9) if filled == k else np.inf
            s0 = s1 = s2 = s3 = 0.0
            c0 = c1 = c2 = c3 = 0.0
            pruned = False
            i = 0
            while i < n4:
                j = base[i] + off
                d = flat[j] - vals[i]
                s0 += validf[j] * d * d
                c0 += validf[j]
                j = base[i + 1] + off
                d = flat[j] - vals[i + 1]
                s1 += validf[j] * d * d
                c1 += validf[j]
                j = base[i + 2] + off
                d = flat[j] - vals[i + 2]
                s2 += validf[j] * d * d
                c2 += validf[j]
                j = base[i + 3] + off
                d = flat[j] - vals[i + 3]
                s3 += validf[j] * d * d
                c3 += validf[j]
                i += 4
                if (s0 + s1) + (s2 + s3) > bound:
                    pruned = True
                    break
            if pruned:
                continue
            while i < n:
                j = base[i] + off
                d = flat[j] - vals[i]
                s0 += validf[j] * d * d
                c0 += validf[j]
                i += 1
            s = (s0 + s1) + (s2 + s3)
            cnt = (c0 + c1) + (c2 + c3)
            if 2.0 * cnt < n:
                continue
            cost = s / cnt
            if filled == k and not _key_less(cost, u, v, tr, out_c[k - 1], out_u[k - 1], out_v[k - 1], out_t[k - 1]):
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and _key_less(cost, u, v, tr, out_c[pos - 1], out_u[pos - 1], out_v[pos - 1], out_t[pos - 1]):
                out_c[pos] = out_c[pos - 1]
                out_u[pos] = out_u[pos - 1]
                out_v[pos] = out_v[pos - 1]
                out_t[pos] = out_t[pos - 1]
                pos -= 1
            out_c[pos] = cost
            out_u[pos] = u
            out_v[pos] = v
            out_t[pos] = tr
            if filled < k:
                filled += 1
    return out_c[:filled], out_u[:filled], out_v[:filled], out_t[:filled]


def _search(buffer: SpBuffer, template, t_list, k: int):
    rows, cols, vals = template
    _, hb, wb = buffer.data.shape
    r = buffer.r_s
    base = (rows + r) * wb + (cols + r)
    t_list = np.asarray(t_list, dtype=np.int64)
    flat, validf = buffer._flat
    return _top_matches(
        flat,
        validf,
        hb * wb,
        wb,
        t_list,
        t_list - buffer.centre,
        base,
        vals,
        _spiral(r),
        k,
    )


def _template(region: SpRegion, buffer: SpBuffer, mask: np.ndarray):
    rows, cols = np.nonzero(mask)
    # A scattered visiting order makes partial sums representative early,
    # which lets the kernel discard poor candidates sooner.
    order = np.random.default_rng(0).permutation(rows.size)
    rows, cols = rows[order], cols[order]
    target = buffer.crop(buffer.centre, 0, 0, region.height, region.width)
    return rows.astype(np.int64), cols.astype(np.int64), np.ascontiguousarray(target[rows, cols])


def temporal_match(region: SpRegion, buffer: SpBuffer) -> MatchTensorT0:
    """Best M_SP-masked match of the target superpixel in every window frame."""
    h, w = region.height, region.width
    rows, cols, vals = _template(region, buffer, region.mask)
    n_t, c = buffer.n_t, buffer.centre
    slices = np.empty((n_t, h, w))
    offsets = np.zeros((n_t, 2), dtype=np.int64)
    costs = np.zeros(n_t)
    for t in range(n_t):
        if t != c:
            cost, u, v, _ = _search(buffer, (rows, cols, vals), [t], 1)
            if cost.size:
                offsets[t] = (u[0], v[0])
                costs[t] = cost[0]
            else:
                costs[t] = np.inf
        slices[t] = buffer.crop(t, offsets[t, 0], offsets[t, 1], h, w)
    return MatchTensorT0(slices, offsets, costs)


def chroma_gradient(cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """|d/dx| + |d/dy| of Cb plus the same for Cr, central differences, replicated borders."""
    total = np.zeros(np.shape(cb))
    for plane in (cb, cr):
        p = np.pad(np.asarray(plane, dtype=np.float64), 1, mode="edge")
        gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
        gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
        total += np.abs(gx) + np.abs(gy)
    return total


def detect_rain(region: SpRegion, t0: MatchTensorT0, cb: np.ndarray, cr: np.ndarray, cfg: SpacConfig) -> RainMask:
    """Flag pixels brighter than enough of their temporal matches, minus chroma edges.

    ``cb`` and ``cr`` are the target frame's chroma crops over the region box.
    """
    fluct = (t0.target[None] - t0.slices) >= cfg.eps_rain
    votes = fluct.sum(axis=0)
    m_hat = votes >= cfg.fluctuation_votes
    m_edge = chroma_gradient(cb, cr) >= cfg.eps_edge
    return RainMask(m_rain=m_hat & ~m_edge, m_hat=m_hat, m_edge=m_edge, votes=votes)


def spatiotemporal_match(region: SpRegion, buffer: SpBuffer, mask: RainMask, cfg: SpacConfig | int) -> MatchTensorT1:
    """The ``n_st`` best rain-free-template matches over all offsets of the non-target frames.

    ``cfg`` may be a SpacConfig or the integer ``n_st`` directly.
    """
    n_st = cfg if isinstance(cfg, (int, np.integer)) else cfg.n_st
    template = region.mask & ~mask.m_rain
    fallback = not template.any()
    if fallback:
        template = region.mask
    rows, cols, vals = _template(region, buffer, template)
    c = buffer.centre
    t_idx = np.array([t for t in range(buffer.n_t) if t != c], dtype=np.int64)
    cost, u, v, tr = _search(buffer, (rows, cols, vals), t_idx, int(n_st))
    h, w = region.height, region.width
    slices = np.empty((cost.size, h, w))
    for i in range(cost.size):
        slices[i] = buffer.crop(int(tr[i]) + c, int(u[i]), int(v[i]), h, w)
    sources = np.stack([u, v, tr], axis=1) if cost.size else np.zeros((0, 3), dtype=np.int64)
    return MatchTensorT1(slices, sources, cost, fallback)
