"""Procedural test data: rain streaks with ground-truth masks and camera-motion sequences."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .core import Frame, InvalidInputError, rgb_to_ycbcr


@dataclass(frozen=True)
class RainParams:
    density: float = 150.0  # expected streaks per megapixel
    length_px: tuple[float, float] = (10.0, 30.0)
    width_px: tuple[float, float] = (1.0, 2.0)
    angle_deg: float = 10.0  # from vertical
    angle_jitter_deg: float = 5.0
    amplitude: float = 0.1
    opacity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.density < 0:
            raise InvalidInputError("density must be >= 0")
        for name in ("length_px", "width_px"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InvalidInputError(f"{name} must be a positive (lo, hi) range")
        if self.angle_jitter_deg < 0:
            raise InvalidInputError("angle jitter must be >= 0")
        if not (0 < self.amplitude <= 1 and 0 < self.opacity <= 1):
            raise InvalidInputError("amplitude and opacity must lie in (0, 1]")

    def expected_streak_area(self) -> float:
        """Mean number of pixels inside one streak (length x width plus round caps)."""
        l_lo, l_hi = self.length_px
        w_lo, w_hi = self.width_px
        mean_w2 = (w_lo * w_lo + w_lo * w_hi + w_hi * w_hi) / 3.0
        return (l_lo + l_hi) / 2.0 * (w_lo + w_hi) / 2.0 + math.pi * mean_w2 / 4.0

    @classmethod
    def for_coverage(cls, coverage: float, **kw) -> "RainParams":
        """Parameters whose density gives ``coverage`` expected mask fraction (overlaps included)."""
        if not 0 <= coverage < 1:
            raise InvalidInputError("coverage must lie in [0, 1)")
        probe = cls(**{k: v for k, v in kw.items() if k != "density"})
        density = -math.log1p(-coverage) * 1e6 / probe.expected_streak_area()
        return cls(**{**kw, "density": density})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Streak:
    cx: float
    cy: float
    length: float
    width: float
    angle_deg: float  # from vertical, positive leans right at the bottom


def sample_streaks(height: int, width: int, params: RainParams, rng: np.random.Generator) -> list[Streak]:
    n = rng.poisson(params.density * height * width / 1e6) if params.density > 0 else 0
    cx = rng.uniform(0, width, n)
    cy = rng.uniform(0, height, n)
    length = rng.uniform(*params.length_px, n)
    wid = rng.uniform(*params.width_px, n)
    ang = params.angle_deg + rng.uniform(-params.angle_jitter_deg, params.angle_jitter_deg, n)
    return [Streak(*vals) for vals in zip(cx, cy, length, wid, ang)]


def streak_coverage(shape: tuple[int, int], streaks: list[Streak]) -> np.ndarray:
    """Per-pixel coverage of the union of streaks.

    A pixel centre at distance d from the streak axis segment gets
    clip(w/2 + 0.5 - d, 0, 1); values of 0.5 or less are dropped, so every
    touched pixel lies inside the streak and edge pixels are partially blended.
    """
    h, w = shape
    cov = np.zeros(shape)
    for s in streaks:
        th = math.radians(s.angle_deg)
        dx, dy = math.sin(th) * s.length / 2.0, math.cos(th) * s.length / 2.0
        pad = s.width / 2.0 + 1.0
        x_lo = max(0, int(math.floor(s.cx - abs(dx) - pad)))
        x_hi = min(w, int(math.ceil(s.cx + abs(dx) + pad)) + 1)
        y_lo = max(0, int(math.floor(s.cy - abs(dy) - pad)))
        y_hi = min(h, int(math.ceil(s.cy + abs(dy) + pad)) + 1)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi].astype(np.float64)
        ax, ay = s.cx - dx, s.cy - dy
        bx, by = 2 * dx, 2 * dy
        seg2 = bx * bx + by * by
        t = np.clip(((xx - ax) * bx + (yy - ay) * by) / seg2, 0.0, 1.0) if seg2 > 0 else 0.0
        dist = np.hypot(xx - (ax + t * bx), yy - (ay + t * by))
        c = np.clip(s.width / 2.0 + 0.5 - dist, 0.0, 1.0)
        c[c <= 0.5] = 0.0
        np.maximum(cov[y_lo:y_hi, x_lo:x_hi], c, out=cov[y_lo:y_hi, x_lo:x_hi])
    return cov


def apply_rain(frame: Frame, cov: np.ndarray, amplitude: float, opacity: float) -> Frame:
    y = frame.y
    a = opacity * cov
    out = (1.0 - a) * y + a * np.minimum(1.0, y + amplitude)
    out = np.where(cov > 0, out, y)
    return frame.with_luma(np.clip(out, 0.0, 1.0))


def render_rain(frame: Frame, params: RainParams, rng: np.random.Generator | None = None) -> tuple[Frame, np.ndarray]:
    """Draw additive-brightening streaks on the luma plane; returns (rainy frame, mask)."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    streaks = sample_streaks(frame.height, frame.width, params, rng)
    cov = streak_coverage(frame.shape, streaks)
    return apply_rain(frame, cov, params.amplitude, params.opacity), cov > 0.5


@dataclass(frozen=True)
class Layer:
    """A foreground layer with per-pixel alpha that moves ``parallax`` times faster than the base."""

    frame: Frame
    alpha: np.ndarray
    parallax: float
    origin: tuple[int, int] | None = None  # (x, y) of the frame-0 crop; centred if None


@dataclass
class SynthScene:
    clean: list[Frame]
    rainy: list[Frame]
    masks: list[np.ndarray]
    shifts: list[tuple[int, int]]  # per-frame camera translation (dx, dy) relative to frame 0
    origin: tuple[int, int]
    layer_shifts: list[list[tuple[int, int]]] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)


def _start(extent: int, out: int, step: int, n: int, what: str) -> int:
    travel = abs(step) * (n - 1)
    slack = extent - out - travel
    if slack < 0:
        raise InvalidInputError(f"{what}: {n} frames x shift {step} exceeds the available margin")
    return slack // 2 + (travel if step < 0 else 0)


def _crop(frame: Frame, x: int, y: int, w: int, h: int) -> Frame:
    return Frame(frame.y[y : y + h, x : x + w], frame.cb[y : y + h, x : x + w], frame.cr[y : y + h, x : x + w])


def frame_seeds(seed: int, n: int) -> list[int]:
    """Independent per-frame seeds split from one run seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def synth_translating_sequence(
    base: Frame,
    n_frames: int,
    shift: tuple[int, int] = (0, 0),
    size: tuple[int, int] | None = None,
    layers: tuple[Layer, ...] = (),
    rain: RainParams | None = None,
) -> SynthScene:
    """Crop a moving window out of ``base`` (optionally compositing parallax layers) and add rain.

    Frame i is the ``size`` = (w, h) crop whose origin is displaced by
    i * shift from frame 0's.  Layer j is cropped at i * shift * parallax_j.
    """
    dx, dy = shift
    if int(dx) != dx or int(dy) != dy:
        raise InvalidInputError("shifts must be integers")
    if n_frames < 1:
        raise InvalidInputError("n_frames must be >= 1")
    dx, dy = int(dx), int(dy)
    w, h = size if size is not None else (base.width - abs(dx) * (n_frames - 1), base.height - abs(dy) * (n_frames - 1))
    ox = _start(base.width, w, dx, n_frames, "base width")
    oy = _start(base.height, h, dy, n_frames, "base height")

    layer_shifts = []
    layer_origins = []
    for layer in layers:
        ldx, ldy = dx * layer.parallax, dy * layer.parallax
        if int(ldx) != ldx or int(ldy) != ldy:
            raise InvalidInputError("layer parallax must give integer shifts")
        ldx, ldy = int(ldx), int(ldy)
        if layer.origin is None:
            lx = _start(layer.frame.width, w, ldx, n_frames, "layer width")
            ly = _start(layer.frame.height, h, ldy, n_frames, "layer height")
        else:
            lx, ly = layer.origin
        if min(lx + ldx * (n_frames - 1), lx) < 0 or max(lx, lx + ldx * (n_frames - 1)) + w > layer.frame.width \
                or min(ly, ly + ldy * (n_frames - 1)) < 0 or max(ly, ly + ldy * (n_frames - 1)) + h > layer.frame.height:
            raise InvalidInputError("layer too small for the requested motion")
        layer_origins.append((lx, ly, ldx, ldy))
        layer_shifts.append([(i * ldx, i * ldy) for i in range(n_frames)])

    clean = []
    for i in range(n_frames):
        f = _crop(base, ox + i * dx, oy + i * dy, w, h)
        planes = [f.y.copy(), f.cb.copy(), f.cr.copy()]
        for layer, (lx, ly, ldx, ldy) in zip(layers, layer_origins):
            x, y = lx + i * ldx, ly + i * ldy
            a = layer.alpha[y : y + h, x : x + w]
            lf = _crop(layer.frame, x, y, w, h)
            for p, lp in zip(planes, (lf.y, lf.cb, lf.cr)):
                p *= 1.0 - a
                p += a * lp
        clean.append(Frame(*(np.clip(p, 0.0, 1.0) for p in planes)))

    seeds = frame_seeds(rain.seed, n_frames) if rain is not None else []
    rainy, masks = [], []
    for i, f in enumerate(clean):
        if rain is None or rain.density == 0:
            rainy.append(f)
            masks.append(np.zeros(f.shape, dtype=bool))
        else:
            r, m = render_rain(f, rain, np.random.default_rng(seeds[i]))
            rainy.append(r)
            masks.append(m)
    shifts = [(i * dx, i * dy) for i in range(n_frames)]
    return SynthScene(clean, rainy, masks, shifts, (ox, oy), layer_shifts, seeds)


def procedural_texture(height: int, width: int, rng: np.random.Generator, scales=(24.0, 8.0, 3.0), weights=(1.0, 0.5, 0.25)) -> np.ndarray:
    """Smooth multi-scale RGB noise in [0, 1], shape (h, w, 3)."""
    img = np.zeros((height, width, 3))
    for s, wgt in zip(scales, weights):
        noise = ndimage.gaussian_filter(rng.standard_normal((height, width, 3)), (s, s, 0), mode="wrap")
        img += wgt * noise / (noise.std() + 1e-12)
    img -= img.min()
    img /= img.max() + 1e-12
    return img


def procedural_scene(height: int, width: int, seed: int = 0, detail: float = 1.0) -> Frame:
    """Natural-looking test frame: smooth multi-scale colour noise plus a few flat shapes.

    Luma is kept inside [0.1, 0.85] so additive rain is never clipped away.
    """
    rng = np.random.default_rng(seed)
    img = procedural_texture(height, width, rng, weights=(1.0, 0.5 * detail, 0.25 * detail))
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(max(1, (height * width) // 40000)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rx, ry = rng.uniform(10, 40, 2)
        colour = rng.uniform(0.15, 0.8, 3)
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        img[inside] = 0.6 * img[inside] + 0.4 * colour
    img = 0.1 + 0.75 * img
    return rgb_to_ycbcr(np.rint(img * 255).astype(np.uint8))


def blob_alpha(height: int, width: int, rng: np.random.Generator, n_blobs: int, radius: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    alpha = np.zeros((height, width))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rx, ry = rng.uniform(*radius, 2)
        alpha[((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0] = 1.0
    return alpha


def parallax_scene(
    seed: int,
    n_views: int = 7,
    size: tuple[int, int] = (160, 120),
    shift: tuple[int, int] = (2, 0),
    parallax: int = 3,
    n_blobs: int = 6,
) -> SynthScene:
    """Two-depth-layer, rain-free view sequence: a textured background and a
    differently coloured foreground of elliptical blobs moving ``parallax`` times
    as fast.
    """
    rng = np.random.default_rng(seed)
    w, h = size
    dx, dy = shift
    margin_x = abs(dx) * parallax * (n_views - 1) + 4
    margin_y = abs(dy) * parallax * (n_views - 1) + 4
    bw, bh = w + margin_x, h + margin_y
    bg_rgb = 0.15 + 0.5 * procedural_texture(bh, bw, rng, scales=(12.0, 4.0, 1.5), weights=(1.0, 0.6, 0.3))
    fg_rgb = procedural_texture(bh, bw, rng, scales=(10.0, 3.0, 1.5), weights=(1.0, 0.6, 0.3))
    tint = rng.uniform(0.0, 1.0, 3)
    fg_rgb = np.clip(0.35 + 0.35 * fg_rgb + 0.3 * tint, 0.0, 1.0)
    to_frame = lambda im: rgb_to_ycbcr(np.rint(im * 255).astype(np.uint8))  # noqa: E731
    alpha = blob_alpha(bh, bw, rng, n_blobs, (8.0, 22.0))
    layer = Layer(to_frame(fg_rgb), alpha, parallax)
    return synth_translating_sequence(to_frame(bg_rgb), n_views, (dx, dy), (w, h), (layer,))
