"""SLIC superpixels on the target frame and per-superpixel bounding boxes.

The k-means runs in joint (L, a, b, x, y) space: grid-initialised seeds moved to
the lowest-gradient position of their 3x3 neighbourhood, assignment restricted to
a 2S x 2S window around each centre, at most 10 iterations.  Afterwards every
label is made 4-connected by absorbing stray fragments into their largest
neighbouring segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from .core import Frame, InvalidInputError

MAX_ITER = 10


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray  # (H, W) int32, values 0..count-1
    count: int

    @property
    def shape(self):
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)


@dataclass(frozen=True)
class SpRegion:
    """A superpixel and its (nominally square) bounding box.

    ``y0, x0`` is the top-left corner of the box in frame coordinates and
    ``mask`` is the box-sized membership map.  ``n_x`` is the nominal square
    side; boxes clamped at the frame border can be smaller in either direction.
    """

    label: int
    y0: int
    x0: int
    mask: np.ndarray
    n_x: int

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def n_p(self) -> int:
        return int(self.mask.sum())

    @property
    def box(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.height), slice(self.x0, self.x0 + self.width)

    def pixels(self) -> np.ndarray:
        """(n_p, 2) array of (x, y) frame coordinates in row-major mask order."""
        rows, cols = np.nonzero(self.mask)
        return np.stack([cols + self.x0, rows + self.y0], axis=1)

    def crop(self, plane: np.ndarray) -> np.ndarray:
        return plane[self.box]


def frame_to_lab(frame: Frame) -> np.ndarray:
    return rgb2lab(frame.to_rgb8())


def _grid_shape(height: int, width: int, k: int) -> tuple[int, int]:
    # Pick the (rows, cols) grid whose cell count is closest to k, then closest to square cells.
    best = None
    for ny in range(1, min(k, height) + 1):
        nx = min(width, max(1, round(k / ny)))
        score = (abs(nx * ny - k), abs(math.log((width / nx) / (height / ny))))
        if best is None or score < best[0]:
            best = (score, ny, nx)
    return best[1], best[2]


def _initial_centres(lab: np.ndarray, k: int) -> np.ndarray:
    h, w = lab.shape[:2]
    ny, nx = _grid_shape(h, w, k)
    ys = ((np.arange(ny) + 0.5) * h / ny).astype(int)
    xs = ((np.arange(nx) + 0.5) * w / nx).astype(int)

    # Squared colour gradient used to nudge seeds off edges.
    pad = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = pad[1:-1, 2:] - pad[1:-1, :-2]
    gy = pad[2:, 1:-1] - pad[:-2, 1:-1]
    grad = (gx**2).sum(-1) + (gy**2).sum(-1)

    centres = []
    for cy in ys:
        for cx in xs:
            by, bx = cy, cx
            if h >= 3 and w >= 3:
                best = np.inf
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = cy + dy, cx + dx
                        if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best:
                            best, by, bx = grad[yy, xx], yy, xx
            centres.append((lab[by, bx, 0], lab[by, bx, 1], lab[by, bx, 2], by, bx))
    return np.array(centres, dtype=np.float64)


@numba.njit(cache=True, nogil=True)
def _assign(lab, centres, step, spatial_weight, labels, dist):
    h, w = labels.shape
    for i in range(h):
        for j in range(w):
            dist[i, j] = np.inf
    for k in range(centres.shape[0]):
        cl, ca, cb, cy, cx = centres[k]
        y_lo = max(0, int(cy - step))
        y_hi = min(h, int(cy + step) + 1)
        x_lo = max(0, int(cx - step))
        x_hi = min(w, int(cx + step) + 1)
        for i in range(y_lo, y_hi):
            for j in range(x_lo, x_hi):
                dl = lab[i, j, 0] - cl
                da = lab[i, j, 1] - ca
                db = lab[i, j, 2] - cb
                dy = i - cy
                dx = j - cx
                d = dl * dl + da * da + db * db + spatial_weight * (dy * dy + dx * dx)
                # Strict comparison: on ties the lowest cluster id keeps the pixel.
                if d < dist[i, j]:
                    dist[i, j] = d
                    labels[i, j] = k


@numba.njit(cache=True, nogil=True)
def _update(lab, labels, centres):
    n = centres.shape[0]
    acc = np.zeros((n, 6))
    h, w = labels.shape
    for i in range(h):
        for j in range(w):
            k = labels[i, j]
            if k < 0:
                continue
            acc[k, 0] += lab[i, j, 0]
            acc[k, 1] += lab[i, j, 1]
            acc[k, 2] += lab[i, j, 2]
            acc[k, 3] += i
            acc[k, 4] += j
            acc[k, 5] += 1.0
    shift = 0.0
    for k in range(n):
        if acc[k, 5] > 0:
            for c in range(5):
                v = acc[k, c] / acc[k, 5]
                if c >= 3:
                    shift = max(shift, abs(v - centres[k, c]))
                centres[k, c] = v
    return shift


@numba.njit(cache=True)
def _components(labels):
    """4-connected components of equal-label pixels, numbered in raster order."""
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for i in range(h):
        for j in range(w):
            if comp[i, j] >= 0:
                continue
            lab = labels[i, j]
            comp[i, j] = n
            top = 0
            stack[top] = i * w + j
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p % w
                for d in range(4):
                    yy = y + (d == 0) - (d == 1)
                    xx = x + (d == 2) - (d == 3)
                    if 0 <= yy < h and 0 <= xx < w and comp[yy, xx] < 0 and labels[yy, xx] == lab:
                        comp[yy, xx] = n
                        stack[top] = yy * w + xx
                        top += 1
            n += 1
    return comp, n


def _adjacency(comp: np.ndarray) -> list[set]:
    n = int(comp.max()) + 1
    adj = [set() for _ in range(n)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0)
        for p, q in pairs:
            adj[p].add(int(q))
            adj[q].add(int(p))
    return adj


def enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge fragments into neighbours so every label is one 4-connected region.

    A component is an orphan if it is not the largest component of its label or
    is smaller than ``min_size``.  Orphans are visited smallest first (ties by
    raster order) and merged into the adjacent segment with the most pixels.
    Returns labels renumbered 0..K-1 in raster order of first appearance.
    """
    comp, n = _components(labels.astype(np.int64))
    sizes = np.bincount(comp.ravel(), minlength=n).astype(np.int64)
    comp_label = np.zeros(n, dtype=np.int64)
    comp_label[comp.ravel()] = labels.ravel()

    main = {}
    for c in range(n):
        lab = comp_label[c]
        if lab not in main or sizes[c] > sizes[main[lab]]:
            main[lab] = c
    orphan = [c for c in range(n) if main[comp_label[c]] != c or sizes[c] < min_size]

    parent = np.arange(n)

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    adj = _adjacency(comp) if n > 1 else [set()]
    members = {c: {c} for c in range(n)}
    cur = sizes.copy()
    for c in sorted(orphan, key=lambda c: (sizes[c], c)):
        root = find(c)
        neigh = set()
        for m in members[root]:
            for q in adj[m]:
                r = find(q)
                if r != root:
                    neigh.add(r)
        if not neigh:
            continue
        target = min(neigh, key=lambda r: (-cur[r], r))
        parent[root] = target
        cur[target] += cur[root]
        members[target] |= members.pop(root)

    roots = np.array([find(c) for c in range(n)])
    merged = roots[comp]
    _, first = np.unique(merged.ravel(), return_index=True)
    order = np.argsort(first)
    remap = np.empty(merged.max() + 1, dtype=np.int32)
    remap[np.unique(merged.ravel())[order]] = np.arange(order.size, dtype=np.int32)
    return remap[merged]


def slic_segment(frame: Frame, sp_count: int, compactness: float = 10.0) -> Segmentation:
    """Segment a frame into roughly ``sp_count`` 4-connected superpixels."""
    h, w = frame.shape
    if sp_count < 1:
        raise InvalidInputError("sp_count must be >= 1")
    if sp_count > h * w:
        raise InvalidInputError(f"sp_count {sp_count} exceeds pixel count {h * w}")
    if sp_count == 1:
        return Segmentation(np.zeros((h, w), dtype=np.int32), 1)

    lab = frame_to_lab(frame)
    step = math.sqrt(h * w / sp_count)
    centres = _initial_centres(lab, sp_count)
    spatial_weight = (compactness / step) ** 2
    labels = -np.ones((h, w), dtype=np.int64)
    dist = np.empty((h, w))
    for _ in range(MAX_ITER):
        _assign(lab, centres, step, spatial_weight, labels, dist)
        if (labels < 0).any():
            # Pixels outside every window go to the spatially nearest centre.
            yy, xx = np.nonzero(labels < 0)
            d2 = (yy[:, None] - centres[None, :, 3]) ** 2 + (xx[:, None] - centres[None, :, 4]) ** 2
            labels[yy, xx] = np.argmin(d2, axis=1)
        if _update(lab, labels, centres) < 1e-3:
            break

    min_size = max(1, int(step * step / 4))
    final = enforce_connectivity(labels, min_size)
    return Segmentation(final, int(final.max()) + 1)


def extract_region(seg: Segmentation, label: int, _slices=None) -> SpRegion:
    """Bounding box of one superpixel, grown symmetrically to a square then clamped."""
    if not 0 <= label < seg.count:
        raise InvalidInputError(f"unknown superpixel label {label} (count {seg.count})")
    h, w = seg.shape
    sl = _slices if _slices is not None else ndimage.find_objects((seg.labels == label).astype(np.int32))[0]
    r0, r1 = sl[0].start, sl[0].stop
    c0, c1 = sl[1].start, sl[1].stop
    n_x = max(r1 - r0, c1 - c0)
    gy, gx = n_x - (r1 - r0), n_x - (c1 - c0)
    y0, x0 = max(0, r0 - gy // 2), max(0, c0 - gx // 2)
    y1, x1 = min(h, r1 + (gy - gy // 2)), min(w, c1 + (gx - gx // 2))
    mask = seg.labels[y0:y1, x0:x1] == label
    return SpRegion(label=label, y0=y0, x0=x0, mask=mask, n_x=n_x)


def extract_regions(seg: Segmentation) -> list[SpRegion]:
    slices = ndimage.find_objects(seg.labels + 1)
    return [extract_region(seg, k, slices[k]) for k in range(seg.count)]


def boundary_length(labels: np.ndarray) -> int:
    """Number of 4-neighbour pixel pairs that straddle two labels."""
    return int((labels[:, 1:] != labels[:, :-1]).sum() + (labels[1:, :] != labels[:-1, :]).sum())


def label_image(seg: Segmentation) -> np.ndarray:
    """16-bit label map for debug output."""
    return seg.labels.astype(np.uint16)


def boundary_overlay(frame: Frame, seg: Segmentation) -> np.ndarray:
    rgb = frame.to_rgb8().copy()
    lab = seg.labels
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    rgb[edge] = (255, 0, 0)
    return rgb
