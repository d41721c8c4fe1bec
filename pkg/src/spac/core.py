"""Frames, colour conversion, frame-sequence I/O and the run configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_EXTS = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm")
METHODS = ("avg", "f1", "rpca")

# Full-range BT.601, rows map (R, G, B) in [0,1] to (Y, Cb-0.5, Cr-0.5).
_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)


class SpacError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(SpacError, ValueError):
    pass


class DimensionMismatchError(InvalidInputError):
    pass


@dataclass(frozen=True)
class Frame:
    """One video frame as full-range Y, Cb, Cr planes in [0, 1].

    Planes are stored as read-only float64 arrays of shape (height, width).
    """

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        planes = []
        for name in ("y", "cb", "cr"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if arr.ndim != 2 or arr.size == 0:
                raise InvalidInputError(f"plane {name} must be a nonempty 2D array")
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidInputError(f"plane {name} has samples outside [0, 1]")
            arr.flags.writeable = False
            planes.append(arr)
        if not (planes[0].shape == planes[1].shape == planes[2].shape):
            raise DimensionMismatchError("Y, Cb and Cr planes differ in size")
        for name, arr in zip(("y", "cb", "cr"), planes):
            object.__setattr__(self, name, arr)

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    def with_luma(self, y: np.ndarray) -> "Frame":
        """Return a frame with a new luma plane; chroma planes are shared unchanged."""
        new = object.__new__(Frame)
        arr = np.array(y, dtype=np.float64, copy=True)
        if arr.shape != self.y.shape:
            raise DimensionMismatchError(f"luma shape {arr.shape} != frame shape {self.y.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError("luma samples outside [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(new, "y", arr)
        object.__setattr__(new, "cb", self.cb)
        object.__setattr__(new, "cr", self.cr)
        return new

    @classmethod
    def from_luma(cls, y: np.ndarray) -> "Frame":
        """Grey frame (neutral chroma) from a luma plane."""
        y = np.asarray(y, dtype=np.float64)
        half = np.full(y.shape, 0.5)
        return cls(y, half, half)

    def to_rgb8(self) -> np.ndarray:
        return ycbcr_to_rgb(self)


def rgb_to_ycbcr(rgb: np.ndarray) -> Frame:
    """Convert an interleaved 8-bit RGB image (H, W, 3) to a Frame."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise InvalidInputError(f"expected a nonempty (H, W, 3) RGB image, got shape {rgb.shape}")
    if rgb.min() < 0 or rgb.max() > 255:
        raise InvalidInputError("RGB samples must lie in 0..255")
    ycc = (rgb.astype(np.float64) / 255.0) @ _RGB2YCC.T
    ycc[..., 1:] += 0.5
    np.clip(ycc, 0.0, 1.0, out=ycc)
    return Frame(ycc[..., 0], ycc[..., 1], ycc[..., 2])


def ycbcr_to_rgb(frame: Frame) -> np.ndarray:
    """Convert a Frame back to interleaved 8-bit RGB, clipping out-of-gamut samples."""
    ycc = np.stack([frame.y, frame.cb - 0.5, frame.cr - 0.5], axis=-1)
    rgb = ycc @ _YCC2RGB.T
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def load_image(path: Path) -> Frame:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
    return rgb_to_ycbcr(rgb)


def load_i420(path, width: int, height: int) -> list[Frame]:
    """Read a planar I420 (YUV 4:2:0) raw stream; chroma is upsampled by pixel replication."""
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise InvalidInputError("I420 needs positive, even --width/--height")
    data = np.fromfile(path, dtype=np.uint8)
    frame_size = width * height * 3 // 2
    if data.size == 0 or data.size % frame_size:
        raise InvalidInputError(
            f"{path}: size {data.size} is not a multiple of the I420 frame size {frame_size}"
        )
    frames = []
    ysz, csz = width * height, (width // 2) * (height // 2)
    for chunk in data.reshape(-1, frame_size):
        y = chunk[:ysz].reshape(height, width)
        u = chunk[ysz : ysz + csz].reshape(height // 2, width // 2)
        v = chunk[ysz + csz :].reshape(height // 2, width // 2)
        up = lambda c: np.repeat(np.repeat(c, 2, axis=0), 2, axis=1)  # noqa: E731
        frames.append(Frame(y / 255.0, up(u) / 255.0, up(v) / 255.0))
    return frames


def list_image_files(path) -> list[Path]:
    path = Path(path)
    return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def load_sequence(path, width: int | None = None, height: int | None = None) -> list[Frame]:
    """Load frames from an image directory (lexicographic order) or a raw I420 file."""
    path = Path(path)
    if path.is_file():
        if width is None or height is None:
            raise InvalidInputError(f"{path}: raw input requires width and height")
        return load_i420(path, width, height)
    if not path.is_dir():
        raise FileNotFoundError(f"no such file or directory: {path}")
    files = list_image_files(path)
    if not files:
        raise InvalidInputError(f"{path}: no image files found")
    frames = []
    for f in files:
        frame = load_image(f)
        if frames and frame.shape != frames[0].shape:
            raise DimensionMismatchError(
                f"{f.name}: size {frame.width}x{frame.height} differs from "
                f"{files[0].name} ({frames[0].width}x{frames[0].height})"
            )
        frames.append(frame)
    return frames


def save_sequence(frames: list[Frame], path) -> list[Path]:
    """Write frames as RGB PNG files 000000.png, 000001.png, ... into ``path``."""
    if not frames:
        raise InvalidInputError("cannot save an empty frame list")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    for i, frame in enumerate(frames):
        out = path / f"{i:06d}.png"
        Image.fromarray(frame.to_rgb8(), mode="RGB").save(out, compress_level=6)
        written.append(out)
    return written


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, compress_level=6)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def load_masks(path) -> list[np.ndarray]:
    return [load_mask(f) for f in list_image_files(path)]


def default_lambda(n_p: int, n_st: int) -> float:
    return 1.0 / max(math.sqrt(n_p), math.sqrt(n_st))


@dataclass
class SpacConfig:
    """Parameters for a derain run.

    ``lambda_mode`` is either ``"auto"`` (1/max(sqrt(n_p), sqrt(n_st)) per region)
    or a positive number used for every region.
    """

    n_t: int = 5
    r_s: int = 15
    n_st: int = 10
    eps_rain: float = 0.012
    eps_edge: float = 0.2
    fluctuation_votes: int = 3
    sp_count: int = 300
    compactness: float = 10.0
    lambda_mode: str = "auto"
    method: str = "avg"
    rpca_tol: float = 1e-7
    rpca_max_iter: int = 500
    prealign: bool = False
    _extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_t < 3 or self.n_t % 2 == 0:
            raise InvalidInputError(f"n_t must be odd and >= 3, got {self.n_t}")
        if self.n_st < 1:
            raise InvalidInputError("n_st must be >= 1")
        if self.r_s < 0:
            raise InvalidInputError("r_s must be >= 0")
        if self.n_st > (self.n_t - 1) * (2 * self.r_s + 1) ** 2:
            raise InvalidInputError("n_st exceeds the number of spatial-temporal candidates")
        if self.eps_rain <= 0 or self.eps_edge <= 0:
            raise InvalidInputError("thresholds must be positive")
        if not 1 <= self.fluctuation_votes <= self.n_t - 1:
            raise InvalidInputError("fluctuation_votes must lie in 1..n_t-1")
        if self.sp_count < 1:
            raise InvalidInputError("sp_count must be >= 1")
        if self.compactness <= 0:
            raise InvalidInputError("compactness must be positive")
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lambda_mode != "auto":
            try:
                lam = float(self.lambda_mode)
            except ValueError:
                raise InvalidInputError(f"lambda_mode must be 'auto' or a number, got {self.lambda_mode!r}")
            if lam <= 0:
                raise InvalidInputError("lambda must be positive")

    def rpca_lambda(self, n_p: int) -> float:
        if self.lambda_mode == "auto":
            return default_lambda(n_p, self.n_st)
        return float(self.lambda_mode)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if not f.name.startswith("_")}

    def replace(self, **changes) -> "SpacConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict, base: "SpacConfig | None" = None) -> "SpacConfig":
        """Build a config from string or typed values, on top of ``base``."""
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls) if not f.name.startswith("_")}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise InvalidInputError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, types[key], raw)
        return dataclasses.replace(base, **changes)

    @classmethod
    def from_file(cls, path, base: "SpacConfig | None" = None) -> "SpacConfig":
        """Parse a flat ``key = value`` file; ``#`` starts a comment."""
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values, base)


def _coerce(key: str, typ: str, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise InvalidInputError(f"bad value for {key}: {raw!r}")
    return raw
