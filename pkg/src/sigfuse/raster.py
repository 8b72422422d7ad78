"""Raster model and the preprocessing chain.

Gray rasters are ``uint8`` arrays of shape ``(height, width)`` where 0 is the
darkest ink and 255 is paper white. Binary rasters are ``bool`` arrays of the
same shape with ``True`` marking ink. A raw scan goes through

    normalize_geometry -> denoise -> binarize -> thin / extract_hpr

and ends up as an :class:`ImageSet` holding the four analysis rasters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigError, InvalidImageError

BACKGROUND = 255


@dataclass(frozen=True)
class PreprocessConfig:
    target_width: int = 512
    target_height: int = 256
    median_window: int = 3
    mean_window: int = 3
    hpr_factor: float = 0.75

    def __post_init__(self):
        if self.target_width < 1 or self.target_height < 1:
            raise ConfigError("normalized size must be at least 1x1")
        for name in ("median_window", "mean_window"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {w}")
        if not 0.0 < self.hpr_factor < 1.0:
            raise ConfigError(f"hpr_factor must lie in (0, 1), got {self.hpr_factor}")


@dataclass(frozen=True)
class ImageSet:
    """The four derived rasters of one signature, all of one shape."""

    gray: np.ndarray
    binary: np.ndarray
    thinned: np.ndarray
    hpr: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.gray, self.binary, self.thinned, self.hpr)}
        if len(shapes) != 1:
            raise InvalidImageError(f"ImageSet rasters disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.gray.shape

    def crop(self, rows: slice, cols: slice) -> "ImageSet":
        return ImageSet(
            self.gray[rows, cols],
            self.binary[rows, cols],
            self.thinned[rows, cols],
            self.hpr[rows, cols],
        )


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidImageError(f"expected a nonempty 2-D raster, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidImageError("gray intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_binary(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise InvalidImageError(f"expected a 2-D raster, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def normalize_geometry(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Scale into the target canvas with nearest-neighbour sampling.

    A single factor ``min(tw / w, th / h)`` is used so the aspect ratio is
    kept; the unused part of the canvas is filled with background and the
    content sits in the top-left corner.
    """
    img = as_gray(img)
    h, w = img.shape
    tw, th = cfg.target_width, cfg.target_height
    s = min(tw / w, th / h)
    new_w = min(tw, max(1, int(np.floor(w * s + 0.5))))
    new_h = min(th, max(1, int(np.floor(h * s + 0.5))))
    # pixel-centre mapping in exact integer arithmetic
    src_x = ((2 * np.arange(new_w) + 1) * w) // (2 * new_w)
    src_y = ((2 * np.arange(new_h) + 1) * h) // (2 * new_h)
    out = np.full((th, tw), BACKGROUND, dtype=np.uint8)
    out[:new_h, :new_w] = img[np.ix_(src_y, src_x)]
    return out


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def denoise(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Median filter followed by mean filter, both with replicated edges."""
    img = as_gray(img)
    for name in ("median_window", "mean_window"):
        w = getattr(cfg, name)
        if w < 1 or w % 2 == 0:
            raise ConfigError(f"{name} must be odd and >= 1, got {w}")
    out = ndimage.median_filter(img, size=cfg.median_window, mode="nearest")
    mean = ndimage.uniform_filter(out.astype(np.float64), size=cfg.mean_window, mode="nearest")
    return np.clip(_round_half_up(mean), 0, 255).astype(np.uint8)


def otsu_threshold(img) -> int | None:
    """Otsu threshold over the 256-bin histogram, or None for a single-level image.

    The returned T splits pixels into ``<= T`` and ``> T``. Between-class
    variances are compared as exact rationals so that ties resolve to the
    smallest T regardless of floating-point noise.
    """
    img = as_gray(img)
    hist = np.bincount(img.ravel(), minlength=256)
    n = int(hist.sum())
    total = int(np.dot(np.arange(256), hist))
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 = (n*s0 - total*n0)^2 / (n^2 * n0 * n1); n^2 is common
        num = (n * s0 - total * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(img) -> np.ndarray:
    """Otsu binarization; ink (dark) pixels at or below the threshold are foreground."""
    img = as_gray(img)
    t = otsu_threshold(img)
    if t is None:
        return np.zeros(img.shape, dtype=bool)
    return img <= t


def _zs_neighbours(p: np.ndarray):
    """Return P2..P9 for every interior pixel of a zero-padded uint8 array."""
    return (
        p[:-2, 1:-1],  # P2 north
        p[:-2, 2:],    # P3 north-east
        p[1:-1, 2:],   # P4 east
        p[2:, 2:],     # P5 south-east
        p[2:, 1:-1],   # P6 south
        p[2:, :-2],    # P7 south-west
        p[1:-1, :-2],  # P8 west
        p[:-2, :-2],   # P9 north-west
    )


def thin(img) -> np.ndarray:
    """Zhang-Suen thinning iterated until nothing changes.

    Pixels outside the raster count as background, so border pixels are
    thinned like any other.
    """
    img = as_binary(img)
    p = np.pad(img.astype(np.uint8), 1)
    core = p[1:-1, 1:-1]
    while True:
        changed = False
        for first in (True, False):
            n = _zs_neighbours(p)
            p2, p3, p4, p5, p6, p7, p8, p9 = n
            b = sum(n, start=np.zeros_like(core, dtype=np.int16))
            ring = n + (p2,)
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1) for i in range(8)),
                    start=np.zeros_like(core, dtype=np.int16))
            if first:
                c1 = (p2 & p4 & p6) == 0
                c2 = (p4 & p6 & p8) == 0
            else:
                c1 = (p2 & p4 & p8) == 0
                c2 = (p2 & p6 & p8) == 0
            delete = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
            if delete.any():
                core[delete] = 0
                changed = True
        if not changed:
            return core.astype(bool)


def extract_hpr(gray, binary, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """High-pressure region: the darkest band of the ink's gray range.

    With g_min and g_max taken over ink pixels only, the kept pixels are those
    at or below ``g_max - hpr_factor * (g_max - g_min)``. A larger factor keeps
    fewer pixels. Ink of a single intensity yields an empty region.
    """
    gray = as_gray(gray)
    binary = as_binary(binary)
    if gray.shape != binary.shape:
        raise InvalidImageError(f"gray {gray.shape} and binary {binary.shape} differ in shape")
    out = np.zeros(gray.shape, dtype=bool)
    if not binary.any():
        return out
    ink = gray[binary]
    g_min, g_max = float(ink.min()), float(ink.max())
    if g_max == g_min:
        return out
    t = g_max - cfg.hpr_factor * (g_max - g_min)
    out[binary] = ink <= t
    return out


def preprocess(raw, cfg: PreprocessConfig = PreprocessConfig()) -> ImageSet:
    gray = denoise(normalize_geometry(raw, cfg), cfg)
    binary = binarize(gray)
    return ImageSet(gray, binary, thin(binary), extract_hpr(gray, binary, cfg))


# ---------------------------------------------------------------------------
# file IO


def read_image(path) -> np.ndarray:
    """Load an 8-bit grayscale PGM (P5) or PNG."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1", "P", "LA"):
                raise InvalidImageError(f"{path}: unsupported image mode {im.mode!r}")
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise InvalidImageError(f"{path}: cannot decode raster ({exc})") from exc
    return as_gray(arr)


def write_pgm(path, img) -> None:
    """Write a raster as binary PGM. Boolean rasters map ink to 0, background to 255."""
    arr = np.asarray(img)
    if arr.dtype == bool:
        arr = np.where(arr, 0, 255).astype(np.uint8)
    Image.fromarray(as_gray(arr)).save(Path(path), format="PPM")
