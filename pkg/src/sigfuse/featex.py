"""Global and grid-local geometric features.

Projection naming is fixed here once: the *horizontal* projection is the
row-profile (ink count per row) and the *vertical* projection is the
column-profile (ink count per column).

A feature vector is 302 floats: 27 global features followed by 25 blocks of
11 local features, one block per cell of a 5x5 grid in row-major order.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidImageError
from .raster import ImageSet, as_binary

GRID = 5
MIN_EXTENT_COUNT = 3  # a row/column counts toward width/height only above this
SMOOTH_WINDOW = 5


@dataclass(frozen=True)
class ProjectionProfile:
    counts: np.ndarray
    axis: str  # "row" or "column"


@dataclass(frozen=True)
class GlobalFeatures:
    width: float = 0.0
    height: float = 0.0
    aspect_ratio: float = 0.0
    hproj_sum_binary: float = 0.0
    hproj_sum_thinned: float = 0.0
    vproj_sum_binary: float = 0.0
    vproj_sum_thinned: float = 0.0
    area_binary: float = 0.0
    area_thinned: float = 0.0
    area_hpr: float = 0.0
    narea_binary: float = 0.0
    narea_thinned: float = 0.0
    narea_hpr: float = 0.0
    cog_x: float = 0.0
    cog_y: float = 0.0
    vproj_max: float = 0.0
    vproj_min: float = 0.0
    vproj_smoothed_max: float = 0.0
    vproj_smoothed_min: float = 0.0
    hproj_max: float = 0.0
    hproj_min: float = 0.0
    hproj_smoothed_max: float = 0.0
    hproj_smoothed_min: float = 0.0
    global_baseline: float = 0.0
    upper_edge_limit: float = 0.0
    lower_edge_limit: float = 0.0
    middle_zone: float = 0.0


@dataclass(frozen=True)
class LocalFeatures:
    width: float = 0.0
    height: float = 0.0
    aspect_ratio: float = 0.0
    area_binary: float = 0.0
    area_thinned: float = 0.0
    area_hpr: float = 0.0
    narea_binary: float = 0.0
    cog_x: float = 0.0
    cog_y: float = 0.0
    hproj_sum: float = 0.0
    vproj_sum: float = 0.0


GLOBAL_NAMES = tuple(f.name for f in fields(GlobalFeatures))
LOCAL_NAMES = tuple(f.name for f in fields(LocalFeatures))
FEATURE_NAMES = tuple(
    [f"g_{n}" for n in GLOBAL_NAMES]
    + [f"c{r}{c}_{n}" for r in range(GRID) for c in range(GRID) for n in LOCAL_NAMES]
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 302


def projection(img, axis: str) -> ProjectionProfile:
    img = as_binary(img)
    if axis == "row":
        counts = img.sum(axis=1)
    elif axis == "column":
        counts = img.sum(axis=0)
    else:
        raise ValueError(f"axis must be 'row' or 'column', got {axis!r}")
    return ProjectionProfile(counts.astype(np.int64), axis)


def smooth_profile(p: ProjectionProfile, window: int = SMOOTH_WINDOW) -> ProjectionProfile:
    """Centred moving average with replicated end values."""
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")
    counts = np.asarray(p.counts, dtype=np.float64)
    if window == 1 or counts.size == 0:
        return ProjectionProfile(counts.copy(), p.axis)
    half = window // 2
    padded = np.pad(counts, half, mode="edge")
    kernel = np.full(window, 1.0 / window)
    return ProjectionProfile(np.convolve(padded, kernel, mode="valid"), p.axis)


def _extent(counts: np.ndarray) -> float:
    idx = np.flatnonzero(counts > MIN_EXTENT_COUNT)
    return float(idx[-1] - idx[0] + 1) if idx.size else 0.0


def _cog(binary: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(binary)
    if xs.size == 0:
        return 0.0, 0.0
    return float(xs.mean()), float(ys.mean())


def _narea(area: float, box: float) -> float:
    # extents ignore sparse rows/columns, so stray ink can push the ratio past 1
    return min(1.0, area / box) if box > 0 else 0.0


def _profile_range(raw: np.ndarray, smoothed: np.ndarray) -> tuple[float, float, float, float]:
    nz = np.flatnonzero(raw)
    if nz.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    lo, hi = nz[0], nz[-1] + 1
    r, s = raw[lo:hi], smoothed[lo:hi]
    return float(r.max()), float(r.min()), float(s.max()), float(s.min())


def _baseline(rows: np.ndarray) -> float:
    if not rows.any():
        return 0.0
    peaks = np.flatnonzero(rows == rows.max())
    if peaks.size == 1:
        return float(peaks[0])
    return (peaks[0] + peaks[-1]) / 2.0


def _edge_limits(rows: np.ndarray, smoothed: np.ndarray, baseline: float) -> tuple[float, float]:
    diff = np.abs(smoothed - rows)
    idx = np.arange(rows.size)
    limits = []
    for side in (idx < baseline, idx > baseline):
        cand = idx[side]
        if cand.size == 0 or diff[cand].max() == 0.0:
            limits.append(baseline)
        else:
            limits.append(float(cand[np.argmax(diff[cand])]))
    return limits[0], limits[1]


def extract_global(s: ImageSet, window: int = SMOOTH_WINDOW) -> GlobalFeatures:
    binary, thinned, hpr = s.binary, s.thinned, s.hpr
    rows = projection(binary, "row").counts
    cols = projection(binary, "column").counts
    if not binary.any() and not thinned.any() and not hpr.any():
        return GlobalFeatures()

    width, height = _extent(cols), _extent(rows)
    box = width * height
    area_b = float(binary.sum())
    area_t = float(thinned.sum())
    area_h = float(hpr.sum())
    cog_x, cog_y = _cog(binary)

    rows_s = smooth_profile(ProjectionProfile(rows, "row"), window).counts
    cols_s = smooth_profile(ProjectionProfile(cols, "column"), window).counts
    v = _profile_range(cols.astype(np.float64), cols_s)
    h = _profile_range(rows.astype(np.float64), rows_s)
    base = _baseline(rows)
    upper, lower = _edge_limits(rows.astype(np.float64), rows_s, base)

    return GlobalFeatures(
        width=width,
        height=height,
        aspect_ratio=width / height if height > 0 else 0.0,
        hproj_sum_binary=float(rows.sum()),
        hproj_sum_thinned=float(projection(thinned, "row").counts.sum()),
        vproj_sum_binary=float(cols.sum()),
        vproj_sum_thinned=float(projection(thinned, "column").counts.sum()),
        area_binary=area_b,
        area_thinned=area_t,
        area_hpr=area_h,
        narea_binary=_narea(area_b, box),
        narea_thinned=_narea(area_t, box),
        narea_hpr=_narea(area_h, box),
        cog_x=cog_x,
        cog_y=cog_y,
        vproj_max=v[0],
        vproj_min=v[1],
        vproj_smoothed_max=v[2],
        vproj_smoothed_min=v[3],
        hproj_max=h[0],
        hproj_min=h[1],
        hproj_smoothed_max=h[2],
        hproj_smoothed_min=h[3],
        global_baseline=base,
        upper_edge_limit=upper,
        lower_edge_limit=lower,
        middle_zone=lower - upper,
    )


def grid_bounds(dim: int, parts: int = GRID) -> list[int]:
    return [(k * dim) // parts for k in range(parts + 1)]


def grid_partition(s: ImageSet) -> list[ImageSet]:
    """Split into a 5x5 grid of cells, row-major, tiling the raster exactly."""
    h, w = s.shape
    if h < GRID or w < GRID:
        raise InvalidImageError(f"grid partition needs at least {GRID}x{GRID} pixels, got {w}x{h}")
    ys, xs = grid_bounds(h), grid_bounds(w)
    return [
        s.crop(slice(ys[r], ys[r + 1]), slice(xs[c], xs[c + 1]))
        for r in range(GRID)
        for c in range(GRID)
    ]


def _local(cell: ImageSet) -> LocalFeatures:
    rows = cell.binary.sum(axis=1)
    cols = cell.binary.sum(axis=0)
    width, height = _extent(cols), _extent(rows)
    area_b = float(cell.binary.sum())
    cog_x, cog_y = _cog(cell.binary)
    return LocalFeatures(
        width=width,
        height=height,
        aspect_ratio=width / height if height > 0 else 0.0,
        area_binary=area_b,
        area_thinned=float(cell.thinned.sum()),
        area_hpr=float(cell.hpr.sum()),
        narea_binary=_narea(area_b, width * height),
        cog_x=cog_x,
        cog_y=cog_y,
        hproj_sum=float(rows.sum()),
        vproj_sum=float(cols.sum()),
    )


def extract_local(cells: Sequence[ImageSet]) -> list[LocalFeatures]:
    if len(cells) != GRID * GRID:
        raise InvalidImageError(f"expected {GRID * GRID} grid cells, got {len(cells)}")
    return [_local(c) for c in cells]


def assemble(glob: GlobalFeatures, locals_: Sequence[LocalFeatures]) -> np.ndarray:
    if len(locals_) != GRID * GRID:
        raise InvalidImageError(f"expected {GRID * GRID} local blocks, got {len(locals_)}")
    values = list(astuple(glob))
    for block in locals_:
        values.extend(astuple(block))
    return np.asarray(values, dtype=np.float64)


def extract_features(s: ImageSet) -> np.ndarray:
    """Full 302-slot feature vector of one preprocessed signature."""
    return assemble(extract_global(s), extract_local(grid_partition(s)))


def write_features_csv(path, rows: Iterable[tuple[str, str, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "sample_id", *FEATURE_NAMES])
        for subject_id, sample_id, vec in rows:
            writer.writerow([subject_id, sample_id, *(repr(float(v)) for v in vec)])


def read_features_csv(path) -> list[tuple[str, str, np.ndarray]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[2:]) != FEATURE_NAMES:
            raise ValueError(f"{path}: unexpected feature header")
        for row in reader:
            out.append((row[0], row[1], np.array([float(v) for v in row[2:]])))
    return out
