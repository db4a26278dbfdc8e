"""CT image preparation: HU windowing, adaptive equalization, resizing.

All intensity quantization rounds half-up, floor(x + 0.5), so outputs are
reproducible bit for bit.  Note numpy's round() rounds half to even and is
deliberately not used here.

Measurements (geometry module) always run on native-resolution masks; resize
exists to reproduce a model-input pipeline and propagates pixel spacing so
downstream consumers stay in physical units.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DecodeError, EmptyInput, MissingFile, TileTooSmall, ValidationError
from .ingest import BinaryMask


@dataclass(frozen=True)
class WindowSpec:
    """Linear HU display window."""

    width_hu: float = 1400.0
    center_hu: float = -700.0

    def __post_init__(self):
        if not self.width_hu > 0:
            raise ValidationError("width_hu", f"must be > 0, got {self.width_hu}")


@dataclass(frozen=True)
class ClaheSpec:
    """Contrast-limited adaptive equalization parameters.

    clip_limit is a multiple of the uniform per-bin count (tile_pixels / 256).
    """

    clip_limit: float = 1.0
    tile_grid: tuple[int, int] = (16, 16)

    def __post_init__(self):
        if not self.clip_limit > 0:
            raise ValidationError("clip_limit", f"must be > 0, got {self.clip_limit}")
        tr, tc = self.tile_grid
        if tr < 1 or tc < 1:
            raise ValidationError("tile_grid", f"tile counts must be >= 1, got {self.tile_grid}")


@dataclass(eq=False)
class Image8:
    """8-bit grayscale raster with physical pixel spacing."""

    values: np.ndarray  # 2-D uint8
    spacing_mm: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ValidationError("values", "image grid must be 2-D")
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ValidationError("values", "values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.values = arr
        rs, cs = self.spacing_mm
        if not (rs > 0 and cs > 0):
            raise ValidationError("spacing_mm", f"components must be > 0, got {self.spacing_mm}")
        self.spacing_mm = (float(rs), float(cs))

    @property
    def dims(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image8):
            return NotImplemented
        return self.spacing_mm == other.spacing_mm and np.array_equal(self.values, other.values)


def _round_half_up_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def window_hu(raw, spec: WindowSpec = WindowSpec(),
              spacing_mm: tuple[float, float] = (1.0, 1.0)) -> Image8:
    """Map HU values onto [0, 255] linearly, clamping outside the window."""
    arr = np.asarray(raw, dtype=float)
    if arr.size == 0:
        raise EmptyInput("HU grid is empty")
    lo = spec.center_hu - spec.width_hu / 2.0
    scaled = (arr - lo) / spec.width_hu * 255.0
    return Image8(values=_round_half_up_u8(np.clip(scaled, 0.0, 255.0)),
                  spacing_mm=spacing_mm)


# ---------------------------------------------------------------------------
# CLAHE


def _tile_edges(dim: int, n_tiles: int) -> np.ndarray:
    return np.array([(t * dim) // n_tiles for t in range(n_tiles + 1)], dtype=int)


def _clipped_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """256-entry float mapping for one tile: clip, redistribute, scale CDF."""
    n = tile.size
    hist = np.bincount(tile.ravel(), minlength=256).astype(float)
    threshold = clip_limit * (n / 256.0)
    excess = float(np.maximum(hist - threshold, 0.0).sum())
    clipped = np.minimum(hist, threshold)
    clipped += excess / 256.0  # one uniform pass; total count stays n
    return np.cumsum(clipped) / n * 255.0


def _tile_mappings(values: np.ndarray, spec: ClaheSpec) -> np.ndarray:
    """(tile_rows, tile_cols, 256) float lookup tables."""
    tr, tc = spec.tile_grid
    redges = _tile_edges(values.shape[0], tr)
    cedges = _tile_edges(values.shape[1], tc)
    luts = np.empty((tr, tc, 256), dtype=float)
    for i in range(tr):
        for j in range(tc):
            tile = values[redges[i]:redges[i + 1], cedges[j]:cedges[j + 1]]
            luts[i, j] = _clipped_lut(tile, spec.clip_limit)
    return luts


def _axis_blend(dim: int, n_tiles: int):
    """Per-coordinate (lower tile, upper tile, upper weight) along one axis.

    Tile centers sit at (start + end - 1) / 2; coordinates beyond the first or
    last center clamp to the edge tile.
    """
    edges = _tile_edges(dim, n_tiles)
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    x = np.arange(dim, dtype=float)
    lo = np.clip(np.searchsorted(centers, x, side="right") - 1, 0, n_tiles - 1)
    hi = np.clip(lo + 1, 0, n_tiles - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (x - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    w = np.clip(w, 0.0, 1.0)
    return lo, hi, w


def clahe(img: Image8, spec: ClaheSpec = ClaheSpec()) -> Image8:
    """Contrast-limited adaptive histogram equalization.

    Per-tile 256-bin histograms are clipped at clip_limit * (tile_pixels/256),
    the excess is redistributed uniformly in a single pass, and each tile's
    scaled CDF becomes its mapping.  Every pixel blends the four surrounding
    tile mappings bilinearly; quantization happens once at the end.
    """
    h, w = img.dims
    tr, tc = spec.tile_grid
    if h < tr or w < tc:
        raise TileTooSmall(f"image {h}x{w} cannot host a {tr}x{tc} tile grid")
    luts = _tile_mappings(img.values, spec)
    rlo, rhi, rw = _axis_blend(h, tr)
    clo, chi, cw = _axis_blend(w, tc)
    v = img.values
    top = ((1.0 - cw)[None, :] * luts[rlo[:, None], clo[None, :], v]
           + cw[None, :] * luts[rlo[:, None], chi[None, :], v])
    bottom = ((1.0 - cw)[None, :] * luts[rhi[:, None], clo[None, :], v]
              + cw[None, :] * luts[rhi[:, None], chi[None, :], v])
    blended = (1.0 - rw)[:, None] * top + rw[:, None] * bottom
    return Image8(values=_round_half_up_u8(blended), spacing_mm=img.spacing_mm)


# ---------------------------------------------------------------------------
# resizing


def _check_target(target_dims) -> tuple[int, int]:
    th, tw = int(target_dims[0]), int(target_dims[1])
    if th < 1 or tw < 1:
        raise ValidationError("target_dims", f"must be >= 1x1, got {target_dims}")
    return th, tw


def _src_coords(dst_dim: int, src_dim: int) -> np.ndarray:
    # half-pixel-center mapping; identity when dims match
    scale = src_dim / dst_dim
    return (np.arange(dst_dim, dtype=float) + 0.5) * scale - 0.5


def _rescaled_spacing(spacing, src_dims, dst_dims) -> tuple[float, float]:
    return (spacing[0] * (src_dims[0] / dst_dims[0]),
            spacing[1] * (src_dims[1] / dst_dims[1]))


def _resize_bilinear_u8(values: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    h, w = values.shape
    th, tw = target_dims
    sy = np.clip(_src_coords(th, h), 0.0, h - 1.0)
    sx = np.clip(_src_coords(tw, w), 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    vals = values.astype(float)
    top = (1.0 - fx) * vals[y0[:, None], x0[None, :]] + fx * vals[y0[:, None], x1[None, :]]
    bottom = (1.0 - fx) * vals[y1[:, None], x0[None, :]] + fx * vals[y1[:, None], x1[None, :]]
    return _round_half_up_u8((1.0 - fy) * top + fy * bottom)


def _resize_nearest(values: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    h, w = values.shape
    th, tw = target_dims
    ry = np.clip(np.floor(_src_coords(th, h) + 0.5).astype(int), 0, h - 1)
    rx = np.clip(np.floor(_src_coords(tw, w) + 0.5).astype(int), 0, w - 1)
    return values[ry[:, None], rx[None, :]]


def resize(item, target_dims):
    """Resize an Image8 (bilinear) or BinaryMask (nearest neighbor).

    Pixel spacing is rescaled by source_dim / target_dim per axis, so the
    physical extent is preserved up to the sub-pixel remainder.
    """
    th, tw = _check_target(target_dims)
    if isinstance(item, Image8):
        out = _resize_bilinear_u8(item.values, (th, tw))
        return Image8(values=out,
                      spacing_mm=_rescaled_spacing(item.spacing_mm, item.dims, (th, tw)))
    if isinstance(item, BinaryMask):
        out = _resize_nearest(item.bits, (th, tw))
        return BinaryMask(bits=out,
                          spacing_mm=_rescaled_spacing(item.spacing_mm, item.dims, (th, tw)))
    raise ValidationError("item", f"expected Image8 or BinaryMask, got {type(item).__name__}")


# ---------------------------------------------------------------------------
# HU raster IO (CLI plumbing)


def load_hu(path: str) -> np.ndarray:
    """Read an HU grid from a .npy file or a 16-bit grayscale PNG.

    16-bit PNGs are unsigned on disk; values >= 32768 are reinterpreted as
    negative (two's complement), covering the HU range of signed exports.
    """
    if not os.path.isfile(path):
        raise MissingFile(path)
    if path.endswith(".npy"):
        try:
            arr = np.load(path)
        except Exception as exc:
            raise DecodeError(f"{path}: {exc}")
        if arr.ndim != 2:
            raise DecodeError(f"{path}: HU grid must be 2-D, got shape {arr.shape}")
        return arr.astype(float)
    try:
        with Image.open(path) as im:
            if im.mode not in ("I", "I;16"):
                raise DecodeError(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode!r}")
            arr = np.asarray(im).astype(np.int64)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}")
    if arr.ndim != 2:
        raise DecodeError(f"{path}: HU grid must be 2-D")
    arr[arr >= 32768] -= 65536
    return arr.astype(float)


def load_image8(path: str, spacing_mm: tuple[float, float] = (1.0, 1.0)) -> Image8:
    """Read an already-windowed 8-bit grayscale PNG."""
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DecodeError(f"{path}: expected 8-bit grayscale PNG, got mode "
                                  f"{im.mode!r} (raw HU input needs windowing first)")
            arr = np.asarray(im, dtype=np.uint8)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}")
    return Image8(values=arr, spacing_mm=spacing_mm)


def save_image8(img: Image8, path: str):
    Image.fromarray(img.values, mode="L").save(path, format="PNG")
