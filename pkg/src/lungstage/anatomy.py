"""Diaphragm-position estimation and the surrounded-by-lung containment test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, ShapeMismatch, ValidationError
from .geometry import boundary_mask, connected_components, min_distance_mm
from .ingest import BinaryMask


@dataclass(frozen=True)
class DiaphragmParams:
    """Fraction of each lung component's height forming the inferior band."""

    band_fraction: float = 0.10

    def __post_init__(self):
        if not (0 < self.band_fraction <= 1):
            raise ValidationError("band_fraction", f"must be in (0, 1], got {self.band_fraction}")


@dataclass(frozen=True)
class ContainmentParams:
    """Minimum clearance from the lung region border to count as surrounded."""

    margin_mm: float = 0.0

    def __post_init__(self):
        if self.margin_mm < 0:
            raise ValidationError("margin_mm", f"must be >= 0, got {self.margin_mm}")


def estimate_diaphragm(lung: BinaryMask, params: DiaphragmParams = DiaphragmParams()
                       ) -> BinaryMask:
    """Per-column lowest lung pixels near each lung base.

    For each of the up to two largest lung components: with r_low the lowest
    foreground row and h the bounding-box height, the band spans
    band_rows = max(1, round_half_up(band_fraction * h)) rows up from r_low.
    A column contributes its lowest pixel (b(c), c) when b(c) lies in the
    band.  Components are processed independently and the result is their
    union, so each lung anchors its own band.
    """
    comps = connected_components(lung)
    if not comps:
        raise EmptyMask("lung mask has no foreground")
    h_img, w_img = lung.dims
    out = np.zeros((h_img, w_img), dtype=bool)
    for comp in comps[:2]:
        rmin, _, rmax, _ = comp.bbox
        h = rmax - rmin + 1
        band_rows = max(1, int(np.floor(params.band_fraction * h + 0.5)))
        has_col = comp.bits.any(axis=0)
        # lowest foreground row per occupied column
        lowest = h_img - 1 - np.argmax(comp.bits[::-1, :], axis=0)
        keep = has_col & (lowest >= rmax - band_rows + 1)
        out[lowest[keep], np.flatnonzero(keep)] = True
    return BinaryMask(bits=out, spacing_mm=lung.spacing_mm)


def is_surrounded_by_lung(tumor: BinaryMask, lung: BinaryMask,
                          params: ContainmentParams = ContainmentParams()) -> bool:
    """True when the tumor sits strictly inside the lung region.

    The test region is lung | tumor, since a tumor may locally replace lung
    tissue; the tumor must clear that region's border (hole borders and the
    image edge included) by more than margin_mm.  A tumor pixel on the border
    itself gives separation zero, hence not surrounded.
    """
    if tumor.dims != lung.dims:
        raise ShapeMismatch(f"grids differ: {tumor.dims} vs {lung.dims}")
    if tumor.spacing_mm != lung.spacing_mm:
        raise ValidationError("spacing_mm",
                              f"masks disagree: {tumor.spacing_mm} vs {lung.spacing_mm}")
    if not tumor.bits.any():
        raise EmptyMask("tumor mask has no foreground")
    region = lung.bits | tumor.bits
    border = BinaryMask(bits=boundary_mask(region), spacing_mm=tumor.spacing_mm)
    return min_distance_mm(tumor, border) > params.margin_mm
