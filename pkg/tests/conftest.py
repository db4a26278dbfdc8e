"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from lungstage.ingest import BinaryMask, SliceEntry, Study, StudyManifest


def bits(rows: list[str]) -> np.ndarray:
    """Parse string art into a bool grid: '#' or 'X' foreground, else background."""
    return np.array([[ch in "#X" for ch in row] for row in rows], dtype=bool)


def mask(rows: list[str], spacing=(1.0, 1.0)) -> BinaryMask:
    return BinaryMask(bits=bits(rows), spacing_mm=spacing)


def random_bits(rng: np.random.Generator, shape, density: float) -> np.ndarray:
    return rng.random(shape) < density


def make_study(slices, spacing=(1.0, 1.0), thickness=2.5, study_id="test-study") -> Study:
    """Assemble an in-memory study.

    slices is a list of {structure: bool grid} dicts, one per slice in index
    order; missing or None structures are simply absent from the study.
    """
    dims = None
    masks: dict[str, dict[int, BinaryMask]] = {}
    for idx, entry in enumerate(slices):
        for structure, grid in (entry or {}).items():
            if grid is None:
                continue
            grid = np.asarray(grid, dtype=bool)
            dims = grid.shape if dims is None else dims
            masks.setdefault(structure, {})[idx] = BinaryMask(bits=grid, spacing_mm=spacing)
    manifest = StudyManifest(
        study_id=study_id,
        slices=tuple(SliceEntry(index=i) for i in range(len(slices))),
        pixel_spacing_mm=(float(spacing[0]), float(spacing[1])),
        slice_thickness_mm=float(thickness),
        source_dims=dims if dims is not None else (1, 1),
    )
    return Study(manifest=manifest, masks=masks)
