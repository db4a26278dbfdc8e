"""Figure rendering: per-slice staging overlays and evaluation plots.

Overlays draw structure outlines over the CT (when present) and dash in the
minimum-separation segments that drive the stage: green to the lung wall,
red to the mediastinum, blue to the diaphragm band, plus the measured
largest in-plane extent in white.  Rendering is read-only with respect to
measurement: it recomputes the same geometry the pipeline used.
"""

from __future__ import annotations

import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .anatomy import DiaphragmParams, estimate_diaphragm  # noqa: E402
from .geometry import (extract_contours, largest_component_bits,  # noqa: E402
                       mask_diameter_endpoints_mm, min_distance_endpoints_mm,
                       outer_border_mask)
from .ingest import BinaryMask, Study  # noqa: E402
from .metrics import StageReportTable  # noqa: E402
from .preprocess import WindowSpec, load_hu, window_hu  # noqa: E402

_STRUCTURE_COLORS = {"lung": "tab:green", "mediastinum": "tab:red", "tumor": "gold"}
_LINE_COLORS = {"lung_wall": "tab:green", "mediastinum": "tab:red", "diaphragm": "tab:blue"}


def _plot_mask_outline(ax, bits: np.ndarray, spacing_mm, color: str, label: str,
                       linewidth: float = 1.2):
    mask = BinaryMask(bits=bits, spacing_mm=spacing_mm)
    first = True
    for contour in extract_contours(mask):
        pts = np.asarray(contour.points + (contour.points[0],), dtype=float)
        ax.plot(pts[:, 1], pts[:, 0], color=color, linewidth=linewidth,
                label=label if first else None)
        first = False


def _plot_distance(ax, endpoints: tuple, color: str, label: str, dist_mm: float):
    (r1, c1), (r2, c2) = endpoints
    ax.plot([c1, c2], [r1, r2], color=color, linestyle="--", linewidth=1.4,
            label=f"{label} {dist_mm:.1f} mm")
    ax.plot([c1, c2], [r1, r2], color=color, marker=".", markersize=4, linestyle="none")


def render_slice_overlay(study: Study, slice_index: int, out_path: str,
                         diaphragm_params: DiaphragmParams = DiaphragmParams(),
                         window: WindowSpec = WindowSpec()) -> str:
    """Write one slice overlay PNG and return its path."""
    rs, cs = study.spacing_mm
    h, w = study.manifest.source_dims
    entry = study.manifest.slices[slice_index]

    fig, ax = plt.subplots(figsize=(max(4.0, w / 72.0), max(4.0, h / 72.0)))
    if entry.ct_image_path is not None:
        img = window_hu(load_hu(entry.ct_image_path), window, spacing_mm=(rs, cs))
        ax.imshow(img.values, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
    else:
        ax.imshow(np.zeros((h, w)), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    ax.set_aspect(rs / cs)

    lung = study.mask("lung", slice_index)
    media = study.mask("mediastinum", slice_index)
    tumor = study.mask("tumor", slice_index)
    if lung is not None and lung.bits.any():
        _plot_mask_outline(ax, lung.bits, (rs, cs), _STRUCTURE_COLORS["lung"], "lung")
    if media is not None and media.bits.any():
        _plot_mask_outline(ax, media.bits, (rs, cs), _STRUCTURE_COLORS["mediastinum"],
                           "mediastinum")

    if tumor is not None and tumor.bits.any():
        _plot_mask_outline(ax, tumor.bits, (rs, cs), _STRUCTURE_COLORS["tumor"], "tumor")
        largest = BinaryMask(bits=largest_component_bits(tumor.bits), spacing_mm=(rs, cs))
        diam, p, q = mask_diameter_endpoints_mm(largest.bits, (rs, cs))
        ax.plot([p[1], q[1]], [p[0], q[0]], color="white", linestyle="--",
                linewidth=1.0, label=f"extent {diam:.1f} mm")

        if lung is not None and lung.bits.any():
            wall = BinaryMask(bits=outer_border_mask(lung.bits), spacing_mm=(rs, cs))
            d, pa, pb = min_distance_endpoints_mm(largest, wall)
            _plot_distance(ax, (pa, pb), _LINE_COLORS["lung_wall"], "wall", d)
            dia = estimate_diaphragm(lung, diaphragm_params)
            rr, cc = np.nonzero(dia.bits)
            ax.plot(cc, rr, color=_LINE_COLORS["diaphragm"], marker=".",
                    markersize=2, linestyle="none", label="diaphragm band")
            d, pa, pb = min_distance_endpoints_mm(largest, dia)
            _plot_distance(ax, (pa, pb), _LINE_COLORS["diaphragm"], "diaphragm", d)
        if media is not None and media.bits.any():
            d, pa, pb = min_distance_endpoints_mm(largest, media)
            _plot_distance(ax, (pa, pb), _LINE_COLORS["mediastinum"], "mediastinum", d)

    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_title(f"{study.manifest.study_id} slice {slice_index}")
    ax.legend(loc="upper right", fontsize=7, framealpha=0.6)
    fig.savefig(out_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_study_overlays(study: Study, out_dir: str,
                          diaphragm_params: DiaphragmParams = DiaphragmParams(),
                          tumor_slices_only: bool = True) -> list[str]:
    """Render overlays for a study into out_dir; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    indices = study.tumor_slices() if tumor_slices_only else list(range(study.n_slices))
    paths = []
    for idx in indices:
        out = os.path.join(out_dir, f"overlay_slice{idx:03d}.png")
        paths.append(render_slice_overlay(study, idx, out, diaphragm_params))
    return paths


def render_confusion_matrix(table: StageReportTable, out_path: str,
                            title: Optional[str] = None) -> str:
    """Write a stage confusion-matrix figure (rows truth, columns predicted)."""
    n = len(table.classes)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(table.confusion, cmap="Blues")
    peak = table.confusion.max() if table.confusion.size else 0
    for i in range(n):
        for j in range(n):
            v = int(table.confusion[i, j])
            ax.text(j, i, str(v), ha="center", va="center", fontsize=9,
                    color="white" if peak and v > peak / 2 else "black")
    ax.set_xticks(range(n), table.classes)
    ax.set_yticks(range(n), table.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    ax.set_title(title or f"stage confusion (accuracy {table.accuracy:.3f})")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(out_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return out_path
