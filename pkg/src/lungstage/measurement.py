"""Tumor property extraction across a study: size and structure distances.

Per-slice geometry runs on native-resolution masks.  The measured tumor is
the largest connected component on each slice; satellite components are
counted and surfaced as warnings but never move a measurement (multifocal
disease is out of scope for the rule engine).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .anatomy import ContainmentParams, DiaphragmParams, estimate_diaphragm, is_surrounded_by_lung
from .errors import EmptyMask, NoTumor
from .geometry import (label_components, mask_diameter_endpoints_mm, min_distance_mm,
                       outer_border_mask)
from .ingest import BinaryMask, Study


@dataclass(frozen=True)
class SliceMeasurements:
    """Geometry read off one slice.  Absent structures leave fields None."""

    slice_index: int
    tumor_diameter_mm: Optional[float] = None
    dist_lung_wall_mm: Optional[float] = None
    dist_mediastinum_mm: Optional[float] = None
    dist_diaphragm_mm: Optional[float] = None
    surrounded: Optional[bool] = None
    n_tumor_components: int = 0


@dataclass(frozen=True)
class TumorProperties:
    """Study-level aggregation feeding the staging rules."""

    size_mm: float
    in_plane_max_mm: float
    depth_mm: float
    dist_lung_wall_mm: Optional[float]
    dist_mediastinum_mm: Optional[float]
    dist_diaphragm_mm: Optional[float]
    invades_mediastinum: bool
    invades_diaphragm: bool
    surrounded_by_lung: bool
    n_tumor_slices: int
    warnings: tuple = field(default_factory=tuple)


def measure_slice(tumor: BinaryMask, lung: Optional[BinaryMask] = None,
                  mediastinum: Optional[BinaryMask] = None, slice_index: int = 0,
                  diaphragm_params: DiaphragmParams = DiaphragmParams(),
                  containment_params: ContainmentParams = ContainmentParams()
                  ) -> SliceMeasurements:
    """Measure one slice: diameter plus minimum separations to structures.

    The lung wall is the outer border of the lung mask (hole borders
    excluded); the diaphragm is the estimated inferior band.  Structures
    whose mask is missing or empty yield None fields.
    """
    labels, n_comps = label_components(tumor.bits)
    if n_comps == 0:
        raise EmptyMask("tumor mask has no foreground")
    largest = BinaryMask(bits=labels == 1, spacing_mm=tumor.spacing_mm)
    diameter, _, _ = mask_diameter_endpoints_mm(largest.bits, largest.spacing_mm)

    dist_wall = dist_media = dist_dia = None
    surrounded = None
    if lung is not None and lung.bits.any():
        wall = BinaryMask(bits=outer_border_mask(lung.bits), spacing_mm=lung.spacing_mm)
        dist_wall = min_distance_mm(largest, wall)
        dia = estimate_diaphragm(lung, diaphragm_params)
        dist_dia = min_distance_mm(largest, dia)
        surrounded = is_surrounded_by_lung(largest, lung, containment_params)
    if mediastinum is not None and mediastinum.bits.any():
        dist_media = min_distance_mm(largest, mediastinum)

    return SliceMeasurements(
        slice_index=slice_index,
        tumor_diameter_mm=diameter,
        dist_lung_wall_mm=dist_wall,
        dist_mediastinum_mm=dist_media,
        dist_diaphragm_mm=dist_dia,
        surrounded=surrounded,
        n_tumor_components=n_comps,
    )


def tumor_depth_mm(study: Study) -> float:
    """Count of tumor-bearing slices times slice thickness.

    The count is literal; tumor slices need not be contiguous.
    """
    return len(study.tumor_slices()) * study.slice_thickness_mm


def measure_study(study: Study,
                  diaphragm_params: DiaphragmParams = DiaphragmParams(),
                  containment_params: ContainmentParams = ContainmentParams(),
                  invasion_threshold_mm: float = 0.0
                  ) -> tuple[TumorProperties, list[SliceMeasurements]]:
    """Per-slice measurements plus their deterministic study-level reduction.

    Study-level distances are minima across slices (the worst case governs
    invasion).  surrounded_by_lung holds only if every tumor-bearing slice
    with a lung mask passes the containment test; with no lung masks at all
    it is false by definition, with a warning.
    """
    tumor_slices = study.tumor_slices()
    if not tumor_slices:
        raise NoTumor(f"study {study.manifest.study_id!r} has no tumor foreground")

    warnings: list[str] = []
    per_slice: list[SliceMeasurements] = []
    for idx in tumor_slices:
        per_slice.append(measure_slice(
            tumor=study.mask("tumor", idx),
            lung=study.mask("lung", idx),
            mediastinum=study.mask("mediastinum", idx),
            slice_index=idx,
            diaphragm_params=diaphragm_params,
            containment_params=containment_params,
        ))

    def reduce_min(values: list[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return min(present) if present else None

    in_plane_max = max(m.tumor_diameter_mm for m in per_slice)
    depth = tumor_depth_mm(study)
    size = max(in_plane_max, depth)
    dist_wall = reduce_min([m.dist_lung_wall_mm for m in per_slice])
    dist_media = reduce_min([m.dist_mediastinum_mm for m in per_slice])
    dist_dia = reduce_min([m.dist_diaphragm_mm for m in per_slice])

    judged = [m.surrounded for m in per_slice if m.surrounded is not None]
    if judged:
        surrounded = all(judged)
    else:
        surrounded = False
        warnings.append("no lung mask on any tumor-bearing slice; "
                        "surrounded_by_lung defaults to false")
    if dist_media is None:
        warnings.append("no mediastinum mask on any tumor-bearing slice; "
                        "mediastinal invasion defaults to false")
    if dist_dia is None:
        warnings.append("no lung mask, hence no diaphragm estimate; "
                        "diaphragm invasion defaults to false")
    satellites = sorted(m.slice_index for m in per_slice if m.n_tumor_components > 1)
    if satellites:
        warnings.append("satellite tumor components ignored on slices "
                        f"{satellites}; only the largest component is measured")

    props = TumorProperties(
        size_mm=size,
        in_plane_max_mm=in_plane_max,
        depth_mm=depth,
        dist_lung_wall_mm=dist_wall,
        dist_mediastinum_mm=dist_media,
        dist_diaphragm_mm=dist_dia,
        invades_mediastinum=dist_media is not None and dist_media <= invasion_threshold_mm,
        invades_diaphragm=dist_dia is not None and dist_dia <= invasion_threshold_mm,
        surrounded_by_lung=surrounded,
        n_tumor_slices=len(tumor_slices),
        warnings=tuple(warnings),
    )
    return props, per_slice


def extract_properties(study: Study,
                       diaphragm_params: DiaphragmParams = DiaphragmParams(),
                       containment_params: ContainmentParams = ContainmentParams(),
                       invasion_threshold_mm: float = 0.0) -> TumorProperties:
    """Study-level tumor properties; see measure_study for the slice detail."""
    props, _ = measure_study(study, diaphragm_params, containment_params,
                             invasion_threshold_mm)
    return props


def properties_to_dict(props: TumorProperties) -> dict:
    return {
        "size_mm": props.size_mm,
        "in_plane_max_mm": props.in_plane_max_mm,
        "depth_mm": props.depth_mm,
        "dist_lung_wall_mm": props.dist_lung_wall_mm,
        "dist_mediastinum_mm": props.dist_mediastinum_mm,
        "dist_diaphragm_mm": props.dist_diaphragm_mm,
        "invades_mediastinum": props.invades_mediastinum,
        "invades_diaphragm": props.invades_diaphragm,
        "surrounded_by_lung": props.surrounded_by_lung,
        "n_tumor_slices": props.n_tumor_slices,
        "warnings": list(props.warnings),
    }


def properties_from_dict(doc: dict) -> TumorProperties:
    return TumorProperties(
        size_mm=doc["size_mm"],
        in_plane_max_mm=doc["in_plane_max_mm"],
        depth_mm=doc["depth_mm"],
        dist_lung_wall_mm=doc["dist_lung_wall_mm"],
        dist_mediastinum_mm=doc["dist_mediastinum_mm"],
        dist_diaphragm_mm=doc["dist_diaphragm_mm"],
        invades_mediastinum=doc["invades_mediastinum"],
        invades_diaphragm=doc["invades_diaphragm"],
        surrounded_by_lung=doc["surrounded_by_lung"],
        n_tumor_slices=doc["n_tumor_slices"],
        warnings=tuple(doc.get("warnings", ())),
    )


def slice_measurements_to_dict(m: SliceMeasurements) -> dict:
    return {
        "slice_index": m.slice_index,
        "tumor_diameter_mm": m.tumor_diameter_mm,
        "dist_lung_wall_mm": m.dist_lung_wall_mm,
        "dist_mediastinum_mm": m.dist_mediastinum_mm,
        "dist_diaphragm_mm": m.dist_diaphragm_mm,
        "surrounded": m.surrounded,
        "n_tumor_components": m.n_tumor_components,
    }


def slice_measurements_from_dict(doc: dict) -> SliceMeasurements:
    return SliceMeasurements(
        slice_index=doc["slice_index"],
        tumor_diameter_mm=doc["tumor_diameter_mm"],
        dist_lung_wall_mm=doc["dist_lung_wall_mm"],
        dist_mediastinum_mm=doc["dist_mediastinum_mm"],
        dist_diaphragm_mm=doc["dist_diaphragm_mm"],
        surrounded=doc["surrounded"],
        n_tumor_components=doc["n_tumor_components"],
    )
