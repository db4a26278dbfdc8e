"""Synthetic staging studies with exhaustively computed ground truth.

The generator rasterizes simple parametric anatomy (elliptical lungs, a
rectangular mediastinum strip, an elliptical tumor, optional satellites) into
ordinary mask stacks.  The truth side never touches the geometry module: it
flood-fills components, measures every distance by scanning all pixel pairs,
and applies the staging rules literally.  Both sides share one documented
distance expression, sqrt(((dr)*rs)**2 + ((dc)*cs)**2) over integer pixel
index differences, so agreement is exact rather than approximate.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .anatomy import ContainmentParams, DiaphragmParams
from .errors import GeometryInfeasible, NoTumor, ValidationError
from .ingest import BinaryMask, SliceEntry, Study, StudyManifest, manifest_to_dict, save_mask
from .staging import StagingRules, TStage

_STRUCTURES = ("lung", "mediastinum", "tumor")


# ---------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class Ellipse:
    """Filled ellipse in pixel units: ((r-cr)/ar)^2 + ((c-cc)/ac)^2 <= 1."""

    center_rc: tuple[float, float]
    radii_rc: tuple[float, float]

    def __post_init__(self):
        ar, ac = self.radii_rc
        if not (ar > 0 and ac > 0):
            raise ValidationError("radii_rc", f"must be > 0, got {self.radii_rc}")
        object.__setattr__(self, "center_rc", (float(self.center_rc[0]), float(self.center_rc[1])))
        object.__setattr__(self, "radii_rc", (float(ar), float(ac)))


@dataclass(frozen=True)
class Strip:
    """Axis-aligned rectangle in pixel units, bounds inclusive."""

    row_range: tuple[int, int]
    col_range: tuple[int, int]

    def __post_init__(self):
        r0, r1 = self.row_range
        c0, c1 = self.col_range
        if r0 > r1 or c0 > c1:
            raise ValidationError("strip", f"ranges must be lo <= hi, got {self}")
        object.__setattr__(self, "row_range", (int(r0), int(r1)))
        object.__setattr__(self, "col_range", (int(c0), int(c1)))


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of one synthetic study.

    Slice ranges are inclusive (lo, hi) pairs; None means every slice.  A
    structure with a None geometry is absent from the study entirely.
    Satellites render on the tumor's slice range.
    """

    dims: tuple[int, int] = (56, 56)
    pixel_spacing_mm: tuple[float, float] = (1.0, 1.0)
    slice_thickness_mm: float = 2.5
    n_slices: int = 5
    study_id: str = "phantom"
    lungs: tuple = (Ellipse((27.0, 15.0), (18.0, 11.0)), Ellipse((27.0, 41.0), (18.0, 11.0)))
    lung_slices: Optional[tuple[int, int]] = None
    mediastinum: Optional[Strip] = Strip((8, 46), (26, 30))
    mediastinum_slices: Optional[tuple[int, int]] = None
    tumor: Ellipse = Ellipse((27.0, 15.0), (5.0, 5.0))
    tumor_slices: Optional[tuple[int, int]] = None
    satellites: tuple = ()
    seed: Optional[int] = None  # provenance of randomized specs only

    def __post_init__(self):
        h, w = int(self.dims[0]), int(self.dims[1])
        if h < 4 or w < 4:
            raise ValidationError("dims", f"grid too small: {self.dims}")
        object.__setattr__(self, "dims", (h, w))
        rs, cs = self.pixel_spacing_mm
        if not (rs > 0 and cs > 0):
            raise ValidationError("pixel_spacing_mm", f"must be > 0, got {self.pixel_spacing_mm}")
        object.__setattr__(self, "pixel_spacing_mm", (float(rs), float(cs)))
        if not self.slice_thickness_mm > 0:
            raise ValidationError("slice_thickness_mm",
                                  f"must be > 0, got {self.slice_thickness_mm}")
        if self.n_slices < 1:
            raise ValidationError("n_slices", f"must be >= 1, got {self.n_slices}")
        for name in ("lung_slices", "mediastinum_slices", "tumor_slices"):
            rng = getattr(self, name)
            if rng is None:
                continue
            lo, hi = int(rng[0]), int(rng[1])
            if not (0 <= lo <= hi <= self.n_slices - 1):
                raise ValidationError(name, f"range {rng} outside slices 0..{self.n_slices - 1}")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "lungs", tuple(self.lungs))
        object.__setattr__(self, "satellites", tuple(self.satellites))
        (cr, cc), (ar, ac) = self.tumor.center_rc, self.tumor.radii_rc
        if cr - ar < 0 or cr + ar > h - 1 or cc - ac < 0 or cc + ac > w - 1:
            raise GeometryInfeasible(
                f"tumor ellipse {self.tumor} does not fit inside dims {self.dims}")


def spec_to_dict(spec: PhantomSpec) -> dict:
    def ell(e: Optional[Ellipse]):
        return None if e is None else {"center_rc": list(e.center_rc), "radii_rc": list(e.radii_rc)}

    return {
        "dims": list(spec.dims),
        "pixel_spacing_mm": list(spec.pixel_spacing_mm),
        "slice_thickness_mm": spec.slice_thickness_mm,
        "n_slices": spec.n_slices,
        "study_id": spec.study_id,
        "lungs": [ell(e) for e in spec.lungs],
        "lung_slices": None if spec.lung_slices is None else list(spec.lung_slices),
        "mediastinum": None if spec.mediastinum is None else {
            "row_range": list(spec.mediastinum.row_range),
            "col_range": list(spec.mediastinum.col_range)},
        "mediastinum_slices": (None if spec.mediastinum_slices is None
                               else list(spec.mediastinum_slices)),
        "tumor": ell(spec.tumor),
        "tumor_slices": None if spec.tumor_slices is None else list(spec.tumor_slices),
        "satellites": [ell(e) for e in spec.satellites],
        "seed": spec.seed,
    }


def spec_from_dict(doc: dict) -> PhantomSpec:
    def ell(d):
        return None if d is None else Ellipse(tuple(d["center_rc"]), tuple(d["radii_rc"]))

    def rng(v):
        return None if v is None else (int(v[0]), int(v[1]))

    return PhantomSpec(
        dims=tuple(doc.get("dims", (56, 56))),
        pixel_spacing_mm=tuple(doc.get("pixel_spacing_mm", (1.0, 1.0))),
        slice_thickness_mm=doc.get("slice_thickness_mm", 2.5),
        n_slices=doc.get("n_slices", 5),
        study_id=doc.get("study_id", "phantom"),
        lungs=tuple(ell(e) for e in doc.get("lungs", [])),
        lung_slices=rng(doc.get("lung_slices")),
        mediastinum=(None if doc.get("mediastinum") is None
                     else Strip(tuple(doc["mediastinum"]["row_range"]),
                                tuple(doc["mediastinum"]["col_range"]))),
        mediastinum_slices=rng(doc.get("mediastinum_slices")),
        tumor=ell(doc["tumor"]),
        tumor_slices=rng(doc.get("tumor_slices")),
        satellites=tuple(ell(e) for e in doc.get("satellites", [])),
        seed=doc.get("seed"),
    )


# ---------------------------------------------------------------------------
# rasterization


def _ellipse_bits(dims: tuple[int, int], e: Ellipse) -> np.ndarray:
    rr = np.arange(dims[0], dtype=float)[:, None]
    cc = np.arange(dims[1], dtype=float)[None, :]
    (cr, c0), (ar, ac) = e.center_rc, e.radii_rc
    return ((rr - cr) / ar) ** 2 + ((cc - c0) / ac) ** 2 <= 1.0


def _strip_bits(dims: tuple[int, int], s: Strip) -> np.ndarray:
    out = np.zeros(dims, dtype=bool)
    r0, r1 = max(0, s.row_range[0]), min(dims[0] - 1, s.row_range[1])
    c0, c1 = max(0, s.col_range[0]), min(dims[1] - 1, s.col_range[1])
    if r0 <= r1 and c0 <= c1:
        out[r0:r1 + 1, c0:c1 + 1] = True
    return out


def _covers(rng: Optional[tuple[int, int]], idx: int) -> bool:
    return rng is None or (rng[0] <= idx <= rng[1])


def _render_structures(spec: PhantomSpec) -> dict[str, Optional[np.ndarray]]:
    lung = None
    if spec.lungs:
        lung = np.zeros(spec.dims, dtype=bool)
        for e in spec.lungs:
            lung |= _ellipse_bits(spec.dims, e)
    media = None if spec.mediastinum is None else _strip_bits(spec.dims, spec.mediastinum)
    tumor = _ellipse_bits(spec.dims, spec.tumor)
    for e in spec.satellites:
        tumor = tumor | _ellipse_bits(spec.dims, e)
    return {"lung": lung, "mediastinum": media, "tumor": tumor}


def _hu_grid(spec: PhantomSpec, bits: dict[str, Optional[np.ndarray]]) -> np.ndarray:
    hu = np.full(spec.dims, -1000.0)
    if bits["lung"] is not None:
        hu[bits["lung"]] = -800.0
    if bits["mediastinum"] is not None:
        hu[bits["mediastinum"]] = 40.0
    hu[bits["tumor"]] = 60.0
    return hu


# ---------------------------------------------------------------------------
# truth


@dataclass(frozen=True)
class PhantomTruth:
    """Ground truth computed by exhaustive pixel enumeration."""

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
    stage: TStage


def _dilate(bits: np.ndarray, diagonal: bool) -> np.ndarray:
    out = np.zeros_like(bits)
    out[1:, :] |= bits[:-1, :]
    out[:-1, :] |= bits[1:, :]
    out[:, 1:] |= bits[:, :-1]
    out[:, :-1] |= bits[:, 1:]
    if diagonal:
        out[1:, 1:] |= bits[:-1, :-1]
        out[1:, :-1] |= bits[:-1, 1:]
        out[:-1, 1:] |= bits[1:, :-1]
        out[:-1, :-1] |= bits[1:, 1:]
    return out


def _flood(bits: np.ndarray, seed: np.ndarray, diagonal: bool) -> np.ndarray:
    region = seed & bits
    count = int(np.count_nonzero(region))
    while True:
        region = region | (_dilate(region, diagonal) & bits)
        grown = int(np.count_nonzero(region))
        if grown == count:
            return region
        count = grown


def _flood_components(bits: np.ndarray) -> list[np.ndarray]:
    """8-connected components, largest first, ties by first pixel scan order."""
    comps = []
    remaining = bits.copy()
    while remaining.any():
        seed = np.zeros_like(remaining)
        seed.flat[int(np.argmax(remaining))] = True
        comp = _flood(remaining, seed, diagonal=True)
        comps.append(comp)
        remaining &= ~comp
    comps.sort(key=lambda c: -int(np.count_nonzero(c)))  # stable: scan order breaks ties
    return comps


def _outer_wall(bits: np.ndarray) -> np.ndarray:
    """Pixels of the region 4-adjacent to the border-connected background."""
    padded = np.pad(bits, 1, constant_values=False)
    bg = ~padded
    seed = np.zeros_like(bg)
    seed[0, :] = seed[-1, :] = True
    seed[:, 0] = seed[:, -1] = True
    outside = _flood(bg, seed, diagonal=False)
    return (padded & _dilate(outside, diagonal=False))[1:-1, 1:-1]


def _region_border(bits: np.ndarray) -> np.ndarray:
    """Pixels of the region with a 4-neighbor outside it (holes and edge count)."""
    padded = np.pad(bits, 1, constant_values=False)
    return (padded & _dilate(~padded, diagonal=False))[1:-1, 1:-1]


def _pairs_min_mm(coords_a: np.ndarray, coords_b: np.ndarray, spacing) -> float:
    rs, cs = float(spacing[0]), float(spacing[1])
    best = math.inf
    block = 1024
    for i0 in range(0, coords_a.shape[0], block):
        asub = coords_a[i0:i0 + block]
        for j0 in range(0, coords_b.shape[0], block):
            bsub = coords_b[j0:j0 + block]
            dr = (asub[:, 0][:, None] - bsub[:, 0][None, :]).astype(float) * rs
            dc = (asub[:, 1][:, None] - bsub[:, 1][None, :]).astype(float) * cs
            val = float(np.min(dr * dr + dc * dc))
            if val < best:
                best = val
    return math.sqrt(best)


def _pairs_max_mm(coords: np.ndarray, spacing) -> float:
    rs, cs = float(spacing[0]), float(spacing[1])
    best = -1.0
    block = 1024
    for i0 in range(0, coords.shape[0], block):
        asub = coords[i0:i0 + block]
        for j0 in range(0, coords.shape[0], block):
            bsub = coords[j0:j0 + block]
            dr = (asub[:, 0][:, None] - bsub[:, 0][None, :]).astype(float) * rs
            dc = (asub[:, 1][:, None] - bsub[:, 1][None, :]).astype(float) * cs
            val = float(np.max(dr * dr + dc * dc))
            if val > best:
                best = val
    return math.sqrt(best)


def _oracle_diaphragm(lung_bits: np.ndarray, params: DiaphragmParams) -> np.ndarray:
    """Re-derivation of the inferior band from the documented rule."""
    out = np.zeros_like(lung_bits)
    comps = _flood_components(lung_bits)
    for comp in comps[:2]:
        rows = np.flatnonzero(comp.any(axis=1))
        r_low = int(rows[-1])
        height = r_low - int(rows[0]) + 1
        band_rows = max(1, math.floor(params.band_fraction * height + 0.5))
        for c in range(comp.shape[1]):
            col_rows = np.flatnonzero(comp[:, c])
            if col_rows.size == 0:
                continue
            b = int(col_rows[-1])
            if b >= r_low - band_rows + 1:
                out[b, c] = True
    return out


def _structure_bits(study: Study, structure: str, idx: int) -> Optional[np.ndarray]:
    mask = study.mask(structure, idx)
    if mask is None or not mask.bits.any():
        return None
    return mask.bits


def oracle_properties(study: Study,
                      diaphragm_params: DiaphragmParams = DiaphragmParams(),
                      containment_params: ContainmentParams = ContainmentParams(),
                      invasion_threshold_mm: float = 0.0) -> PhantomTruth:
    """Measure a study by exhaustive enumeration and stage it literally.

    No contour tracing, no convex hulls, no boundary restriction: components
    come from flood fill, distances from all-pairs scans over complete pixel
    sets.  Intended as the verification oracle for the fast pipeline.
    """
    spacing = study.spacing_mm
    tumor_idx = [i for i in range(study.n_slices)
                 if _structure_bits(study, "tumor", i) is not None]
    if not tumor_idx:
        raise NoTumor(f"study {study.manifest.study_id!r} has no tumor foreground")

    diameters: list[float] = []
    wall_d: list[float] = []
    med_d: list[float] = []
    dia_d: list[float] = []
    surrounded_votes: list[bool] = []
    for idx in tumor_idx:
        tumor_bits = _structure_bits(study, "tumor", idx)
        largest = _flood_components(tumor_bits)[0]
        t_coords = np.argwhere(largest)
        diameters.append(_pairs_max_mm(t_coords, spacing))

        lung_bits = _structure_bits(study, "lung", idx)
        if lung_bits is not None:
            wall = _outer_wall(lung_bits)
            wall_d.append(_pairs_min_mm(t_coords, np.argwhere(wall), spacing))
            dia = _oracle_diaphragm(lung_bits, diaphragm_params)
            dia_d.append(_pairs_min_mm(t_coords, np.argwhere(dia), spacing))
            border = _region_border(lung_bits | largest)
            sep = _pairs_min_mm(t_coords, np.argwhere(border), spacing)
            surrounded_votes.append(sep > containment_params.margin_mm)

        med_bits = _structure_bits(study, "mediastinum", idx)
        if med_bits is not None:
            med_d.append(_pairs_min_mm(t_coords, np.argwhere(med_bits), spacing))

    in_plane = max(diameters)
    depth = len(tumor_idx) * study.slice_thickness_mm
    size = max(in_plane, depth)
    dist_wall = min(wall_d) if wall_d else None
    dist_med = min(med_d) if med_d else None
    dist_dia = min(dia_d) if dia_d else None
    surrounded = all(surrounded_votes) if surrounded_votes else False
    invades_med = dist_med is not None and dist_med <= invasion_threshold_mm
    invades_dia = dist_dia is not None and dist_dia <= invasion_threshold_mm

    return PhantomTruth(
        size_mm=size,
        in_plane_max_mm=in_plane,
        depth_mm=depth,
        dist_lung_wall_mm=dist_wall,
        dist_mediastinum_mm=dist_med,
        dist_diaphragm_mm=dist_dia,
        invades_mediastinum=invades_med,
        invades_diaphragm=invades_dia,
        surrounded_by_lung=surrounded,
        n_tumor_slices=len(tumor_idx),
        stage=TStage.T1,  # placeholder; caller-facing entry points overwrite
    )


def _literal_stage(truth: PhantomTruth, rules: StagingRules) -> TStage:
    invaded = False
    if "mediastinum" in rules.invading_structures and truth.invades_mediastinum:
        invaded = True
    if "diaphragm" in rules.invading_structures and truth.invades_diaphragm:
        invaded = True
    if "lung_wall" in rules.invading_structures:
        if (truth.dist_lung_wall_mm is not None
                and truth.dist_lung_wall_mm <= rules.invasion_threshold_mm):
            invaded = True
    if invaded:
        return TStage.T4
    if truth.size_mm > rules.t3_max_mm:
        return TStage.T4
    if truth.size_mm > rules.t2_max_mm:
        return TStage.T3
    if truth.size_mm > rules.t1_max_mm:
        return TStage.T2
    if truth.surrounded_by_lung:
        return TStage.T1
    return rules.small_unsurrounded_stage


def oracle_truth(study: Study, rules: StagingRules = StagingRules(),
                 diaphragm_params: DiaphragmParams = DiaphragmParams(),
                 containment_params: ContainmentParams = ContainmentParams()) -> PhantomTruth:
    """Full brute-force truth for a study, staged under the given rules."""
    truth = oracle_properties(study, diaphragm_params, containment_params,
                              invasion_threshold_mm=rules.invasion_threshold_mm)
    return dataclasses.replace(truth, stage=_literal_stage(truth, rules))


def oracle_stage(study: Study, rules: StagingRules = StagingRules(),
                 diaphragm_params: DiaphragmParams = DiaphragmParams(),
                 containment_params: ContainmentParams = ContainmentParams()) -> TStage:
    return oracle_truth(study, rules, diaphragm_params, containment_params).stage


# ---------------------------------------------------------------------------
# generation


def _save_hu_png(hu: np.ndarray, path: str):
    # two's-complement storage in an unsigned 16-bit PNG
    arr = np.asarray(hu)
    enc = np.where(arr < 0, arr + 65536, arr)
    Image.fromarray(enc.astype(np.uint16)).save(path, format="PNG")


def generate_phantom(spec: PhantomSpec, out_dir: Optional[str] = None,
                     rules: StagingRules = StagingRules(),
                     diaphragm_params: DiaphragmParams = DiaphragmParams(),
                     containment_params: ContainmentParams = ContainmentParams(),
                     with_truth: bool = True,
                     write_ct: bool = True
                     ) -> tuple[Study, Optional[PhantomTruth]]:
    """Rasterize a spec into a Study, optionally writing it as PNGs + manifest.

    Structure rasters are constant across their slice range.  Truth comes from
    oracle_truth; pass with_truth=False to skip the brute-force pass (useful
    when generating large grids purely as pipeline input).
    """
    rendered = _render_structures(spec)
    spacing = spec.pixel_spacing_mm

    present_on: dict[str, list[int]] = {}
    ranges = {"lung": spec.lung_slices, "mediastinum": spec.mediastinum_slices,
              "tumor": spec.tumor_slices}
    for structure in _STRUCTURES:
        if rendered[structure] is None:
            present_on[structure] = []
        else:
            present_on[structure] = [i for i in range(spec.n_slices)
                                     if _covers(ranges[structure], i)]

    paths: dict[tuple[str, int], str] = {}
    ct_paths: dict[int, str] = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for structure in _STRUCTURES:
            for idx in present_on[structure]:
                p = os.path.join(out_dir, f"slice{idx:03d}_{structure}.png")
                save_mask(BinaryMask(bits=rendered[structure], spacing_mm=spacing), p)
                paths[(structure, idx)] = p
        if write_ct:
            hu = _hu_grid(spec, rendered)
            for idx in range(spec.n_slices):
                p = os.path.join(out_dir, f"slice{idx:03d}_ct.png")
                _save_hu_png(hu, p)
                ct_paths[idx] = p

    entries = tuple(
        SliceEntry(
            index=idx,
            lung_mask_path=paths.get(("lung", idx)),
            mediastinum_mask_path=paths.get(("mediastinum", idx)),
            tumor_mask_path=paths.get(("tumor", idx)),
            ct_image_path=ct_paths.get(idx),
        )
        for idx in range(spec.n_slices)
    )
    manifest = StudyManifest(
        study_id=spec.study_id,
        slices=entries,
        pixel_spacing_mm=spacing,
        slice_thickness_mm=float(spec.slice_thickness_mm),
        source_dims=spec.dims,
    )
    masks = {
        structure: {idx: BinaryMask(bits=rendered[structure].copy(), spacing_mm=spacing)
                    for idx in present_on[structure]}
        for structure in _STRUCTURES if present_on[structure]
    }
    study = Study(manifest=manifest, masks=masks)

    truth = None
    if with_truth:
        truth = oracle_truth(study, rules, diaphragm_params, containment_params)

    if out_dir is not None:
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fp:
            json.dump(manifest_to_dict(manifest, base_dir=out_dir), fp, indent=2)
            fp.write("\n")
        if truth is not None:
            with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fp:
                json.dump(truth_to_dict(truth, spec), fp, indent=2)
                fp.write("\n")
    return study, truth


def truth_to_dict(truth: PhantomTruth, spec: Optional[PhantomSpec] = None) -> dict:
    doc = {
        "size_mm": truth.size_mm,
        "in_plane_max_mm": truth.in_plane_max_mm,
        "depth_mm": truth.depth_mm,
        "dist_lung_wall_mm": truth.dist_lung_wall_mm,
        "dist_mediastinum_mm": truth.dist_mediastinum_mm,
        "dist_diaphragm_mm": truth.dist_diaphragm_mm,
        "invades_mediastinum": truth.invades_mediastinum,
        "invades_diaphragm": truth.invades_diaphragm,
        "surrounded_by_lung": truth.surrounded_by_lung,
        "n_tumor_slices": truth.n_tumor_slices,
        "stage": truth.stage.value,
    }
    if spec is not None:
        doc["spec"] = spec_to_dict(spec)
    return doc


# ---------------------------------------------------------------------------
# randomized specs


def _rand_range(rng: np.random.Generator, n: int) -> tuple[int, int]:
    lo = int(rng.integers(0, n))
    hi = int(rng.integers(lo, n))
    return lo, hi


def random_phantom_spec(seed: int, dims: tuple[int, int] = (56, 56)) -> PhantomSpec:
    """Randomized spec spanning the staging rule boundaries.

    Coverage by construction: tumor diameters straddling each size threshold
    within a couple of pixels, placements deep in lung / at the lung wall /
    at the mediastinum / at the lung base, one or two lungs, occasional
    satellites, and occasional missing structures or partial slice coverage.
    """
    rng = np.random.default_rng(seed)
    h, w = dims
    rs = float(rng.choice([0.5, 0.8, 1.0, 1.5, 2.0, 2.5]))
    cs = float(rng.choice([0.5, 0.8, 1.0, 1.5, 2.0, 2.5]))
    thickness = float(rng.choice([1.0, 2.5, 5.0, 10.0, 20.0],
                                 p=[0.30, 0.30, 0.20, 0.12, 0.08]))
    n_slices = int(rng.integers(2, 6))

    two_lungs = bool(rng.random() < 0.75)
    lungs = []
    lung_geoms = []
    for center_c in ((15.0, 41.0) if two_lungs else (15.0,)):
        cr = 27.0 + float(rng.integers(-2, 3))
        cc = center_c + float(rng.integers(-2, 3))
        ar = float(rng.integers(15, 19))
        ac = float(rng.integers(9, 12))
        lungs.append(Ellipse((cr, cc), (ar, ac)))
        lung_geoms.append((cr, cc, ar, ac))

    has_media = rng.random() < 0.85
    media = Strip((8 + int(rng.integers(-3, 4)), 46 + int(rng.integers(-3, 4))),
                  (26 + int(rng.integers(-1, 2)), 30 + int(rng.integers(-1, 2)))) \
        if has_media else None

    # target an in-plane diameter, sometimes right at a rule threshold
    bracket = rng.choice(["t1", "t2", "t3", "t4", "edge30", "edge50", "edge70"],
                         p=[0.26, 0.15, 0.12, 0.08, 0.14, 0.13, 0.12])
    if bracket == "t1":
        target = float(rng.uniform(6.0, 28.0))
    elif bracket == "t2":
        target = float(rng.uniform(32.0, 48.0))
    elif bracket == "t3":
        target = float(rng.uniform(52.0, 68.0))
    elif bracket == "t4":
        target = float(rng.uniform(72.0, 90.0))
    else:
        threshold = {"edge30": 30.0, "edge50": 50.0, "edge70": 70.0}[bracket]
        # land the pixel diameter within two pixels of the threshold
        target = threshold + float(rng.integers(-2, 3)) * 2.0 * cs

    ac_t = max(1, min(17, int(math.floor(target / (2.0 * cs) + 0.5))))
    ar_t = max(1, min(17, int(math.floor(target / (2.0 * rs) + 0.5))))
    if rng.random() < 0.3:  # break in-plane isotropy
        ar_t = max(1, min(17, ar_t + int(rng.integers(-2, 3))))

    mode = rng.choice(["deep", "wall", "media", "dia", "anywhere"],
                      p=[0.40, 0.15, 0.17, 0.17, 0.11])
    cr0, cc0, lar, lac = lung_geoms[int(rng.integers(0, len(lung_geoms)))]
    if mode == "deep":
        tr = cr0 + float(rng.integers(-3, 4))
        tc = cc0 + float(rng.integers(-2, 3))
    elif mode == "wall":
        side = 1.0 if rng.random() < 0.5 else -1.0
        tc = cc0 + side * (lac - ac_t + float(rng.integers(-2, 3)))
        tr = cr0 + float(rng.integers(-4, 5))
    elif mode == "media" and media is not None:
        edge = media.col_range[0] if rng.random() < 0.5 else media.col_range[1]
        side = -1.0 if edge == media.col_range[0] else 1.0
        tc = edge + side * (ac_t + float(rng.integers(-3, 4)))
        tr = cr0 + float(rng.integers(-4, 5))
    elif mode == "dia":
        tr = cr0 + lar - ar_t + float(rng.integers(-3, 4))
        tc = cc0 + float(rng.integers(-3, 4))
    else:
        tr = float(rng.integers(ar_t + 1, h - ar_t - 1)) if ar_t + 1 < h - ar_t - 1 else h / 2.0
        tc = float(rng.integers(ac_t + 1, w - ac_t - 1)) if ac_t + 1 < w - ac_t - 1 else w / 2.0
    # clamp into the grid so the tumor geometry stays feasible
    tr = min(max(tr, float(ar_t)), float(h - 1 - ar_t))
    tc = min(max(tc, float(ac_t)), float(w - 1 - ac_t))

    satellites = []
    if rng.random() < 0.12:
        sr = float(rng.integers(3, h - 3))
        sc = float(rng.integers(3, w - 3))
        satellites.append(Ellipse((sr, sc), (float(rng.integers(1, 3)),
                                             float(rng.integers(1, 3)))))

    has_lung = rng.random() < 0.93
    lung_slices = None
    if has_lung and rng.random() < 0.25:
        lung_slices = _rand_range(rng, n_slices)
    media_slices = None
    if has_media and rng.random() < 0.25:
        media_slices = _rand_range(rng, n_slices)
    tumor_slices = _rand_range(rng, n_slices) if rng.random() < 0.5 else None

    return PhantomSpec(
        dims=dims,
        pixel_spacing_mm=(rs, cs),
        slice_thickness_mm=thickness,
        n_slices=n_slices,
        study_id=f"phantom-{seed}",
        lungs=tuple(lungs) if has_lung else (),
        lung_slices=lung_slices,
        mediastinum=media,
        mediastinum_slices=media_slices if has_media else None,
        tumor=Ellipse((tr, tc), (float(ar_t), float(ac_t))),
        tumor_slices=tumor_slices,
        satellites=tuple(satellites),
        seed=seed,
    )
