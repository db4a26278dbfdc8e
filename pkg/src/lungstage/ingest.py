"""Study loading: JSON manifests, 8-bit PNG masks, and in-memory assembly.

A study is a stack of CT slices, each carrying optional binary masks for the
lung, mediastinum, and tumor.  Foreground is any nonzero pixel value, which
tolerates both 1-valued and 255-valued label conventions.  Slice order is the
manifest's ``index`` field, never filename order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DecodeError, DimsMismatch, MissingFile, ParseError, ValidationError

STRUCTURES = ("lung", "mediastinum", "tumor")


@dataclass(eq=False)
class BinaryMask:
    """A raster foreground region with physical pixel spacing."""

    bits: np.ndarray  # 2-D bool, row-major
    spacing_mm: tuple[float, float]  # (row, col) millimeters per pixel

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValidationError("bits", "mask grid must be 2-D")
        rs, cs = self.spacing_mm
        if not (rs > 0 and cs > 0):
            raise ValidationError("spacing_mm", f"components must be > 0, got {self.spacing_mm}")
        self.spacing_mm = (float(rs), float(cs))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.bits.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.spacing_mm == other.spacing_mm and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class SliceEntry:
    index: int
    lung_mask_path: Optional[str] = None
    mediastinum_mask_path: Optional[str] = None
    tumor_mask_path: Optional[str] = None
    ct_image_path: Optional[str] = None

    def path_for(self, structure: str) -> Optional[str]:
        return getattr(self, f"{structure}_mask_path")


@dataclass(frozen=True)
class StudyManifest:
    study_id: str
    slices: tuple[SliceEntry, ...]
    pixel_spacing_mm: tuple[float, float]
    slice_thickness_mm: float
    source_dims: tuple[int, int]  # (rows, cols)


@dataclass(eq=False)
class Study:
    """An assembled, immutable stack of per-slice masks keyed by structure."""

    manifest: StudyManifest
    # structure kind -> {slice index -> mask}; absent structures simply missing
    masks: dict[str, dict[int, BinaryMask]] = field(default_factory=dict)

    @property
    def n_slices(self) -> int:
        return len(self.manifest.slices)

    @property
    def spacing_mm(self) -> tuple[float, float]:
        return self.manifest.pixel_spacing_mm

    @property
    def slice_thickness_mm(self) -> float:
        return self.manifest.slice_thickness_mm

    def mask(self, structure: str, index: int) -> Optional[BinaryMask]:
        return self.masks.get(structure, {}).get(index)

    def tumor_slices(self) -> list[int]:
        """Indices of slices whose tumor mask exists and has foreground."""
        return [i for i, m in sorted(self.masks.get("tumor", {}).items()) if m.bits.any()]


def _require(cond: bool, fieldname: str, message: str):
    if not cond:
        raise ValidationError(fieldname, message)


def _png_dims(path: str) -> tuple[int, int]:
    """(rows, cols) from the PNG header without decoding pixel data."""
    try:
        with Image.open(path) as im:
            w, h = im.size
    except FileNotFoundError:
        raise MissingFile(path)
    except Exception as exc:  # unreadable / not an image
        raise DecodeError(f"{path}: {exc}")
    return (h, w)


def load_manifest(path: str) -> StudyManifest:
    """Parse and validate a study manifest, resolving paths relative to it."""
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with open(path, "r", encoding="utf-8") as fp:
            doc = json.load(fp)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}")
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: manifest document must be a JSON object")

    base = os.path.dirname(os.path.abspath(path))

    try:
        study_id = str(doc["study_id"])
        spacing_raw = doc["pixel_spacing_mm"]
        thickness = float(doc["slice_thickness_mm"])
        dims_raw = doc["source_dims"]
        slices_raw = doc["slices"]
    except KeyError as exc:
        raise ValidationError(str(exc.args[0]), "required manifest key missing")

    _require(len(study_id) > 0, "study_id", "must be non-empty")
    _require(isinstance(spacing_raw, (list, tuple)) and len(spacing_raw) == 2,
             "pixel_spacing_mm", "expected [row_spacing, col_spacing]")
    spacing = (float(spacing_raw[0]), float(spacing_raw[1]))
    _require(spacing[0] > 0 and spacing[1] > 0, "pixel_spacing_mm", f"components must be > 0, got {spacing}")
    _require(thickness > 0, "slice_thickness_mm", f"must be > 0, got {thickness}")
    _require(isinstance(dims_raw, (list, tuple)) and len(dims_raw) == 2,
             "source_dims", "expected [rows, cols]")
    dims = (int(dims_raw[0]), int(dims_raw[1]))
    _require(dims[0] >= 1 and dims[1] >= 1, "source_dims", f"must be >= 1, got {dims}")
    _require(isinstance(slices_raw, list) and len(slices_raw) > 0, "slices", "must be a non-empty list")

    entries: list[SliceEntry] = []
    seen: set[int] = set()
    for pos, raw in enumerate(slices_raw):
        _require(isinstance(raw, dict), f"slices[{pos}]", "each slice entry must be an object")
        _require("index" in raw, f"slices[{pos}].index", "missing")
        idx = int(raw["index"])
        _require(idx >= 0, f"slices[{pos}].index", f"must be >= 0, got {idx}")
        _require(idx not in seen, f"slices[{pos}].index", f"duplicate index {idx}")
        seen.add(idx)

        def resolve(key: str) -> Optional[str]:
            p = raw.get(key)
            if p is None:
                return None
            return os.path.normpath(os.path.join(base, str(p)))

        entries.append(SliceEntry(
            index=idx,
            lung_mask_path=resolve("lung"),
            mediastinum_mask_path=resolve("mediastinum"),
            tumor_mask_path=resolve("tumor"),
            ct_image_path=resolve("ct"),
        ))

    _require(seen == set(range(len(entries))), "slices",
             f"indices must be contiguous from 0, got {sorted(seen)}")
    entries.sort(key=lambda e: e.index)

    # every referenced raster must exist and match source_dims
    for entry in entries:
        for structure in STRUCTURES:
            p = entry.path_for(structure)
            if p is None:
                continue
            fieldname = f"slices[{entry.index}].{structure}"
            if not os.path.isfile(p):
                raise ValidationError(fieldname, f"referenced file not found: {p}")
            got = _png_dims(p)
            _require(got == dims, fieldname, f"raster dims {got} != source_dims {dims}")

    return StudyManifest(
        study_id=study_id,
        slices=tuple(entries),
        pixel_spacing_mm=spacing,
        slice_thickness_mm=thickness,
        source_dims=dims,
    )


def load_mask(path: str, expected_dims: Optional[tuple[int, int]] = None,
              spacing_mm: tuple[float, float] = (1.0, 1.0)) -> BinaryMask:
    """Load an 8-bit single-channel PNG; any value > 0 is foreground."""
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1"):
                raise DecodeError(f"{path}: expected 8-bit single-channel PNG, got mode {im.mode!r}")
            arr = np.asarray(im)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}")
    if expected_dims is not None and arr.shape != tuple(expected_dims):
        raise DimsMismatch(f"{path}: dims {arr.shape} != expected {tuple(expected_dims)}")
    return BinaryMask(bits=arr > 0, spacing_mm=spacing_mm)


def save_mask(mask: BinaryMask, path: str):
    """Write a mask as an 8-bit PNG with foreground 255.  Round-trips exactly."""
    arr = np.where(mask.bits, np.uint8(255), np.uint8(0))
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def assemble_study(manifest: StudyManifest) -> Study:
    """Load every referenced mask into an in-memory Study."""
    masks: dict[str, dict[int, BinaryMask]] = {s: {} for s in STRUCTURES}
    for entry in manifest.slices:
        for structure in STRUCTURES:
            p = entry.path_for(structure)
            if p is None:
                continue
            try:
                masks[structure][entry.index] = load_mask(
                    p, manifest.source_dims, manifest.pixel_spacing_mm)
            except (MissingFile, DecodeError, DimsMismatch) as exc:
                raise type(exc)(f"slice {entry.index} ({structure}): {exc}")
    # drop structure keys with no masks at all, so absence is easy to test
    masks = {s: d for s, d in masks.items() if d}
    return Study(manifest=manifest, masks=masks)


def load_study(manifest_path: str) -> Study:
    return assemble_study(load_manifest(manifest_path))


def manifest_to_dict(manifest: StudyManifest, base_dir: Optional[str] = None) -> dict:
    """Manifest as a JSON-ready dict; paths made relative to ``base_dir`` if given."""
    def rel(p: Optional[str]) -> Optional[str]:
        if p is None:
            return None
        return os.path.relpath(p, base_dir) if base_dir else p

    slices = []
    for e in manifest.slices:
        row: dict = {"index": e.index}
        for key, p in (("lung", e.lung_mask_path), ("mediastinum", e.mediastinum_mask_path),
                       ("tumor", e.tumor_mask_path), ("ct", e.ct_image_path)):
            if p is not None:
                row[key] = rel(p)
        slices.append(row)
    return {
        "study_id": manifest.study_id,
        "pixel_spacing_mm": list(manifest.pixel_spacing_mm),
        "slice_thickness_mm": manifest.slice_thickness_mm,
        "source_dims": list(manifest.source_dims),
        "slices": slices,
    }


def study_digest(study: Study) -> dict:
    """Canonical serializable form of a Study (manifest + packed mask bits).

    Two byte-identical digests mean the studies are identical; used to check
    that assembly is deterministic.
    """
    packed = {
        structure: {
            str(i): np.packbits(m.bits).tobytes().hex()
            for i, m in sorted(study.masks.get(structure, {}).items())
        }
        for structure in STRUCTURES
    }
    return {"manifest": manifest_to_dict(study.manifest), "masks": packed}
