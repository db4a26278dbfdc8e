"""Manifest parsing, mask IO, and study assembly."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from lungstage.errors import (DecodeError, DimsMismatch, MissingFile, ParseError,
                              ValidationError)
from lungstage.ingest import (BinaryMask, Study, load_manifest, load_mask, load_study,
                              manifest_to_dict, save_mask, study_digest)


def _write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path, format="PNG")


def _write_study(tmp_path, n_slices=2, dims=(8, 10), spacing=(0.7, 0.9), thickness=2.5,
                 structures=("lung", "tumor")):
    """Write a small valid study; returns the manifest path."""
    rng = np.random.default_rng(0)
    slices = []
    for idx in range(n_slices):
        entry = {"index": idx}
        for structure in structures:
            name = f"s{idx}_{structure}.png"
            arr = (rng.random(dims) < 0.4).astype(np.uint8) * 255
            arr[0, 0] = 255  # keep every mask non-empty
            _write_png(os.path.join(tmp_path, name), arr)
            entry[structure] = name
        slices.append(entry)
    doc = {
        "study_id": "t",
        "pixel_spacing_mm": list(spacing),
        "slice_thickness_mm": thickness,
        "source_dims": list(dims),
        "slices": slices,
    }
    path = os.path.join(tmp_path, "manifest.json")
    with open(path, "w") as fp:
        json.dump(doc, fp)
    return path


class TestBinaryMask:
    def test_coerces_to_bool(self):
        m = BinaryMask(bits=np.array([[0, 2], [255, 0]], dtype=np.uint8), spacing_mm=(1, 1))
        assert m.bits.dtype == bool
        assert m.bits.tolist() == [[False, True], [True, False]]

    def test_rejects_non_2d(self):
        with pytest.raises(ValidationError):
            BinaryMask(bits=np.zeros((3, 3, 3), dtype=bool), spacing_mm=(1, 1))

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValidationError):
            BinaryMask(bits=np.zeros((3, 3), dtype=bool), spacing_mm=(0.0, 1.0))

    def test_equality_covers_spacing_and_bits(self):
        a = BinaryMask(bits=np.ones((2, 2), dtype=bool), spacing_mm=(1, 1))
        b = BinaryMask(bits=np.ones((2, 2), dtype=bool), spacing_mm=(1, 1))
        c = BinaryMask(bits=np.ones((2, 2), dtype=bool), spacing_mm=(1, 2))
        assert a == b and a != c


class TestMaskIO:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        original = BinaryMask(bits=rng.random((17, 13)) < 0.5, spacing_mm=(0.6, 0.8))
        path = str(tmp_path / "m.png")
        save_mask(original, path)
        loaded = load_mask(path, expected_dims=(17, 13), spacing_mm=(0.6, 0.8))
        assert loaded == original

    def test_any_positive_value_is_foreground(self, tmp_path):
        path = str(tmp_path / "m.png")
        _write_png(path, np.array([[0, 1], [7, 255]]))
        loaded = load_mask(path)
        assert loaded.bits.tolist() == [[False, True], [True, True]]

    def test_missing_file(self):
        with pytest.raises(MissingFile):
            load_mask("/nonexistent/mask.png")

    def test_rejects_rgb(self, tmp_path):
        path = str(tmp_path / "rgb.png")
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8), mode="RGB").save(path)
        with pytest.raises(DecodeError):
            load_mask(path)

    def test_dims_check(self, tmp_path):
        path = str(tmp_path / "m.png")
        _write_png(path, np.zeros((4, 4)))
        with pytest.raises(DimsMismatch):
            load_mask(path, expected_dims=(5, 4))


class TestLoadManifest:
    def test_valid(self, tmp_path):
        manifest = load_manifest(_write_study(str(tmp_path)))
        assert manifest.study_id == "t"
        assert manifest.pixel_spacing_mm == (0.7, 0.9)
        assert manifest.source_dims == (8, 10)
        assert len(manifest.slices) == 2
        assert manifest.slices[0].lung_mask_path.endswith("s0_lung.png")

    def test_missing_file(self):
        with pytest.raises(MissingFile):
            load_manifest("/nonexistent/manifest.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_manifest(str(path))

    @pytest.mark.parametrize("patch,field", [
        ({"pixel_spacing_mm": [0, 1]}, "pixel_spacing_mm"),
        ({"slice_thickness_mm": -2.5}, "slice_thickness_mm"),
        ({"source_dims": [0, 10]}, "source_dims"),
        ({"slices": []}, "slices"),
        ({"study_id": ""}, "study_id"),
    ])
    def test_field_validation(self, tmp_path, patch, field):
        path = _write_study(str(tmp_path))
        doc = json.load(open(path))
        doc.update(patch)
        json.dump(doc, open(path, "w"))
        with pytest.raises(ValidationError) as err:
            load_manifest(path)
        assert field in err.value.field

    def test_duplicate_indices(self, tmp_path):
        path = _write_study(str(tmp_path))
        doc = json.load(open(path))
        doc["slices"][1]["index"] = 0
        json.dump(doc, open(path, "w"))
        with pytest.raises(ValidationError):
            load_manifest(path)

    def test_gap_in_indices(self, tmp_path):
        path = _write_study(str(tmp_path))
        doc = json.load(open(path))
        doc["slices"][1]["index"] = 5
        json.dump(doc, open(path, "w"))
        with pytest.raises(ValidationError):
            load_manifest(path)

    def test_missing_referenced_mask(self, tmp_path):
        path = _write_study(str(tmp_path))
        doc = json.load(open(path))
        doc["slices"][0]["tumor"] = "does_not_exist.png"
        json.dump(doc, open(path, "w"))
        with pytest.raises(ValidationError) as err:
            load_manifest(path)
        assert "tumor" in err.value.field

    def test_mask_dims_checked_against_source_dims(self, tmp_path):
        path = _write_study(str(tmp_path))
        _write_png(os.path.join(str(tmp_path), "s0_tumor.png"), np.zeros((4, 4)))
        with pytest.raises(ValidationError):
            load_manifest(path)


class TestStudy:
    def test_load_study(self, tmp_path):
        study = load_study(_write_study(str(tmp_path)))
        assert study.n_slices == 2
        assert study.spacing_mm == (0.7, 0.9)
        assert study.slice_thickness_mm == 2.5
        assert isinstance(study.mask("lung", 0), BinaryMask)
        assert study.mask("mediastinum", 0) is None

    def test_tumor_slices_skips_empty_masks(self, tmp_path):
        path = _write_study(str(tmp_path), n_slices=3)
        _write_png(os.path.join(str(tmp_path), "s1_tumor.png"), np.zeros((8, 10)))
        study = load_study(path)
        assert study.tumor_slices() == [0, 2]

    def test_mask_spacing_propagated(self, tmp_path):
        study = load_study(_write_study(str(tmp_path)))
        assert study.mask("tumor", 0).spacing_mm == (0.7, 0.9)

    def test_digest_deterministic(self, tmp_path):
        path = _write_study(str(tmp_path))
        assert study_digest(load_study(path)) == study_digest(load_study(path))

    def test_manifest_to_dict_roundtrip(self, tmp_path):
        path = _write_study(str(tmp_path))
        manifest = load_manifest(path)
        doc = manifest_to_dict(manifest, base_dir=str(tmp_path))
        path2 = os.path.join(str(tmp_path), "manifest2.json")
        json.dump(doc, open(path2, "w"))
        again = load_manifest(path2)
        assert again == manifest
