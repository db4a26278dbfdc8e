"""End-to-end command runs through main(argv), including exit-code mapping."""

import csv
import filecmp
import json
import os

import numpy as np
import pytest
from jsonschema import validate

from lungstage import cli
from lungstage.cli import main
from lungstage.ingest import BinaryMask, load_study, save_mask
from lungstage.phantom import PhantomSpec, generate_phantom, random_phantom_spec, spec_to_dict
from lungstage.preprocess import Image8, load_image8, save_image8
from lungstage.staging import stage_study


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    """A randomized study on disk, shared read-only by the tests here."""
    out = str(tmp_path_factory.mktemp("studies") / "p17")
    generate_phantom(random_phantom_spec(17), out_dir=out)
    return out


def _manifest(d):
    return os.path.join(d, "manifest.json")


def _rows(text):
    return [row for row in csv.reader(text.splitlines())]


class TestStageCommand:
    def test_single_study_to_stdout(self, phantom_dir, capsys):
        assert main(["stage", "--manifest", _manifest(phantom_dir)]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate(instance=doc, schema=cli.REPORT_SCHEMA)
        assert doc["study_id"] == "phantom-17"
        assert doc["tool"] == {"name": "lungstage", "version": cli.__version__}
        expected = stage_study(load_study(_manifest(phantom_dir)))
        assert doc["stage"] == expected.decision.stage.value
        assert doc["fired_rule"] == expected.decision.fired_rule

    def test_report_file_and_stdout_agree(self, phantom_dir, tmp_path, capsys):
        out = str(tmp_path / "report.json")
        assert main(["stage", "--manifest", _manifest(phantom_dir), "--out", out]) == 0
        note = capsys.readouterr().out
        assert "phantom-17" in note and out in note
        assert main(["stage", "--manifest", _manifest(phantom_dir)]) == 0
        with open(out, encoding="utf-8") as fp:
            assert fp.read() == capsys.readouterr().out

    def test_repeated_runs_byte_identical(self, phantom_dir, tmp_path):
        a = str(tmp_path / "a.json")
        b = str(tmp_path / "b.json")
        assert main(["stage", "--manifest", _manifest(phantom_dir), "--out", a]) == 0
        assert main(["stage", "--manifest", _manifest(phantom_dir), "--out", b]) == 0
        assert filecmp.cmp(a, b, shallow=False)

    def test_rules_file_changes_outcome(self, tmp_path, capsys):
        study_dir = str(tmp_path / "study")
        generate_phantom(PhantomSpec(), out_dir=study_dir, with_truth=False)
        rules_path = str(tmp_path / "rules.json")
        with open(rules_path, "w", encoding="utf-8") as fp:
            json.dump({"t1_max_mm": 5.0}, fp)

        assert main(["stage", "--manifest", _manifest(study_dir)]) == 0
        assert json.loads(capsys.readouterr().out)["stage"] == "T1"
        assert main(["stage", "--manifest", _manifest(study_dir),
                     "--rules", rules_path]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["stage"] == "T2"
        assert doc["rules"]["t1_max_mm"] == 5.0

    def test_missing_manifest_is_data_error(self, capsys):
        assert main(["stage", "--manifest", "/nonexistent/manifest.json"]) == 2
        assert "MissingFile" in capsys.readouterr().err

    def test_malformed_manifest_is_data_error(self, tmp_path, capsys):
        bad = str(tmp_path / "manifest.json")
        with open(bad, "w", encoding="utf-8") as fp:
            fp.write("not json {")
        assert main(["stage", "--manifest", bad]) == 2
        assert "ParseError" in capsys.readouterr().err

    def test_missing_required_argument_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["stage"])
        assert exc.value.code == 1

    def test_batch_without_out_dir_is_usage_error(self, phantom_dir, capsys):
        m = _manifest(phantom_dir)
        assert main(["stage", "--manifest", m, "--manifest", m]) == 1
        assert "--out" in capsys.readouterr().err

    def test_batch_writes_one_report_per_study(self, tmp_path, capsys):
        dirs = []
        for seed in (3, 4):
            d = str(tmp_path / f"p{seed}")
            generate_phantom(random_phantom_spec(seed), out_dir=d, with_truth=False)
            dirs.append(d)
        out = str(tmp_path / "reports")
        assert main(["stage", "--manifest", _manifest(dirs[0]),
                     "--manifest", _manifest(dirs[1]), "--out", out]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        for seed in (3, 4):
            path = os.path.join(out, f"phantom-{seed}.json")
            assert os.path.isfile(path)
            with open(path, encoding="utf-8") as fp:
                validate(instance=json.load(fp), schema=cli.REPORT_SCHEMA)

    def test_parallel_batch_matches_serial(self, tmp_path, monkeypatch, capsys):
        dirs = []
        for seed in (5, 6, 7):
            d = str(tmp_path / f"p{seed}")
            generate_phantom(random_phantom_spec(seed), out_dir=d, with_truth=False)
            dirs.append(d)
        argv_tail = []
        for d in dirs:
            argv_tail += ["--manifest", _manifest(d)]

        serial = str(tmp_path / "serial")
        assert main(["stage"] + argv_tail + ["--out", serial]) == 0
        parallel = str(tmp_path / "parallel")
        monkeypatch.setenv(cli.WORKERS_ENV, "2")
        assert main(["stage"] + argv_tail + ["--out", parallel]) == 0
        capsys.readouterr()
        for name in os.listdir(serial):
            assert filecmp.cmp(os.path.join(serial, name),
                               os.path.join(parallel, name), shallow=False)

    def test_duplicate_study_ids_rejected(self, phantom_dir, tmp_path, capsys):
        m = _manifest(phantom_dir)
        assert main(["stage", "--manifest", m, "--manifest", m,
                     "--out", str(tmp_path / "reports")]) == 2
        assert "duplicate" in capsys.readouterr().err

    @pytest.mark.parametrize("value", ["0", "-3", "lots"])
    def test_bad_worker_env_is_data_error(self, phantom_dir, monkeypatch, capsys, value):
        monkeypatch.setenv(cli.WORKERS_ENV, value)
        assert main(["stage", "--manifest", _manifest(phantom_dir)]) == 2
        capsys.readouterr()

    def test_overlays_rendered_for_tumor_slices(self, tmp_path, capsys):
        study_dir = str(tmp_path / "study")
        generate_phantom(PhantomSpec(n_slices=2), out_dir=study_dir, with_truth=False)
        overlays = str(tmp_path / "overlays")
        assert main(["stage", "--manifest", _manifest(study_dir),
                     "--out", str(tmp_path / "r.json"),
                     "--overlay-dir", overlays]) == 0
        capsys.readouterr()
        study = load_study(_manifest(study_dir))
        for idx in study.tumor_slices():
            path = os.path.join(overlays, f"overlay_slice{idx:03d}.png")
            assert os.path.isfile(path) and os.path.getsize(path) > 0


class TestMeasureCommand:
    def test_csv_layout(self, phantom_dir, capsys):
        assert main(["measure", "--manifest", _manifest(phantom_dir)]) == 0
        rows = _rows(capsys.readouterr().out)
        assert rows[0][0] == "slice_index"
        blank = rows.index([])
        study = load_study(_manifest(phantom_dir))
        assert blank - 1 == len(study.tumor_slices())
        assert rows[blank + 1][0] == "size_mm"
        summary = rows[blank + 2]
        assert float(summary[0]) > 0  # size_mm parses
        assert summary[8] in ("true", "false")  # surrounded_by_lung

    def test_out_file(self, phantom_dir, tmp_path, capsys):
        out = str(tmp_path / "measure.csv")
        assert main(["measure", "--manifest", _manifest(phantom_dir), "--out", out]) == 0
        capsys.readouterr()
        with open(out, encoding="utf-8") as fp:
            assert fp.readline().startswith("slice_index,")


class TestMetricsSegCommand:
    @staticmethod
    def _write_mask(path, bits):
        save_mask(BinaryMask(bits=np.asarray(bits, dtype=bool),
                             spacing_mm=(1.0, 1.0)), path)

    def test_identical_masks_score_one(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        bits = rng.uniform(size=(24, 24)) < 0.4
        p = str(tmp_path / "pred.png")
        g = str(tmp_path / "gt.png")
        self._write_mask(p, bits)
        self._write_mask(g, bits)
        assert main(["metrics", "seg", "--pred", p, "--gt", g]) == 0
        rows = _rows(capsys.readouterr().out)
        iou_col = rows[0].index("iou")
        assert rows[1][0] == "pred"
        assert rows[1][iou_col] == "1.0000"

    def test_multiple_pairs_add_overall_row(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        args = ["metrics", "seg"]
        for i in range(2):
            p = str(tmp_path / f"pred{i}.png")
            g = str(tmp_path / f"gt{i}.png")
            self._write_mask(p, rng.uniform(size=(16, 16)) < 0.5)
            self._write_mask(g, rng.uniform(size=(16, 16)) < 0.5)
            args += ["--pred", p, "--gt", g]
        assert main(args) == 0
        rows = _rows(capsys.readouterr().out)
        assert [r[0] for r in rows] == ["label", "pred0", "pred1", "overall"]

    def test_pair_count_mismatch(self, tmp_path, capsys):
        p = str(tmp_path / "p.png")
        g = str(tmp_path / "g.png")
        self._write_mask(p, np.ones((4, 4)))
        self._write_mask(g, np.ones((4, 4)))
        assert main(["metrics", "seg", "--pred", p, "--pred", p, "--gt", g]) == 2
        capsys.readouterr()

    def test_dims_mismatch_is_data_error(self, tmp_path, capsys):
        p = str(tmp_path / "p.png")
        g = str(tmp_path / "g.png")
        self._write_mask(p, np.ones((4, 4)))
        self._write_mask(g, np.ones((6, 6)))
        assert main(["metrics", "seg", "--pred", p, "--gt", g]) == 2
        assert "DimsMismatch" in capsys.readouterr().err


class TestMetricsDetCommand:
    @staticmethod
    def _write(path, doc):
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(doc, fp)

    def test_exact_overlap_case(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        # IoU between these boxes is exactly 0.6: counted at 0.50..0.60 only
        self._write(pred, {"images": [{"boxes": [[2.5, 0.0, 12.5, 10.0]],
                                       "scores": [0.9]}]})
        self._write(gt, {"images": [{"boxes": [[0.0, 0.0, 10.0, 10.0]]}]})
        assert main(["metrics", "det", "--pred", pred, "--gt", gt]) == 0
        rows = _rows(capsys.readouterr().out)
        by_threshold = {r[0]: r[1] for r in rows[1:] if len(r) == 2}
        assert by_threshold["0.50"] == "1.0000"
        assert by_threshold["0.60"] == "1.0000"
        assert by_threshold["0.65"] == "0.0000"
        summary_at = rows.index(["mAP50", "mAP50_95", "precision", "recall",
                                 "n_images", "n_gt", "n_pred"])
        summary = rows[summary_at + 1]
        assert summary[0] == "1.0000"
        assert summary[1] == "0.3000"
        assert summary[4:] == ["1", "1", "1"]

    def test_image_count_mismatch(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        self._write(pred, {"images": [{"boxes": [], "scores": []}]})
        self._write(gt, {"images": [{"boxes": []}, {"boxes": []}]})
        assert main(["metrics", "det", "--pred", pred, "--gt", gt]) == 2
        capsys.readouterr()

    def test_payload_without_images_list(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        self._write(pred, {"boxes": []})
        self._write(gt, {"images": []})
        assert main(["metrics", "det", "--pred", pred, "--gt", gt]) == 2
        capsys.readouterr()


class TestMetricsStageCommand:
    def test_json_lists_perfect_agreement(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        with open(pred, "w", encoding="utf-8") as fp:
            json.dump(["T1", "T2", "T3", "T4"], fp)
        with open(gt, "w", encoding="utf-8") as fp:
            json.dump({"stages": ["T1", "T2", "T3", "T4"]}, fp)
        assert main(["metrics", "stage", "--pred", pred, "--gt", gt]) == 0
        rows = _rows(capsys.readouterr().out)
        accuracy = next(r for r in rows if r and r[0] == "accuracy")
        assert accuracy[1] == "1.0000"
        header = next(r for r in rows if r and r[0] == "confusion")
        assert header[1:] == ["pred_T1", "pred_T2", "pred_T3", "pred_T4"]

    def test_csv_stage_lists(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.csv")
        gt = str(tmp_path / "gt.csv")
        with open(pred, "w", encoding="utf-8") as fp:
            fp.write("study,stage\ncase-a,T1\ncase-b,T4\n")
        with open(gt, "w", encoding="utf-8") as fp:
            fp.write("T1\nT4\n")  # headerless single column also accepted
        assert main(["metrics", "stage", "--pred", pred, "--gt", gt]) == 0
        rows = _rows(capsys.readouterr().out)
        accuracy = next(r for r in rows if r and r[0] == "accuracy")
        assert accuracy[1] == "1.0000"
        assert accuracy[4] == "2"

    def test_confusion_figure_written(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        with open(pred, "w", encoding="utf-8") as fp:
            json.dump(["T1", "T2"], fp)
        with open(gt, "w", encoding="utf-8") as fp:
            json.dump(["T1", "T1"], fp)
        figure = str(tmp_path / "confusion.png")
        assert main(["metrics", "stage", "--pred", pred, "--gt", gt,
                     "--figure", figure]) == 0
        capsys.readouterr()
        assert os.path.isfile(figure) and os.path.getsize(figure) > 0

    def test_unknown_label_is_data_error(self, tmp_path, capsys):
        pred = str(tmp_path / "pred.json")
        gt = str(tmp_path / "gt.json")
        with open(pred, "w", encoding="utf-8") as fp:
            json.dump(["T9"], fp)
        with open(gt, "w", encoding="utf-8") as fp:
            json.dump(["T1"], fp)
        assert main(["metrics", "stage", "--pred", pred, "--gt", gt]) == 2
        capsys.readouterr()


class TestPreprocessCommand:
    def test_window_clahe_resize_chain(self, tmp_path, capsys):
        hu = np.linspace(-1400.0, 0.0, 64 * 64).reshape(64, 64)
        src = str(tmp_path / "slice.npy")
        np.save(src, hu)
        out = str(tmp_path / "out.png")
        assert main(["preprocess", "--in", src, "--out", out,
                     "--window", "1400:-700", "--clahe", "2.0:2x2",
                     "--resize", "32"]) == 0
        assert "(32x32)" in capsys.readouterr().out
        img = load_image8(out)
        assert img.dims == (32, 32)

    def test_image8_input_without_window(self, tmp_path, capsys):
        src = str(tmp_path / "in.png")
        values = np.arange(64, dtype=np.uint8).reshape(8, 8)
        save_image8(Image8(values=values), src)
        out = str(tmp_path / "out.png")
        assert main(["preprocess", "--in", src, "--out", out,
                     "--resize", "4x8"]) == 0
        capsys.readouterr()
        assert load_image8(out).dims == (4, 8)

    def test_hu_input_without_window_is_data_error(self, tmp_path, capsys):
        src = str(tmp_path / "slice.npy")
        np.save(src, np.zeros((8, 8)))
        assert main(["preprocess", "--in", src, "--out", str(tmp_path / "o.png")]) == 2
        capsys.readouterr()

    @pytest.mark.parametrize("argv_patch", [
        ["--window", "1400"], ["--clahe", "2.0:16"], ["--resize", "0"],
    ])
    def test_malformed_option_values_are_usage_errors(self, tmp_path, argv_patch):
        src = str(tmp_path / "slice.npy")
        np.save(src, np.zeros((8, 8)))
        with pytest.raises(SystemExit) as exc:
            main(["preprocess", "--in", src, "--out", str(tmp_path / "o.png")]
                 + argv_patch)
        assert exc.value.code == 1


class TestPhantomCommand:
    def test_seed_generation(self, tmp_path, capsys):
        out = str(tmp_path / "phantom")
        assert main(["phantom", "--seed", "3", "--out", out]) == 0
        note = capsys.readouterr().out
        assert note.startswith("phantom-3: stage T")
        with open(os.path.join(out, "truth.json"), encoding="utf-8") as fp:
            truth_doc = json.load(fp)
        report = stage_study(load_study(_manifest(out)))
        assert truth_doc["stage"] == report.decision.stage.value

    def test_spec_file_generation(self, tmp_path, capsys):
        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w", encoding="utf-8") as fp:
            json.dump(spec_to_dict(PhantomSpec(study_id="from-spec")), fp)
        out = str(tmp_path / "phantom")
        assert main(["phantom", "--spec", spec_path, "--out", out]) == 0
        assert "from-spec" in capsys.readouterr().out
        assert load_study(_manifest(out)).manifest.study_id == "from-spec"

    def test_seed_and_spec_mutually_exclusive(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["phantom", "--seed", "1", "--spec", "x.json",
                  "--out", str(tmp_path / "p")])
        assert exc.value.code == 1


class TestLossesCommand:
    def test_self_check_passes(self, capsys):
        assert main(["losses", "check"]) == 0
        out = capsys.readouterr().out
        assert out.count("[ok]") == 3
        assert "FAIL" not in out


class TestTopLevel:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "lungstage" in capsys.readouterr().out

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
