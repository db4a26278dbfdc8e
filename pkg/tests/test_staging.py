"""Rule engine: stage assignment, dominance, traces, and report round-trips."""

import json

import numpy as np
import pytest

from conftest import make_study
from lungstage.errors import InvalidProperties, ValidationError
from lungstage.measurement import TumorProperties
from lungstage.staging import (StagingRules, TStage, classify, report_from_dict,
                               report_to_dict, rules_from_dict, rules_to_dict,
                               stage_study)


def props(size=20.0, media=None, dia=None, wall=None, inv_media=False, inv_dia=False,
          surrounded=True, warnings=()):
    return TumorProperties(
        size_mm=size, in_plane_max_mm=size, depth_mm=min(size, 10.0),
        dist_lung_wall_mm=wall, dist_mediastinum_mm=media, dist_diaphragm_mm=dia,
        invades_mediastinum=inv_media, invades_diaphragm=inv_dia,
        surrounded_by_lung=surrounded, n_tumor_slices=4, warnings=tuple(warnings))


class TestClassify:
    def test_midsize_no_invasion_is_t3(self):
        assert classify(props(size=60.0, media=12.0)).stage == TStage.T3

    def test_midsize_with_invasion_is_t4(self):
        d = classify(props(size=60.0, media=0.0, inv_media=True))
        assert d.stage == TStage.T4
        assert d.fired_rule == "invasion:mediastinum"

    def test_small_surrounded_is_t1(self):
        d = classify(props(size=20.0, surrounded=True))
        assert d.stage == TStage.T1 and d.fired_rule == "small_surrounded"

    def test_between_brackets_is_t2(self):
        assert classify(props(size=45.0)).stage == TStage.T2

    @pytest.mark.parametrize("size,stage", [
        (30.0, TStage.T1), (30.000001, TStage.T2),
        (50.0, TStage.T2), (50.000001, TStage.T3),
        (70.0, TStage.T3), (70.000001, TStage.T4),
    ])
    def test_bracket_bounds_are_inclusive(self, size, stage):
        assert classify(props(size=size)).stage == stage

    def test_small_unsurrounded_defaults_to_t2(self):
        d = classify(props(size=12.0, surrounded=False))
        assert d.stage == TStage.T2
        assert d.fired_rule == "small_unsurrounded_default"

    def test_small_unsurrounded_stage_configurable(self):
        rules = StagingRules(small_unsurrounded_stage=TStage.T1)
        assert classify(props(size=12.0, surrounded=False), rules).stage == TStage.T1

    def test_invasion_dominates_even_tiny_tumors(self):
        d = classify(props(size=5.0, dia=0.0, inv_dia=True))
        assert d.stage == TStage.T4 and d.fired_rule == "invasion:diaphragm"

    def test_both_invasions_named_in_rule(self):
        d = classify(props(size=5.0, media=0.0, dia=0.0, inv_media=True, inv_dia=True))
        assert d.fired_rule == "invasion:mediastinum+diaphragm"

    def test_lung_wall_not_invading_by_default(self):
        assert classify(props(size=20.0, wall=0.0)).stage == TStage.T1

    def test_lung_wall_invasion_when_configured(self):
        rules = StagingRules(invading_structures=frozenset(
            {"mediastinum", "diaphragm", "lung_wall"}))
        d = classify(props(size=20.0, wall=0.0), rules)
        assert d.stage == TStage.T4 and "lung_wall" in d.fired_rule

    def test_invasion_only_for_configured_structures(self):
        rules = StagingRules(invading_structures=frozenset({"diaphragm"}))
        d = classify(props(size=20.0, media=0.0, inv_media=True), rules)
        assert d.stage == TStage.T1  # mediastinum not configured, so size wins

    def test_stage_monotone_in_size(self):
        sizes = [1.0, 5.0, 29.0, 30.0, 31.0, 49.0, 50.0, 55.0, 70.0, 71.0, 150.0]
        indices = [classify(props(size=s)).stage.index for s in sizes]
        assert indices == sorted(indices)

    def test_custom_thresholds(self):
        rules = StagingRules(t1_max_mm=10.0, t2_max_mm=20.0, t3_max_mm=30.0)
        assert classify(props(size=15.0), rules).stage == TStage.T2
        assert classify(props(size=25.0), rules).stage == TStage.T3
        assert classify(props(size=35.0), rules).stage == TStage.T4

    def test_nonpositive_size_rejected(self):
        with pytest.raises(InvalidProperties):
            classify(props(size=0.0))
        with pytest.raises(InvalidProperties):
            classify(props(size=-3.0))


class TestTrace:
    def test_trace_records_every_checked_condition(self):
        d = classify(props(size=60.0, media=12.0))
        conditions = [t.condition for t in d.trace]
        assert any("invades_mediastinum" in c for c in conditions)
        assert any("invades_diaphragm" in c for c in conditions)
        assert "size > t3_max" in conditions
        assert "size > t2_max" in conditions
        # the engine stopped at t2_max, so t1 was never consulted
        assert "size > t1_max" not in conditions
        assert d.trace[-1].outcome is True

    def test_trace_reaches_surrounded_for_small_tumors(self):
        d = classify(props(size=10.0, surrounded=True))
        assert d.trace[-1].condition == "surrounded_by_lung"
        assert d.trace[-1].outcome is True

    def test_invasion_stops_before_size_checks(self):
        d = classify(props(size=80.0, media=0.0, inv_media=True))
        assert not any("size" in t.condition for t in d.trace)

    def test_trace_values_carry_distances(self):
        d = classify(props(size=60.0, media=12.5))
        entry = next(t for t in d.trace if "mediastinum" in t.condition)
        assert "12.500 mm" in entry.value

    def test_missing_mask_noted_in_trace(self):
        d = classify(props(size=60.0, media=None))
        entry = next(t for t in d.trace if "mediastinum" in t.condition)
        assert entry.value == "no mask" and entry.outcome is False

    def test_deterministic(self):
        a = classify(props(size=42.0, media=3.0))
        b = classify(props(size=42.0, media=3.0))
        assert a == b


class TestRulesValidation:
    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValidationError):
            StagingRules(t1_max_mm=50.0, t2_max_mm=30.0)
        with pytest.raises(ValidationError):
            StagingRules(t1_max_mm=0.0)

    def test_negative_invasion_threshold_rejected(self):
        with pytest.raises(ValidationError):
            StagingRules(invasion_threshold_mm=-1.0)

    def test_unknown_structure_rejected(self):
        with pytest.raises(ValidationError):
            StagingRules(invading_structures=frozenset({"pleura"}))

    def test_stage_string_coerced(self):
        rules = StagingRules(small_unsurrounded_stage="T3")
        assert rules.small_unsurrounded_stage is TStage.T3


class TestStageStudy:
    def _boxed_study(self, tumor_cols, media_cols=None, dims=(40, 80), n_slices=3):
        lung = np.zeros(dims, dtype=bool)
        lung[2:38, 2:60] = True
        tumor = np.zeros(dims, dtype=bool)
        tumor[10:14, tumor_cols[0]:tumor_cols[1]] = True
        entry = {"tumor": tumor, "lung": lung}
        if media_cols is not None:
            media = np.zeros(dims, dtype=bool)
            media[:, media_cols[0]:media_cols[1]] = True
            entry["mediastinum"] = media
        return make_study([entry] * n_slices, thickness=2.0)

    def test_size_ruled_study(self):
        # 56 px in-plane span at 1 mm spacing, depth 6 mm, clear of everything
        report = stage_study(self._boxed_study((3, 60), media_cols=(70, 75)))
        assert report.decision.stage == TStage.T3
        assert report.study_id == "test-study"
        assert report.properties.in_plane_max_mm >= 56.0

    def test_invasion_ruled_study(self):
        report = stage_study(self._boxed_study((3, 60), media_cols=(50, 70)))
        assert report.decision.stage == TStage.T4
        assert report.decision.fired_rule == "invasion:mediastinum"

    def test_no_mediastinum_large_tumor_t4_with_warning(self):
        report = stage_study(self._boxed_study((3, 75)))
        assert report.decision.stage == TStage.T4  # 72 px > 70 mm
        assert any("mediastinal invasion defaults to false" in w for w in report.warnings)

    def test_diaphragm_touch_forces_t4(self):
        dims = (40, 40)
        lung = np.zeros(dims, dtype=bool)
        lung[2:38, 2:38] = True
        tumor = np.zeros(dims, dtype=bool)
        tumor[33:38, 10:14] = True  # reaches lung bottom row
        report = stage_study(make_study([{"tumor": tumor, "lung": lung}]))
        assert report.properties.dist_diaphragm_mm == 0.0
        assert report.decision.stage == TStage.T4
        assert report.decision.fired_rule == "invasion:diaphragm"

    def test_rules_invasion_threshold_feeds_measurement(self):
        study = self._boxed_study((3, 10), media_cols=(13, 20))  # 4 mm gap
        strict = stage_study(study)
        loose = stage_study(study, StagingRules(invasion_threshold_mm=4.0))
        assert strict.decision.stage != TStage.T4
        assert loose.decision.stage == TStage.T4

    def test_report_carries_slices_and_rules(self):
        report = stage_study(self._boxed_study((3, 10)))
        assert len(report.slices) == 3
        assert report.rules == StagingRules()


class TestSerialization:
    def test_rules_roundtrip(self):
        rules = StagingRules(t1_max_mm=25.0, invasion_threshold_mm=1.5,
                             invading_structures=frozenset({"diaphragm", "lung_wall"}),
                             small_unsurrounded_stage=TStage.T3)
        doc = json.loads(json.dumps(rules_to_dict(rules)))
        assert rules_from_dict(doc) == rules

    def test_rules_dict_is_json_friendly(self):
        doc = rules_to_dict(StagingRules())
        assert doc["invading_structures"] == ["diaphragm", "mediastinum"]
        assert doc["small_unsurrounded_stage"] == "T2"

    def test_rules_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            rules_from_dict({"t9_max_mm": 1.0})

    def test_rules_partial_dict_uses_defaults(self):
        rules = rules_from_dict({"t1_max_mm": 25.0})
        assert rules.t1_max_mm == 25.0 and rules.t2_max_mm == 50.0

    def test_report_roundtrip_through_json(self):
        lung = np.zeros((20, 20), dtype=bool)
        lung[1:19, 1:19] = True
        tumor = np.zeros((20, 20), dtype=bool)
        tumor[8:12, 8:12] = True
        report = stage_study(make_study([{"tumor": tumor, "lung": lung}] * 2))
        doc = json.loads(json.dumps(report_to_dict(report)))
        assert report_from_dict(doc) == report

    def test_report_dict_shape(self):
        lung = np.zeros((20, 20), dtype=bool)
        lung[1:19, 1:19] = True
        tumor = np.zeros((20, 20), dtype=bool)
        tumor[8:12, 8:12] = True
        doc = report_to_dict(stage_study(make_study([{"tumor": tumor, "lung": lung}])))
        assert set(doc) == {"study_id", "stage", "fired_rule", "trace", "properties",
                            "slices", "warnings", "rules"}
        assert doc["stage"] in {"T1", "T2", "T3", "T4"}
        assert all(set(t) == {"condition", "value", "outcome"} for t in doc["trace"])
