"""T-stage rule engine over measured tumor properties, with a decision trace.

Size brackets are inclusive on their upper bound (a 30.0 mm tumor is T1
material).  Invasion of a configured structure forces T4 before any size rule
is consulted.  Every evaluated condition lands in the trace, so a report
reader can audit exactly why a stage fired.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .anatomy import ContainmentParams, DiaphragmParams
from .errors import InvalidProperties, ValidationError
from .ingest import Study
from .measurement import (TumorProperties, measure_study, properties_from_dict,
                          properties_to_dict, slice_measurements_from_dict,
                          slice_measurements_to_dict)


class TStage(Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"

    @property
    def index(self) -> int:
        return int(self.value[1])

    def __str__(self) -> str:
        return self.value


_KNOWN_STRUCTURES = ("mediastinum", "diaphragm", "lung_wall")


@dataclass(frozen=True)
class StagingRules:
    """Thresholds and switches of the rule engine.

    invasion_threshold_mm: separations at or below this count as invasion.
    invading_structures: structures whose invasion forces T4; lung_wall may be
    added for what-if runs, its invasion then derived from dist_lung_wall_mm.
    small_unsurrounded_stage: stage for tumors within the T1 size bracket that
    are not surrounded by lung tissue.
    """

    t1_max_mm: float = 30.0
    t2_max_mm: float = 50.0
    t3_max_mm: float = 70.0
    invasion_threshold_mm: float = 0.0
    invading_structures: frozenset = frozenset({"mediastinum", "diaphragm"})
    small_unsurrounded_stage: TStage = TStage.T2

    def __post_init__(self):
        if not (0 < self.t1_max_mm < self.t2_max_mm < self.t3_max_mm):
            raise ValidationError(
                "size thresholds",
                f"need 0 < t1 < t2 < t3, got {self.t1_max_mm}, {self.t2_max_mm}, {self.t3_max_mm}")
        if self.invasion_threshold_mm < 0:
            raise ValidationError("invasion_threshold_mm",
                                  f"must be >= 0, got {self.invasion_threshold_mm}")
        unknown = set(self.invading_structures) - set(_KNOWN_STRUCTURES)
        if unknown:
            raise ValidationError("invading_structures", f"unknown structures: {sorted(unknown)}")
        object.__setattr__(self, "invading_structures", frozenset(self.invading_structures))
        if not isinstance(self.small_unsurrounded_stage, TStage):
            object.__setattr__(self, "small_unsurrounded_stage",
                               TStage(str(self.small_unsurrounded_stage)))


@dataclass(frozen=True)
class TraceEntry:
    condition: str
    value: str
    outcome: bool


@dataclass(frozen=True)
class StageDecision:
    stage: TStage
    fired_rule: str
    trace: tuple  # ordered TraceEntry sequence


def _invasion_flag(structure: str, props: TumorProperties, rules: StagingRules
                   ) -> tuple[bool, str]:
    if structure == "mediastinum":
        flag = props.invades_mediastinum
        dist = props.dist_mediastinum_mm
    elif structure == "diaphragm":
        flag = props.invades_diaphragm
        dist = props.dist_diaphragm_mm
    else:  # lung_wall: no precomputed flag, derive from the distance
        dist = props.dist_lung_wall_mm
        flag = dist is not None and dist <= rules.invasion_threshold_mm
    detail = "no mask" if dist is None else f"min separation {dist:.3f} mm"
    return flag, detail


def classify(props: TumorProperties, rules: StagingRules = StagingRules()) -> StageDecision:
    """Apply the staging rules in order, recording every evaluated condition.

    Order: structure invasion, then the size brackets largest first, then the
    surrounded-by-lung split for small tumors.
    """
    if not props.size_mm > 0:
        raise InvalidProperties(f"size_mm must be > 0, got {props.size_mm}")

    trace: list[TraceEntry] = []

    invaded = []
    for structure in _KNOWN_STRUCTURES:
        if structure not in rules.invading_structures:
            continue
        flag, detail = _invasion_flag(structure, props, rules)
        trace.append(TraceEntry(
            condition=f"invades_{structure} (threshold {rules.invasion_threshold_mm:g} mm)",
            value=detail, outcome=flag))
        if flag:
            invaded.append(structure)
    if invaded:
        return StageDecision(stage=TStage.T4,
                             fired_rule=f"invasion:{'+'.join(invaded)}",
                             trace=tuple(trace))

    size = props.size_mm
    for name, bound, stage in (("t3_max", rules.t3_max_mm, TStage.T4),
                               ("t2_max", rules.t2_max_mm, TStage.T3),
                               ("t1_max", rules.t1_max_mm, TStage.T2)):
        outcome = size > bound
        trace.append(TraceEntry(condition=f"size > {name}",
                                value=f"{size:.3f} mm vs {bound:g} mm",
                                outcome=outcome))
        if outcome:
            return StageDecision(stage=stage, fired_rule=f"size_gt_{name}", trace=tuple(trace))

    trace.append(TraceEntry(condition="surrounded_by_lung",
                            value=str(props.surrounded_by_lung).lower(),
                            outcome=props.surrounded_by_lung))
    if props.surrounded_by_lung:
        return StageDecision(stage=TStage.T1, fired_rule="small_surrounded",
                             trace=tuple(trace))
    return StageDecision(stage=rules.small_unsurrounded_stage,
                         fired_rule="small_unsurrounded_default", trace=tuple(trace))


@dataclass(frozen=True)
class StageReport:
    """Everything a staging run produced, ready for serialization."""

    study_id: str
    properties: TumorProperties
    decision: StageDecision
    slices: tuple  # SliceMeasurements per tumor-bearing slice
    warnings: tuple
    rules: StagingRules


def stage_study(study: Study, rules: StagingRules = StagingRules(),
                diaphragm_params: DiaphragmParams = DiaphragmParams(),
                containment_params: ContainmentParams = ContainmentParams()) -> StageReport:
    """Measure a study and classify it; the report carries the full audit."""
    props, per_slice = measure_study(
        study, diaphragm_params, containment_params,
        invasion_threshold_mm=rules.invasion_threshold_mm)
    decision = classify(props, rules)
    return StageReport(
        study_id=study.manifest.study_id,
        properties=props,
        decision=decision,
        slices=tuple(per_slice),
        warnings=props.warnings,
        rules=rules,
    )


def rules_to_dict(rules: StagingRules) -> dict:
    return {
        "t1_max_mm": rules.t1_max_mm,
        "t2_max_mm": rules.t2_max_mm,
        "t3_max_mm": rules.t3_max_mm,
        "invasion_threshold_mm": rules.invasion_threshold_mm,
        "invading_structures": sorted(rules.invading_structures),
        "small_unsurrounded_stage": rules.small_unsurrounded_stage.value,
    }


def rules_from_dict(doc: dict) -> StagingRules:
    known = {"t1_max_mm", "t2_max_mm", "t3_max_mm", "invasion_threshold_mm",
             "invading_structures", "small_unsurrounded_stage"}
    extra = set(doc) - known
    if extra:
        raise ValidationError("rules", f"unknown keys {sorted(extra)}")
    kwargs = {k: doc[k] for k in known if k in doc}
    if "invading_structures" in kwargs:
        kwargs["invading_structures"] = frozenset(kwargs["invading_structures"])
    return StagingRules(**kwargs)


def report_to_dict(report: StageReport) -> dict:
    """JSON-ready form of a report.  No timestamps; identical runs serialize
    to identical bytes."""
    return {
        "study_id": report.study_id,
        "stage": report.decision.stage.value,
        "fired_rule": report.decision.fired_rule,
        "trace": [{"condition": t.condition, "value": t.value, "outcome": t.outcome}
                  for t in report.decision.trace],
        "properties": properties_to_dict(report.properties),
        "slices": [slice_measurements_to_dict(m) for m in report.slices],
        "warnings": list(report.warnings),
        "rules": rules_to_dict(report.rules),
    }


def report_from_dict(doc: dict) -> StageReport:
    decision = StageDecision(
        stage=TStage(doc["stage"]),
        fired_rule=doc["fired_rule"],
        trace=tuple(TraceEntry(condition=t["condition"], value=t["value"],
                               outcome=t["outcome"]) for t in doc["trace"]),
    )
    return StageReport(
        study_id=doc["study_id"],
        properties=properties_from_dict(doc["properties"]),
        decision=decision,
        slices=tuple(slice_measurements_from_dict(m) for m in doc["slices"]),
        warnings=tuple(doc.get("warnings", ())),
        rules=rules_from_dict(doc["rules"]),
    )
