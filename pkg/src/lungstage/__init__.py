"""Rule-based lung tumor T-staging from CT segmentation masks.

Per-slice binary masks plus pixel geometry go in; tumor measurements, an
auditable T1-T4 decision, evaluation tables, and rendered overlays come out.
"""

__version__ = "0.1.0"

from .anatomy import ContainmentParams, DiaphragmParams, estimate_diaphragm, is_surrounded_by_lung
from .errors import (DecodeError, DegenerateBox, DimsMismatch, EmptyInput, EmptyMask,
                     GeometryInfeasible, InvalidProperties, LengthMismatch, LungStageError,
                     MissingFile, NoTumor, ParseError, ShapeMismatch, TileTooSmall,
                     ValidationError)
from .geometry import (Component, Contour, box_iou, connected_components, extract_contours,
                       max_diameter_mm, min_distance_mm)
from .ingest import BinaryMask, SliceEntry, Study, StudyManifest, load_manifest, load_mask, load_study, save_mask
from .losses import LossInput, dice_loss, gradient_check, jaccard_loss, overlap_loss
from .measurement import (SliceMeasurements, TumorProperties, extract_properties,
                          measure_slice, measure_study)
from .metrics import (ConfusionCounts, DetectionImage, DetectionSet, SegMetrics,
                      confusion_counts, detection_eval, f1, seg_metrics, stage_report)
from .phantom import (Ellipse, PhantomSpec, PhantomTruth, Strip, generate_phantom,
                      oracle_stage, oracle_truth, random_phantom_spec)
from .preprocess import ClaheSpec, Image8, WindowSpec, clahe, resize, window_hu
from .staging import (StageDecision, StageReport, StagingRules, TStage, classify,
                      report_from_dict, report_to_dict, stage_study)

__all__ = [
    "__version__",
    # errors
    "LungStageError", "MissingFile", "ParseError", "ValidationError", "DecodeError",
    "DimsMismatch", "EmptyInput", "TileTooSmall", "EmptyMask", "DegenerateBox",
    "ShapeMismatch", "LengthMismatch", "NoTumor", "InvalidProperties",
    "GeometryInfeasible",
    # ingest
    "BinaryMask", "SliceEntry", "StudyManifest", "Study", "load_manifest", "load_mask",
    "load_study", "save_mask",
    # geometry
    "Component", "Contour", "connected_components", "extract_contours", "max_diameter_mm",
    "min_distance_mm", "box_iou",
    # preprocess
    "Image8", "WindowSpec", "ClaheSpec", "window_hu", "clahe", "resize",
    # anatomy
    "DiaphragmParams", "ContainmentParams", "estimate_diaphragm", "is_surrounded_by_lung",
    # measurement
    "SliceMeasurements", "TumorProperties", "measure_slice", "measure_study",
    "extract_properties",
    # staging
    "TStage", "StagingRules", "StageDecision", "StageReport", "classify", "stage_study",
    "report_to_dict", "report_from_dict",
    # metrics
    "ConfusionCounts", "SegMetrics", "confusion_counts", "seg_metrics", "f1",
    "DetectionImage", "DetectionSet", "detection_eval", "stage_report",
    # losses
    "LossInput", "dice_loss", "jaccard_loss", "overlap_loss", "gradient_check",
    # phantom
    "Ellipse", "Strip", "PhantomSpec", "PhantomTruth", "generate_phantom",
    "random_phantom_spec", "oracle_truth", "oracle_stage",
]
