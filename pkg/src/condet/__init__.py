"""Risk-controlled conformal post-processing for object-detection outputs.

Given calibration data of ground truths and raw (post-NMS) detections, the
toolkit tunes a confidence threshold together with localization and
classification correction parameters so that user-chosen task risks are
controlled in expectation on exchangeable test data, then applies the tuned
parameters to new images and measures risks and set sizes.
"""

from .geometry import (
    EMPTY_BOX,
    BoundingBox,
    area,
    contains,
    giou_distance,
    hausdorff_distance,
    intersect,
)
from .matching import MatchDistanceSpec, lac_distance, match, mix_distance, pair_distance
from .losses import (
    Detection,
    ImageSample,
    LossSpec,
    aggregate,
    cls_loss,
    conf_loss,
    loc_loss,
)
from .predsets import (
    PredSetSpec,
    apply_margin,
    build_class_set,
    cls_set_aps,
    cls_set_lac,
    loc_set_additive,
    loc_set_multiplicative,
    select_confident,
)
from .calibration import (
    CalibrationConfig,
    CalibrationPreconditionError,
    CalibrationResult,
    InfeasibleRiskError,
    StepLossCurve,
    calibrate,
    crc_calibrate,
    default_lambda_loc_bounds,
    seqcrc_step1,
    seqcrc_step2,
)
from .inference_metrics import ConformalPrediction, EvaluationReport, evaluate, infer
from .dataio import (
    DataFormatError,
    DigestMismatchError,
    SchemaVersionError,
    import_coco,
    load_dataset,
    load_result,
    save_result,
)
from .synth import SynthSpec, ValidationReport, generate, monte_carlo_validate

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "EMPTY_BOX",
    "area",
    "intersect",
    "contains",
    "hausdorff_distance",
    "giou_distance",
    "MatchDistanceSpec",
    "lac_distance",
    "mix_distance",
    "pair_distance",
    "match",
    "Detection",
    "ImageSample",
    "LossSpec",
    "conf_loss",
    "loc_loss",
    "cls_loss",
    "aggregate",
    "PredSetSpec",
    "select_confident",
    "loc_set_additive",
    "loc_set_multiplicative",
    "apply_margin",
    "cls_set_lac",
    "cls_set_aps",
    "build_class_set",
    "CalibrationConfig",
    "CalibrationResult",
    "CalibrationPreconditionError",
    "InfeasibleRiskError",
    "StepLossCurve",
    "crc_calibrate",
    "default_lambda_loc_bounds",
    "seqcrc_step1",
    "seqcrc_step2",
    "calibrate",
    "ConformalPrediction",
    "EvaluationReport",
    "infer",
    "evaluate",
    "DataFormatError",
    "SchemaVersionError",
    "DigestMismatchError",
    "load_dataset",
    "import_coco",
    "save_result",
    "load_result",
    "SynthSpec",
    "ValidationReport",
    "generate",
    "monte_carlo_validate",
]
