"""Score-level fusion of heterogeneous object detectors.

Detector outputs are matched against validation groundtruth to build
per-detector confidence models; at test time each detection cluster is
scored by combining the detectors' evidence with Dempster's rule.
Baseline fusers (calibrated max, weighted sum, naive Bayes), a
fixed-operating-point variant, a synthetic data generator, and a full
evaluation harness ship alongside.
"""

from .baselines import (
    BayesModel,
    PlattModel,
    WeightedSumModel,
    bayes_fuse_scope,
    build_bayes_model,
    build_platt_model,
    build_ws_model,
    platt_fuse_scope,
    ws_fuse_scope,
)
from .confidence import (
    ConfidenceModel,
    StaticBpaSource,
    build_confidence_model,
    load_model,
    save_model,
    theoretical_precision,
)
from .dataset import (
    DetectionRecord,
    DetectorDump,
    GroundTruthRecord,
    load_detections,
    load_groundtruth,
    save_detections,
    save_groundtruth,
    validate_run,
)
from .errors import DataError, DetfuseError, NumericalError, TotalConflictError
from .evaluation import (
    EvalResult,
    MatchLabel,
    average_precision,
    evaluate_detections,
    match_detections,
    pr_curve,
)
from .fusion import (
    VACUOUS,
    Cluster,
    MassTriple,
    assign_bpa,
    build_clusters,
    combine_all,
    combine_two,
    final_confidence,
    fuse_scope,
    nms,
    refine_bbox,
)
from .geometry import BBox, iou, iou_matrix
from .pipeline import (
    ModelSet,
    build_all_models,
    fuse_with_method,
    load_models,
    save_models,
    tune_n,
)
from .synth import (
    DetectorProfile,
    World,
    WorldConfig,
    demo_config,
    generate_world,
    load_world_config,
    write_world,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BayesModel",
    "Cluster",
    "ConfidenceModel",
    "DataError",
    "DetectionRecord",
    "DetectorDump",
    "DetectorProfile",
    "DetfuseError",
    "EvalResult",
    "GroundTruthRecord",
    "MassTriple",
    "MatchLabel",
    "ModelSet",
    "NumericalError",
    "PlattModel",
    "StaticBpaSource",
    "TotalConflictError",
    "VACUOUS",
    "WeightedSumModel",
    "World",
    "WorldConfig",
    "assign_bpa",
    "average_precision",
    "bayes_fuse_scope",
    "build_all_models",
    "build_bayes_model",
    "build_clusters",
    "build_confidence_model",
    "build_platt_model",
    "build_ws_model",
    "combine_all",
    "combine_two",
    "demo_config",
    "evaluate_detections",
    "final_confidence",
    "fuse_scope",
    "fuse_with_method",
    "generate_world",
    "iou",
    "iou_matrix",
    "load_detections",
    "load_groundtruth",
    "load_model",
    "load_models",
    "load_world_config",
    "match_detections",
    "nms",
    "platt_fuse_scope",
    "pr_curve",
    "refine_bbox",
    "save_detections",
    "save_groundtruth",
    "save_model",
    "save_models",
    "theoretical_precision",
    "tune_n",
    "validate_run",
    "write_world",
    "ws_fuse_scope",
    "__version__",
]
