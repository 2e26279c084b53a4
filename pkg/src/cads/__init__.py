"""Budget-constrained adaptive cascade inference over expert prediction pools."""

from .conformal import (
    ConformalCalibration,
    Measure,
    PredictionSet,
    alternative_uncertainty,
    aps_score,
    aps_scores,
    calibrate,
    prediction_set,
)
from .core import (
    LabelVector,
    Manifest,
    PredictionMatrix,
    PredictionPool,
    SplitIndex,
    Tier,
    ValidationError,
    load_manifest,
    split_dataset,
)
from .engine import BatchResult, CascadeEngine
from .optimizer import (
    SearchSpace,
    StudyResult,
    Trial,
    objective,
    optimize,
    tpe_suggest,
    verify_on_test,
)
from .profiling import (
    ClassDifficulty,
    ComplementarityTable,
    ExpertProfile,
    build_class_difficulty,
    build_complementarity,
    build_profiles,
)
from .router import (
    CascadeTrace,
    Category,
    ExitReason,
    PolicyConfig,
    categorize,
    ensemble,
    exit_threshold,
    run_cascade,
    select_next_expert,
)

__version__ = "0.1.0"

__all__ = [
    "BatchResult",
    "CascadeEngine",
    "CascadeTrace",
    "Category",
    "ClassDifficulty",
    "ComplementarityTable",
    "ConformalCalibration",
    "ExitReason",
    "ExpertProfile",
    "LabelVector",
    "Manifest",
    "Measure",
    "PolicyConfig",
    "PredictionMatrix",
    "PredictionPool",
    "PredictionSet",
    "SearchSpace",
    "SplitIndex",
    "StudyResult",
    "Tier",
    "Trial",
    "ValidationError",
    "alternative_uncertainty",
    "aps_score",
    "aps_scores",
    "build_class_difficulty",
    "build_complementarity",
    "build_profiles",
    "calibrate",
    "categorize",
    "ensemble",
    "exit_threshold",
    "load_manifest",
    "objective",
    "optimize",
    "prediction_set",
    "run_cascade",
    "select_next_expert",
    "split_dataset",
    "tpe_suggest",
    "verify_on_test",
]
