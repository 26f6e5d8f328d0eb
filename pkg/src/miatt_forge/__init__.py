"""miatt-forge: evaluation and learning with multiple inaccurate true targets.

Library surface: grid labelings and Boolean assessment (``core``), synthetic
scene and target generation (``generate``), logical metrics (``laf``), the
multi-target training loop (``learn``), file formats (``formats``), report
rendering (``report``), the CLI (``cli``), and the annotation/training HTTP
service (``service``).
"""

from .core import (
    NONOBJECT,
    OBJECT,
    UNKNOWN,
    AssessmentFailedError,
    AssessmentReport,
    CellState,
    EmptySetError,
    Instance,
    MiattSet,
    PartialLabeling,
    ProbabilityMap,
    ShapeMismatchError,
    assess_miatts,
    derive_ltt,
    fact_count,
    restrict,
)
from .generate import (
    DegenerateSceneError,
    GenParams,
    InfeasibleCoverageError,
    NoOverlapError,
    SceneParams,
    generate_miatts_abductive,
    generate_synthetic_scene,
    inject_conflicts,
)
from .laf import (
    METRIC_NAMES,
    ConfusionCounts,
    IndeterminatePredictionError,
    LafParams,
    MetricSet,
    ZeroDivisionPolicy,
    binarize,
    evaluate,
    logical_assessment_metric_build,
    logical_consistency_estimate,
    logical_fact_narrate,
)
from .learn import (
    EmptyFactsError,
    Gradients,
    Model,
    NonFiniteLossError,
    TrainConfig,
    TrainHistory,
    TrainRecord,
    WeightMismatchError,
    check_stop,
    forward,
    init_model,
    surrogate_loss_and_grad,
    train_uttl,
)

__version__ = "0.1.0"

__all__ = [
    "AssessmentFailedError",
    "AssessmentReport",
    "CellState",
    "ConfusionCounts",
    "DegenerateSceneError",
    "EmptyFactsError",
    "EmptySetError",
    "GenParams",
    "Gradients",
    "IndeterminatePredictionError",
    "InfeasibleCoverageError",
    "Instance",
    "LafParams",
    "METRIC_NAMES",
    "MetricSet",
    "MiattSet",
    "Model",
    "NoOverlapError",
    "NonFiniteLossError",
    "NONOBJECT",
    "OBJECT",
    "PartialLabeling",
    "ProbabilityMap",
    "SceneParams",
    "ShapeMismatchError",
    "TrainConfig",
    "TrainHistory",
    "TrainRecord",
    "UNKNOWN",
    "WeightMismatchError",
    "ZeroDivisionPolicy",
    "assess_miatts",
    "binarize",
    "check_stop",
    "derive_ltt",
    "evaluate",
    "fact_count",
    "forward",
    "generate_miatts_abductive",
    "generate_synthetic_scene",
    "init_model",
    "inject_conflicts",
    "logical_assessment_metric_build",
    "logical_consistency_estimate",
    "logical_fact_narrate",
    "restrict",
    "surrogate_loss_and_grad",
    "train_uttl",
]
