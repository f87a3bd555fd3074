"""simtwin: learn virtual environment models from closed-loop logs, verify by simulation."""

from .core import (
    ConfigurationError,
    DataError,
    Dataset,
    HistoryWindow,
    NormSpec,
    Trajectory,
    TrajectoryMeta,
    extract_sigma0,
    make_dataset,
    rollout,
)
from .laneworld import (
    ControllerConfig,
    LaneKeepingController,
    LaneOracle,
    collect_fot_logs,
)
from .trainers import (
    BcHyper,
    GailHyper,
    TrainedModel,
    TrainingDiverged,
    train_bc,
    train_bcxgail,
    train_gail,
)
from .verification import (
    BandSpec,
    DrivingMetrics,
    RequirementSet,
    VerificationReport,
    compute_metrics,
    random_baseline,
    verification_accuracy,
)

__version__ = "0.1.0"

__all__ = [
    "BandSpec",
    "BcHyper",
    "ConfigurationError",
    "ControllerConfig",
    "DataError",
    "Dataset",
    "DrivingMetrics",
    "GailHyper",
    "HistoryWindow",
    "LaneKeepingController",
    "LaneOracle",
    "NormSpec",
    "RequirementSet",
    "TrainedModel",
    "TrainingDiverged",
    "Trajectory",
    "TrajectoryMeta",
    "VerificationReport",
    "collect_fot_logs",
    "compute_metrics",
    "extract_sigma0",
    "make_dataset",
    "random_baseline",
    "rollout",
    "train_bc",
    "train_bcxgail",
    "train_gail",
    "verification_accuracy",
]
