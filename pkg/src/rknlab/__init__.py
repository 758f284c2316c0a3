"""State-estimation lab: Kalman baselines and a learned-gain recurrent
estimator with calibrated error covariances."""

from .errors import (ConfigError, Diverged, EmptyEnsemble, FingerprintMismatch,
                     FormatVersionMismatch, InvalidParameter,
                     NotPositiveDefinite, ParseError, RknError, SpecMismatch)
from .kalman import (FilterRun, FilterState, MeasurementNoisePolicy,
                     run_kalman_filter)
from .rkn import RknModel, run_rkn
from .statespace import (BimodalNoiseSpec, Dataset, DatasetConfig,
                         LinearStateSpaceModel, Trajectory, generate_dataset,
                         load_dataset, make_constant_velocity_model,
                         noise_from_heterogeneity, sample_trajectory,
                         save_dataset)
from .training import TrainingConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BimodalNoiseSpec", "ConfigError", "Dataset", "DatasetConfig", "Diverged",
    "EmptyEnsemble", "FilterRun", "FilterState", "FingerprintMismatch",
    "FormatVersionMismatch", "InvalidParameter", "LinearStateSpaceModel",
    "MeasurementNoisePolicy", "NotPositiveDefinite", "ParseError", "RknError",
    "RknModel", "SpecMismatch", "Trajectory", "TrainingConfig",
    "generate_dataset", "load_checkpoint", "load_dataset",
    "make_constant_velocity_model", "noise_from_heterogeneity", "run_kalman_filter",
    "run_rkn", "sample_trajectory", "save_checkpoint", "save_dataset", "train",
]
