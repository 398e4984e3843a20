"""Prompt-conditioned transformer for task-conditional multi-task dense prediction.

Pure numpy implementation with its own reverse-mode autodiff, a synthetic
multi-task dataset, exact parameter accounting and the usual dense-prediction
metrics.
"""

from .accounting import ParamReport, ParamStore, growth_curves, partition
from .analysis import feature_heatmap, prompt_similarity
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NumericAbort,
    PGTError,
    ShapeError,
    UndefinedMetricError,
)
from .metrics import MetricsReport, delta_m, mean_angle, miou, ods_f, rmse
from .model import PGT, ModelConfig, PromptBank, TaskSpec, swin_t_config, task_preset, tiny_config
from .numerics import Tape, Tensor, grad_check
from .synthdata import Scene, augment, gen_scene
from .trainer import AdamW, TrainConfig, evaluate, fit, task_loss, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ConfigError", "ContractError", "DataError", "MetricsReport", "ModelConfig",
    "NumericAbort", "PGT", "PGTError", "ParamReport", "ParamStore", "PromptBank", "Scene",
    "ShapeError", "TaskSpec", "Tape", "Tensor", "TrainConfig", "UndefinedMetricError",
    "augment", "delta_m", "evaluate", "feature_heatmap", "fit", "gen_scene", "grad_check",
    "growth_curves", "mean_angle", "miou", "ods_f", "partition", "prompt_similarity", "rmse",
    "swin_t_config", "task_loss", "task_preset", "tiny_config", "train_step",
]
