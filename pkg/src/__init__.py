"""
TKIL - Class-incremental learning with task-model averaging

Trains one expert model over a stream of tasks with exemplar memory,
distillation and a gradient tangent kernel loss, and classifies by predicting
the task of a test batch and finetuning a task-specific model.
"""

__version__ = "0.1.0"

from src.models import DatasetHandle, StageSchedule, StageReport
from src.ingest import DatasetLoader, build_schedule
from src.train import TrainConfig, run_experiment

__all__ = [
    "DatasetHandle",
    "StageSchedule",
    "StageReport",
    "DatasetLoader",
    "build_schedule",
    "TrainConfig",
    "run_experiment",
    "__version__",
]
