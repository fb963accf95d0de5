"""Task prediction and task-specific finetuning at inference time."""

from .task_inference import (
    FinetuneConfig,
    EvaluationConfig,
    TaskPrediction,
    predict_task,
    finetune_task_model,
    classify,
    evaluate,
)

__all__ = [
    "FinetuneConfig",
    "EvaluationConfig",
    "TaskPrediction",
    "predict_task",
    "finetune_task_model",
    "classify",
    "evaluate",
]
