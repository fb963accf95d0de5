"""Stage training with per-task model averaging."""

from .trainer import (
    TrainConfig,
    StageState,
    make_optimizer,
    train_minibatch,
    train_stage,
    run_experiment,
    epoch_means,
)

__all__ = [
    "TrainConfig",
    "StageState",
    "make_optimizer",
    "train_minibatch",
    "train_stage",
    "run_experiment",
    "epoch_means",
]
