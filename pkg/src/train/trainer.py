"""
Class-incremental training with per-task model averaging.

One mini-batch: every task group present clones the current model, takes
`inner_steps_per_group` optimizer steps on its own objective, and the clones
are averaged back into the current model. A stage repeats this over the
pooled current-task data and memory for a number of epochs; an experiment
repeats stages over the task stream.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from src.ingest import stage_data as select_stage_data
from src.losses import LossWeights, combined_loss
from src.memory import ExemplarMemory, GroupedBatch, sample_batch, steps_per_epoch, update_memory
from src.models import DatasetHandle, LossRecord, StageReport, StageSchedule
from src.nets import ExpertModel, average_weights, build_model, clone, grow_head, save_checkpoint
from src.utils.errors import ConfigInvalid, EmptyBatch, OutOfRangeTask

logger = logging.getLogger(__name__)

OPTIMIZERS = {
    'radam': torch.optim.RAdam,
    'sgd': torch.optim.SGD,
}

DTYPES = {
    'float32': torch.float32,
    'float64': torch.float64,
}


@dataclass(frozen=True)
class TrainConfig:
    """
    Training hyperparameters.

    Attributes:
        epochs: Passes over D_t ∪ M_t per stage
        batch_size: Mini-batch size
        lr_initial: Learning rate of the first epoch
        lr_decay_every: Epochs between learning-rate decays
        lr_decay_factor: Multiplier applied at each decay (0 < f <= 1)
        inner_steps_per_group: Optimizer steps of each task model per mini-batch
        loss_weights: α, β, γ
        seed: Seed for initialization, batching and memory sampling
        optimizer_id: 'radam' or 'sgd'
        average_includes_untrained_clones: Average over all t tasks, padding
            absent groups with unmodified clones
        disable_kd: Drop the distillation term (β = 0)
        disable_gtk: Drop the GTK term (γ = 0)
        disable_averaging: Train one model per mini-batch instead of per-task clones
        head_init_scale: Std of new head rows
        dtype: 'float32' or 'float64'
        device: torch device string
    """
    epochs: int = 70
    batch_size: int = 128
    lr_initial: float = 0.01
    lr_decay_every: int = 20
    lr_decay_factor: float = 0.1
    inner_steps_per_group: int = 1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    optimizer_id: str = 'radam'
    average_includes_untrained_clones: bool = False
    disable_kd: bool = False
    disable_gtk: bool = False
    disable_averaging: bool = False
    head_init_scale: float = 0.01
    dtype: str = 'float32'
    device: str = 'cpu'

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.inner_steps_per_group <= 0:
            raise ConfigInvalid("epochs must be >= 0; batch_size and inner_steps_per_group > 0")
        if self.lr_initial < 0:
            raise ConfigInvalid(f"lr_initial must be >= 0, got {self.lr_initial}")
        if self.lr_decay_every <= 0 or not 0 < self.lr_decay_factor <= 1:
            raise ConfigInvalid("lr_decay_every must be > 0 and 0 < lr_decay_factor <= 1")
        if self.optimizer_id not in OPTIMIZERS:
            raise ConfigInvalid(f"Unknown optimizer: {self.optimizer_id}. Options: {list(OPTIMIZERS)}")
        if self.dtype not in DTYPES:
            raise ConfigInvalid(f"Unknown dtype: {self.dtype}. Options: {list(DTYPES)}")

    @classmethod
    def from_dict(cls, config: Optional[dict] = None) -> "TrainConfig":
        """Build from the 'train', 'loss_weights' and 'ablation' sections."""
        config = config or {}
        train = config.get('train', {}) or {}
        ablation = config.get('ablation', {}) or {}
        return cls(
            epochs=int(train.get('epochs', 70)),
            batch_size=int(train.get('batch_size', 128)),
            lr_initial=float(train.get('lr_initial', 0.01)),
            lr_decay_every=int(train.get('lr_decay_every', 20)),
            lr_decay_factor=float(train.get('lr_decay_factor', 0.1)),
            inner_steps_per_group=int(train.get('inner_steps_per_group', 1)),
            loss_weights=LossWeights.from_dict(config.get('loss_weights', {})),
            seed=int(train.get('seed', 0)),
            optimizer_id=str(train.get('optimizer', 'radam')).lower(),
            average_includes_untrained_clones=bool(train.get('average_includes_untrained_clones', False)),
            disable_kd=bool(ablation.get('disable_kd', False)),
            disable_gtk=bool(ablation.get('disable_gtk', False)),
            disable_averaging=bool(ablation.get('disable_averaging', False)),
            head_init_scale=float(train.get('head_init_scale', 0.01)),
            dtype=str(train.get('dtype', 'float32')),
            device=str(train.get('device', 'cpu')),
        )

    def effective_weights(self) -> LossWeights:
        """Loss weights after applying the ablation switches."""
        return LossWeights(
            alpha=self.loss_weights.alpha,
            beta=0.0 if self.disable_kd else self.loss_weights.beta,
            gamma=0.0 if self.disable_gtk else self.loss_weights.gamma,
        )

    def lr_at(self, epoch: int) -> float:
        """Step schedule: lr_initial * factor^(epoch // every)."""
        return self.lr_initial * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


@dataclass
class StageState:
    """
    Everything training stage t needs.

    Attributes:
        stage_index: t (1-based)
        current_model: Model being trained (head already covers task t)
        previous_model: Frozen expert of stage t-1 (None at t = 1)
        memory: Exemplars of tasks 1..t-1
        schedule: Class-to-task partition
    """
    stage_index: int
    current_model: ExpertModel
    previous_model: Optional[ExpertModel]
    memory: ExemplarMemory
    schedule: StageSchedule

    def __post_init__(self):
        if self.previous_model is None and self.stage_index > 1:
            raise ConfigInvalid(f"Stage {self.stage_index} needs a previous model")
        if self.previous_model is not None and self.previous_model.head_width > self.current_model.head_width:
            raise ConfigInvalid("Previous model head is wider than the current model's head")


def make_optimizer(optimizer_id: str, params, lr: float) -> torch.optim.Optimizer:
    return OPTIMIZERS[optimizer_id](params, lr=lr)


def _task_model_step(
    state: StageState,
    task: int,
    inputs: np.ndarray,
    columns: np.ndarray,
    config: TrainConfig,
    lr: float
):
    """Clone the current model and optimize it on one task group."""
    task_model = clone(state.current_model)
    task_model.train()
    optimizer = make_optimizer(config.optimizer_id, task_model.parameters(), lr)
    weights = config.effective_weights()

    breakdown = None
    for _ in range(config.inner_steps_per_group):
        optimizer.zero_grad(set_to_none=True)
        breakdown = combined_loss(task_model, state.previous_model, inputs, columns, weights,
                                  is_current_task=(task == state.stage_index))
        breakdown.total.backward()
        optimizer.step()
    return task_model, breakdown


def _joint_step(state: StageState, batch: GroupedBatch, config: TrainConfig, lr: float, record: LossRecord):
    """Single model on the size-weighted sum of group objectives (no averaging)."""
    model = clone(state.current_model)
    model.train()
    optimizer = make_optimizer(config.optimizer_id, model.parameters(), lr)
    weights = config.effective_weights()
    n = len(batch)

    for inner in range(config.inner_steps_per_group):
        optimizer.zero_grad(set_to_none=True)
        total = 0.0
        groups = []
        for task, x, y in batch:
            breakdown = combined_loss(model, state.previous_model, x, state.schedule.to_columns(y),
                                      weights, is_current_task=(task == state.stage_index))
            total = total + breakdown.total * (len(y) / n)
            groups.append(breakdown.to_group_loss(task, len(y)))
        total.backward()
        optimizer.step()
        if inner == 0:
            record.groups = groups
    return model


def train_minibatch(
    state: StageState,
    batch: GroupedBatch,
    config: TrainConfig,
    lr: Optional[float] = None,
    epoch: int = 0,
    step: int = 0
) -> Tuple[ExpertModel, LossRecord]:
    """
    One mini-batch of the averaged per-task update.

    For each task group i: clone the current model; i < t optimizes
    α·class + β·KD + γ·GTK, i = t optimizes the class loss; then average the
    task models elementwise.

    Args:
        state: Current stage state
        batch: Mini-batch grouped by task
        config: Training configuration
        lr: Learning rate (defaults to config.lr_initial)
        epoch: Epoch index, recorded in the loss record
        step: Step index, recorded in the loss record

    Returns:
        (new current model, loss record of this step)

    Raises:
        EmptyBatch: If the batch has no samples
        OutOfRangeTask: If a group belongs to a task after t
    """
    if len(batch) == 0:
        raise EmptyBatch("train_minibatch received an empty batch")
    for task in batch.tasks:
        if not 1 <= task <= state.stage_index:
            raise OutOfRangeTask(f"Group of task {task} at stage {state.stage_index}")

    lr = config.lr_initial if lr is None else lr
    if state.previous_model is not None:
        state.previous_model.eval()
    record = LossRecord(stage=state.stage_index, epoch=epoch, step=step, lr=lr)

    if config.disable_averaging:
        return _joint_step(state, batch, config, lr, record), record

    task_models = []
    for task, x, y in batch:
        columns = state.schedule.to_columns(y)
        task_model, breakdown = _task_model_step(state, task, x, columns, config, lr)
        task_models.append(task_model)
        group = breakdown.to_group_loss(task, len(y))
        record.groups.append(group)
        logger.debug(
            f"stage {state.stage_index} step {step} task {task}: "
            f"class={group.class_loss:.4f} kd={group.kd_loss:.4f} gtk={group.gtk_loss:.4f}"
        )

    if config.average_includes_untrained_clones:
        missing = state.stage_index - len(task_models)
        task_models.extend(clone(state.current_model) for _ in range(missing))

    return average_weights(task_models), record


def train_stage(
    state: StageState,
    stage_data: DatasetHandle,
    config: TrainConfig,
    on_step: Optional[Callable[[LossRecord], None]] = None
) -> Tuple[ExpertModel, List[LossRecord]]:
    """
    Run `epochs` passes of train_minibatch over batches drawn from D_t ∪ M_t.

    Returns:
        (expert model F_t, one LossRecord per step)
    """
    steps = steps_per_epoch(state.memory, stage_data, config.batch_size)
    batch_seed = config.seed * 1000 + state.stage_index

    logger.info(
        f"Stage {state.stage_index}: {len(stage_data)} new samples, {len(state.memory)} exemplars, "
        f"{config.epochs} epochs x {steps} steps"
    )
    if config.lr_decay_factor < 1:
        logger.warning(
            f"lr_decay_factor {config.lr_decay_factor} is read as a multiplier: learning rate "
            f"{config.lr_initial} decays x{config.lr_decay_factor} every {config.lr_decay_every} epochs"
        )

    model = state.current_model
    records: List[LossRecord] = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for k in range(steps):
            step = epoch * steps + k
            batch = sample_batch(state.memory, stage_data, config.batch_size,
                                 seed=batch_seed, step=step, schedule=state.schedule)
            model, record = train_minibatch(replace(state, current_model=model), batch,
                                            config, lr=lr, epoch=epoch, step=step)
            records.append(record)
            if on_step is not None:
                on_step(record)

    return model, records


def epoch_means(records: List[LossRecord]) -> List[float]:
    """Mean step loss per epoch."""
    by_epoch: Dict[int, List[float]] = {}
    for record in records:
        by_epoch.setdefault(record.epoch, []).append(record.total)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def run_experiment(
    train_set: DatasetHandle,
    test_set: DatasetHandle,
    schedule: StageSchedule,
    config: TrainConfig,
    memory_budget: int,
    arch_id: str = 'mlp',
    arch_kwargs: Optional[dict] = None,
    finetune=None,
    evaluation=None,
    output_dir: Optional[Path] = None,
    on_record: Optional[Callable[[dict], None]] = None
) -> List[StageReport]:
    """
    Train and evaluate over the whole task stream.

    For t = 1..N: grow the head, train the stage, add task t to the memory,
    evaluate on every seen task and keep a frozen copy of F_t for the next stage.

    Args:
        train_set: Training split
        test_set: Test split
        schedule: Class-to-task partition
        config: Training configuration
        memory_budget: Total exemplar budget
        arch_id: Backbone identifier
        arch_kwargs: Backbone constructor arguments
        finetune: FinetuneConfig for inference (defaults if None)
        evaluation: EvaluationConfig for inference (defaults if None)
        output_dir: Where per-stage checkpoints and memory snapshots go (None = not saved)
        on_record: Callback receiving every step/stage record as a dict

    Returns:
        One StageReport per stage

    Raises:
        ConfigInvalid: If the memory budget cannot hold one exemplar per scheduled class
    """
    scheduled = len(schedule.class_order)
    if memory_budget < scheduled:
        raise ConfigInvalid(
            f"memory_budget {memory_budget} leaves some of the {scheduled} scheduled classes without exemplars"
        )

    # Deferred: src.inference imports make_optimizer from this module.
    from src.inference import EvaluationConfig, FinetuneConfig, evaluate

    finetune = finetune or FinetuneConfig()
    evaluation = evaluation or EvaluationConfig(batch_size=config.batch_size)

    memory = ExemplarMemory(budget=memory_budget, name=train_set.name)
    model: Optional[ExpertModel] = None
    previous: Optional[ExpertModel] = None
    reports: List[StageReport] = []

    def emit_step(record: LossRecord) -> None:
        if on_record is not None:
            on_record({**record.to_dict(), "seed": config.seed})

    for t in range(1, schedule.num_tasks + 1):
        if model is None:
            model = build_model(arch_id, train_set.input_shape, schedule.classes_per_task,
                                seed=config.seed, dtype=config.torch_dtype, device=config.device,
                                **(arch_kwargs or {}))
        else:
            model = grow_head(model, schedule.classes_per_task, seed=config.seed * 1000 + t,
                              init_scale=config.head_init_scale)

        state = StageState(stage_index=t, current_model=model, previous_model=previous,
                           memory=memory, schedule=schedule)
        data_t = select_stage_data(train_set, schedule, t)
        model, records = train_stage(state, data_t, config, on_step=emit_step)

        memory = update_memory(memory, data_t, seed=config.seed * 1000 + t)

        test_sets = {i: select_stage_data(test_set, schedule, i) for i in range(1, t + 1)}
        report = evaluate(model, memory, test_sets, schedule, finetune, evaluation,
                          previous_accuracies=[r.class_accuracy for r in reports],
                          seed=config.seed)
        report.epoch_losses = epoch_means(records)
        report.seed = config.seed
        reports.append(report)

        logger.info(
            f"Stage {t}/{schedule.num_tasks}: task acc {report.task_accuracy:.3f}, "
            f"class acc {report.class_accuracy:.3f}, avg inc acc {report.avg_incremental_accuracy:.3f}"
        )
        if on_record is not None:
            on_record({**report.to_dict(), "kind": "stage"})

        if output_dir is not None:
            output_dir = Path(output_dir)
            save_checkpoint(model, output_dir / f"stage{t}.pt", stage=t)
            memory.save(output_dir / f"memory_stage{t}.npz")

        previous = clone(model).eval()

    return reports
