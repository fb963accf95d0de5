"""
Inference by task prediction and task-specific finetuning.

The base model scores every learned task on a test batch; the winning task's
model is finetuned from the base model on that task's exemplars and then
classifies within the task's class block.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from src.losses import class_loss
from src.memory import ExemplarMemory
from src.models import DatasetHandle, StageReport, StageSchedule
from src.nets import ExpertModel, clone, forward, to_tensor
from src.train.trainer import make_optimizer
from src.utils.errors import ConfigInvalid, EmptyBatch, MissingTaskExemplars, OutOfRangeTask
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

SCOPES = ('head_only', 'full_model')


@dataclass(frozen=True)
class FinetuneConfig:
    """
    Task-model finetuning settings.

    Attributes:
        epochs: Passes over the task's exemplars
        lr: Learning rate
        scope: 'full_model' or 'head_only'
        batch_size: Mini-batch size over exemplars
        optimizer_id: 'radam' or 'sgd'
    """
    epochs: int = 5
    lr: float = 0.001
    scope: str = 'full_model'
    batch_size: int = 32
    optimizer_id: str = 'radam'

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigInvalid("finetune epochs must be >= 0 and batch_size > 0")
        if self.lr <= 0:
            raise ConfigInvalid(f"finetune lr must be > 0, got {self.lr}")
        if self.scope not in SCOPES:
            raise ConfigInvalid(f"Unknown finetune scope: {self.scope}. Options: {SCOPES}")

    @classmethod
    def from_dict(cls, config: Optional[dict] = None) -> "FinetuneConfig":
        section = (config or {}).get('finetune', {}) or {}
        return cls(
            epochs=int(section.get('epochs', 5)),
            lr=float(section.get('lr', 0.001)),
            scope=str(section.get('scope', 'full_model')),
            batch_size=int(section.get('batch_size', 32)),
            optimizer_id=str(section.get('optimizer', 'radam')).lower(),
        )


@dataclass(frozen=True)
class EvaluationConfig:
    """
    Evaluation protocol.

    Attributes:
        batch_size: Test batch size for task prediction (continuum assumption)
        oracle_task: Also classify with the true task's finetuned model
        single_sample: Also report task prediction on one-sample batches
    """
    batch_size: int = 128
    oracle_task: bool = False
    single_sample: bool = False

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ConfigInvalid(f"evaluation batch_size must be > 0, got {self.batch_size}")

    @classmethod
    def from_dict(cls, config: Optional[dict] = None) -> "EvaluationConfig":
        config = config or {}
        section = config.get('evaluation', {}) or {}
        default_batch = (config.get('train', {}) or {}).get('batch_size', 128)
        return cls(
            batch_size=int(section.get('batch_size') or default_batch),
            oracle_task=bool(section.get('oracle_task', False)),
            single_sample=bool(section.get('single_sample', False)),
        )


@dataclass
class TaskPrediction:
    """
    Task scores of one test batch.

    Attributes:
        predicted_task: 1-based index of the highest-scoring task
        scores: Score per learned task, in task order
        batch_ids: Ids of the evaluated samples
    """
    predicted_task: int
    scores: np.ndarray
    batch_ids: List[int] = field(default_factory=list)


def _logits(model: ExpertModel, inputs) -> torch.Tensor:
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            _, logits = forward(model, inputs)
    finally:
        model.train(was_training)
    return logits


def predict_task(
    base: ExpertModel,
    inputs,
    schedule: StageSchedule,
    num_tasks: Optional[int] = None,
    batch_ids: Optional[Sequence[int]] = None
) -> TaskPrediction:
    """
    Predict the task of a batch drawn from a single task.

    Score of task i = mean over the batch of the largest sigmoid probability
    inside task i's class block. Ties go to the lowest task index.

    Raises:
        EmptyBatch: If the batch is empty
    """
    if len(inputs) == 0:
        raise EmptyBatch("predict_task received an empty batch")

    if num_tasks is None:
        num_tasks = base.head_width // schedule.classes_per_task

    probs = torch.sigmoid(_logits(base, inputs))
    scores = np.array([
        float(probs[:, schedule.columns_of_task(i)].max(dim=1).values.mean())
        for i in range(1, num_tasks + 1)
    ])

    ids = list(batch_ids) if batch_ids is not None else list(range(len(inputs)))
    return TaskPrediction(predicted_task=int(np.argmax(scores)) + 1, scores=scores, batch_ids=ids)


def finetune_task_model(
    base: ExpertModel,
    memory: ExemplarMemory,
    task: int,
    config: FinetuneConfig,
    schedule: StageSchedule,
    seed: int = 0
) -> ExpertModel:
    """
    Finetune a copy of the base model on one task's exemplars.

    The class loss is restricted to the task's class block. The base model
    is never modified.

    Raises:
        MissingTaskExemplars: If the memory holds nothing for the task
    """
    try:
        exemplars = memory.task_exemplars(schedule, task)
    except OutOfRangeTask:
        exemplars = None
    if exemplars is None:
        raise MissingTaskExemplars(f"No exemplars stored for task {task}")

    model = clone(base)
    if config.epochs == 0:
        return model

    block = schedule.columns_of_task(task)
    columns = schedule.to_columns(exemplars.labels) - block.start

    if config.scope == 'head_only':
        for p in model.features.parameters():
            p.requires_grad_(False)
        params = model.head.parameters()
    else:
        params = model.parameters()

    optimizer = make_optimizer(config.optimizer_id, params, config.lr)
    dataset = TensorDataset(to_tensor(exemplars.inputs, model), torch.as_tensor(columns, dtype=torch.long))
    generator = torch.Generator().manual_seed(int(derive_rng(seed, 0xF1E7, task).integers(2 ** 62)))
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True, generator=generator)

    model.train()
    for _ in range(config.epochs):
        for x, y in loader:
            optimizer.zero_grad(set_to_none=True)
            _, logits = forward(model, x)
            loss = class_loss(logits[:, block], y)
            loss.backward()
            optimizer.step()

    model.eval()
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def classify(model: ExpertModel, inputs, block: slice) -> np.ndarray:
    """Head column with the largest logit inside a class block."""
    logits = _logits(model, inputs)[:, block]
    return logits.argmax(dim=1).cpu().numpy() + block.start


class _FinetuneCache:
    """Finetuned model per task, built on first use within one evaluation."""

    def __init__(self, base, memory, config, schedule, seed):
        self.base = base
        self.memory = memory
        self.config = config
        self.schedule = schedule
        self.seed = seed
        self.models: Dict[int, ExpertModel] = {}

    def get(self, task: int) -> ExpertModel:
        if task not in self.models:
            logger.debug(f"Finetuning task model {task}")
            self.models[task] = finetune_task_model(self.base, self.memory, task, self.config,
                                                    self.schedule, seed=self.seed)
        return self.models[task]


def evaluate(
    base: ExpertModel,
    memory: ExemplarMemory,
    test_sets: Dict[int, DatasetHandle],
    schedule: StageSchedule,
    config: Optional[FinetuneConfig] = None,
    evaluation: Optional[EvaluationConfig] = None,
    previous_accuracies: Sequence[float] = (),
    seed: int = 0
) -> StageReport:
    """
    Evaluate the base model over all seen tasks.

    Each task's test data is processed in batches: predict the task, finetune
    (cached per predicted task), classify within the predicted block.

    Args:
        base: Expert model after the current stage
        memory: Exemplar memory including the current task
        test_sets: task index -> test data of that task, for every seen task
        schedule: Class-to-task partition
        config: Finetuning settings
        evaluation: Evaluation protocol
        previous_accuracies: Class accuracies of earlier stages (for the running average)
        seed: Seed for finetuning order

    Returns:
        StageReport for stage max(test_sets)
    """
    config = config or FinetuneConfig()
    evaluation = evaluation or EvaluationConfig()
    if not test_sets:
        raise EmptyBatch("evaluate needs at least one task test set")

    stage = max(test_sets)
    cache = _FinetuneCache(base, memory, config, schedule, seed)

    totals = {"samples": 0, "task": 0, "class": 0, "base": 0, "oracle": 0, "single": 0}
    breakdown: Dict[int, Dict[str, float]] = {}

    for task in sorted(test_sets):
        data = test_sets[task]
        columns = schedule.to_columns(data.labels)
        task_correct = class_correct = 0

        for start in range(0, len(data), evaluation.batch_size):
            x = data.inputs[start:start + evaluation.batch_size]
            y = columns[start:start + evaluation.batch_size]

            prediction = predict_task(base, x, schedule, num_tasks=stage,
                                      batch_ids=range(start, start + len(y)))
            predicted = prediction.predicted_task
            if predicted == task:
                task_correct += len(y)

            model = cache.get(predicted)
            class_correct += int((classify(model, x, schedule.columns_of_task(predicted)) == y).sum())

            seen = slice(0, stage * schedule.classes_per_task)
            totals["base"] += int((classify(base, x, seen) == y).sum())

            if evaluation.oracle_task:
                oracle = cache.get(task)
                totals["oracle"] += int((classify(oracle, x, schedule.columns_of_task(task)) == y).sum())

            if evaluation.single_sample:
                for i in range(len(y)):
                    single = predict_task(base, x[i:i + 1], schedule, num_tasks=stage)
                    totals["single"] += int(single.predicted_task == task)

        n = len(data)
        totals["samples"] += n
        totals["task"] += task_correct
        totals["class"] += class_correct
        breakdown[task] = {
            "task_accuracy": task_correct / n if n else 0.0,
            "class_accuracy": class_correct / n if n else 0.0,
            "samples": n,
        }

    n = totals["samples"]
    if n == 0:
        raise EmptyBatch("Test sets contain no samples")

    class_accuracy = totals["class"] / n
    accuracies = list(previous_accuracies) + [class_accuracy]

    return StageReport(
        stage=stage,
        seen_classes=stage * schedule.classes_per_task,
        task_accuracy=totals["task"] / n,
        class_accuracy=class_accuracy,
        avg_incremental_accuracy=float(np.mean(accuracies)),
        per_task_breakdown=breakdown,
        base_class_accuracy=totals["base"] / n,
        oracle_class_accuracy=totals["oracle"] / n if evaluation.oracle_task else None,
        single_sample_task_accuracy=totals["single"] / n if evaluation.single_sample else None,
    )
