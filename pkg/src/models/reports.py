"""
Per-step and per-stage records produced by training and evaluation.

Both serialize to flat JSON-compatible dicts; they are what the metric stream
and the results bundle persist, and every rendered number is recomputed from
them.
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional


@dataclass
class GroupLoss:
    """Loss terms of one task model on one mini-batch group."""
    task_group: int
    size: int
    class_loss: float
    kd_loss: float = 0.0
    gtk_loss: float = 0.0
    total: float = 0.0
    gtk_skipped: bool = False


@dataclass
class LossRecord:
    """
    Loss trace entry for one training step (one mini-batch).

    Attributes:
        stage: Stage index t
        epoch: Epoch within the stage (0-based)
        step: Step within the stage (0-based)
        lr: Learning rate used by the task models
        groups: Loss terms per task group trained in this step
    """
    stage: int
    epoch: int
    step: int
    lr: float
    groups: List[GroupLoss] = field(default_factory=list)

    @property
    def total(self) -> float:
        """Size-weighted mean of group totals."""
        n = sum(g.size for g in self.groups)
        if n == 0:
            return 0.0
        return sum(g.total * g.size for g in self.groups) / n

    def to_dict(self) -> dict:
        record = asdict(self)
        record["kind"] = "step"
        record["total"] = self.total
        return record


@dataclass
class StageReport:
    """
    Metrics after finishing stage t.

    Attributes:
        stage: Stage index t
        seen_classes: Number of classes learned so far
        task_accuracy: Fraction of test batches whose task was predicted correctly
        class_accuracy: Accuracy over all seen classes (predicted task + finetune)
        avg_incremental_accuracy: Mean of class_accuracy over stages 1..t
        per_task_breakdown: task index -> {"task_accuracy", "class_accuracy", "samples"}
        base_class_accuracy: Accuracy of the base model's argmax over seen logits
        oracle_class_accuracy: Accuracy when the true task is given (if evaluated)
        single_sample_task_accuracy: Task accuracy with one-sample batches (if evaluated)
        epoch_losses: Mean step loss per training epoch of this stage
        seed: Seed of the run that produced this report
    """
    stage: int
    seen_classes: int
    task_accuracy: float
    class_accuracy: float
    avg_incremental_accuracy: float
    per_task_breakdown: Dict[int, Dict[str, float]] = field(default_factory=dict)
    base_class_accuracy: Optional[float] = None
    oracle_class_accuracy: Optional[float] = None
    single_sample_task_accuracy: Optional[float] = None
    epoch_losses: List[float] = field(default_factory=list)
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        record = asdict(self)
        record["per_task_breakdown"] = {
            str(k): v for k, v in self.per_task_breakdown.items()
        }
        return record

    @classmethod
    def from_dict(cls, data: dict) -> "StageReport":
        data = dict(data)
        data.pop("kind", None)
        data["per_task_breakdown"] = {
            int(k): v for k, v in (data.get("per_task_breakdown") or {}).items()
        }
        return cls(**data)
