"""
Loss terms of the TKIL objective.

- class_loss: BCE between sigmoid(logits) and one-hot targets
- kd_loss: BCE between the current's and the frozen previous model's probabilities
- gtk_loss: BCE-on-cosine between the current and the previous model's
  gradient of the classification loss w.r.t. the last feature layer
- combined_loss: α·class + β·KD + γ·GTK on memory groups, class only on the
  current task's group
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Union

import torch
import torch.nn.functional as F

from src.models import GroupLoss
from src.nets import ExpertModel, forward, to_tensor
from src.utils.errors import (
    ConfigInvalid, EmptyBatch, LabelOutOfRange, ShapeMismatch, ZeroGradient,
)

logger = logging.getLogger(__name__)

GTK_EPSILON = 1e-7
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """
    Scalars of the combined objective.

    Attributes:
        alpha: Weight of the classification loss on memory groups
        beta: Weight of the distillation loss
        gamma: Weight of the gradient tangent kernel loss
    """
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ConfigInvalid(f"Loss weight {name} must be finite and >= 0, got {value}")

    @classmethod
    def from_dict(cls, config: Optional[dict] = None) -> "LossWeights":
        config = config or {}
        return cls(
            alpha=float(config.get('alpha', 1.0)),
            beta=float(config.get('beta', 1.0)),
            gamma=float(config.get('gamma', 0.1)),
        )


@dataclass
class GradientVector:
    """
    Flattened gradient of a loss w.r.t. the last feature layer.

    Attributes:
        values: 1-D tensor (may carry a graph when built with create_graph)
        source_stage: Stage of the model that produced it
        task_group: Task group of the batch it was computed on
    """
    values: torch.Tensor
    source_stage: int = 0
    task_group: int = 0

    def __len__(self) -> int:
        return int(self.values.numel())


@dataclass
class LossBreakdown:
    """Differentiable total plus its individual terms."""
    total: torch.Tensor
    class_loss: torch.Tensor
    kd_loss: Optional[torch.Tensor] = None
    gtk_loss: Optional[torch.Tensor] = None
    gtk_skipped: bool = False

    def to_group_loss(self, task_group: int, size: int) -> GroupLoss:
        return GroupLoss(
            task_group=task_group,
            size=size,
            class_loss=float(self.class_loss.detach()),
            kd_loss=float(self.kd_loss.detach()) if self.kd_loss is not None else 0.0,
            gtk_loss=float(self.gtk_loss.detach()) if self.gtk_loss is not None else 0.0,
            total=float(self.total.detach()),
            gtk_skipped=self.gtk_skipped,
        )


def _as_labels(labels, device: torch.device) -> torch.Tensor:
    if torch.is_tensor(labels):
        return labels.to(device=device, dtype=torch.long)
    return torch.as_tensor(labels, dtype=torch.long, device=device)


def class_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """
    Mean BCE over batch and classes against one-hot targets.

    Args:
        logits: (batch, head_width)
        labels: Head column index per sample

    Raises:
        LabelOutOfRange: If a label is not a column of the head
        EmptyBatch: If the batch is empty
    """
    labels = _as_labels(labels, logits.device)
    width = logits.shape[1]
    if labels.numel() == 0:
        raise EmptyBatch("class_loss received an empty batch")
    if labels.min() < 0 or labels.max() >= width:
        raise LabelOutOfRange(
            f"Labels must lie in [0, {width}), got [{int(labels.min())}, {int(labels.max())}]"
        )
    targets = F.one_hot(labels, width).to(logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, targets)


def kd_loss(current_logits: torch.Tensor, previous_logits: torch.Tensor) -> torch.Tensor:
    """
    Mean BCE between sigmoid(current) and sigmoid(previous) as soft targets.

    Only the previous model's head width is compared; extra current logits are ignored.

    Raises:
        ShapeMismatch: If batch sizes differ or the current head is narrower
    """
    if (current_logits.shape[0] != previous_logits.shape[0]
            or current_logits.shape[1] < previous_logits.shape[1]):
        raise ShapeMismatch(
            f"Current model logits {tuple(current_logits.shape)} cannot cover "
            f"previous logits {tuple(previous_logits.shape)}"
        )
    width = previous_logits.shape[1]
    soft_targets = torch.sigmoid(previous_logits.detach())
    return F.binary_cross_entropy_with_logits(current_logits[:, :width], soft_targets)


def feature_gradient(loss: torch.Tensor, model: ExpertModel, create_graph: bool = False) -> torch.Tensor:
    """Flattened d(loss)/d(last feature layer weights)."""
    grad, = torch.autograd.grad(loss, model.feature_layer(), create_graph=create_graph)
    return grad.reshape(-1)


def extract_feature_gradient(
    model: ExpertModel,
    inputs,
    labels,
    loss_fn: Optional[Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = None,
    create_graph: bool = False,
    source_stage: int = 0,
    task_group: int = 0,
    width: Optional[int] = None
) -> GradientVector:
    """
    Gradient of a batch loss w.r.t. the model's last feature layer.

    Args:
        model: Model to differentiate
        inputs: Batch of inputs
        labels: Head columns (or loss_fn targets)
        loss_fn: Loss on (logits, labels); class_loss by default
        create_graph: Keep the graph so the result can be differentiated again
        source_stage: Recorded on the returned vector
        task_group: Recorded on the returned vector
        width: Only use the first `width` logits (None = whole head)

    Raises:
        EmptyBatch: If the batch has no samples
    """
    if len(labels) == 0:
        raise EmptyBatch("Cannot take a gradient over an empty batch")

    _, logits = forward(model, inputs)
    if width is not None:
        logits = logits[:, :width]

    if loss_fn is None:
        loss = class_loss(logits, labels)
    else:
        targets = labels if torch.is_tensor(labels) else to_tensor(labels, model)
        loss = loss_fn(logits, targets)

    values = feature_gradient(loss, model, create_graph=create_graph)
    if not create_graph:
        values = values.detach()
    return GradientVector(values=values, source_stage=source_stage, task_group=task_group)


def gtk_loss(
    g_current: Union[GradientVector, torch.Tensor],
    g_previous: Union[GradientVector, torch.Tensor],
    epsilon: float = GTK_EPSILON
) -> torch.Tensor:
    """
    Gradient tangent kernel loss: -log((1 + cos) / 2), clamped.

    Zero when both gradients point the same way, ln 2 when orthogonal and
    -log(epsilon) when opposite.

    Raises:
        ShapeMismatch: If the vectors differ in length
        ZeroGradient: If either norm is below 1e-12
    """
    a = g_current.values if isinstance(g_current, GradientVector) else g_current
    b = g_previous.values if isinstance(g_previous, GradientVector) else g_previous
    a, b = a.reshape(-1), b.reshape(-1)

    if a.shape != b.shape:
        raise ShapeMismatch(f"Gradient lengths differ: {a.numel()} vs {b.numel()}")

    norm_a, norm_b = a.norm(), b.norm()
    if float(norm_a) < ZERO_NORM or float(norm_b) < ZERO_NORM:
        raise ZeroGradient(
            f"Degenerate gradient (norms {float(norm_a):.3e}, {float(norm_b):.3e})"
        )

    cos = torch.dot(a, b) / (norm_a * norm_b)
    p = ((1.0 + cos) / 2.0).clamp(epsilon, 1.0 - epsilon)
    return -torch.log(p)


def combined_loss(
    model: ExpertModel,
    previous_model: Optional[ExpertModel],
    inputs,
    labels,
    weights: LossWeights,
    is_current_task: bool,
    absorb_zero_gradient: bool = True
) -> LossBreakdown:
    """
    Objective of one task model on its task group.

    Current task: class loss only. Memory groups:
    α·class + β·KD + γ·GTK, where the previous model's gradient is a constant and
    the task model's gradient is kept differentiable (second-order path).
    Both gradients are taken of the classification loss over the previous model's
    head columns so they measure the same function.

    Args:
        model: Task model being optimized
        previous_model: Frozen previous expert (required for memory groups)
        inputs: Group inputs
        labels: Head columns of the group samples
        weights: α, β, γ
        is_current_task: True for the group of the stage's own task
        absorb_zero_gradient: Skip (and record) a degenerate GTK term instead of raising

    Raises:
        ValueError: If a memory group is given without a previous model
        ZeroGradient: Only when absorb_zero_gradient is False
    """
    x = to_tensor(inputs, model)
    y = _as_labels(labels, x.device)

    _, logits = forward(model, x)
    cls = class_loss(logits, y)

    if is_current_task:
        return LossBreakdown(total=cls, class_loss=cls)

    if previous_model is None:
        raise ValueError("A previous model is required for memory task groups")

    total = weights.alpha * cls
    breakdown = LossBreakdown(total=total, class_loss=cls)

    previous_width = previous_model.head_width

    if weights.beta > 0:
        with torch.no_grad():
            _, previous_logits = forward(previous_model, x)
        breakdown.kd_loss = kd_loss(logits, previous_logits)
        total = total + weights.beta * breakdown.kd_loss

    if weights.gamma > 0:
        old_class_loss = class_loss(logits[:, :previous_width], y)
        g_current = feature_gradient(old_class_loss, model, create_graph=True)
        g_previous = extract_feature_gradient(previous_model, x, y).values
        try:
            breakdown.gtk_loss = gtk_loss(g_current, g_previous)
            total = total + weights.gamma * breakdown.gtk_loss
        except ZeroGradient as e:
            if not absorb_zero_gradient:
                raise
            breakdown.gtk_skipped = True
            logger.warning(f"GTK term skipped: {e}")

    breakdown.total = total
    return breakdown
