"""Loss terms: classification, distillation and gradient tangent kernel."""

from .tkil_losses import (
    LossWeights,
    GradientVector,
    LossBreakdown,
    class_loss,
    kd_loss,
    feature_gradient,
    extract_feature_gradient,
    gtk_loss,
    combined_loss,
)

__all__ = [
    "LossWeights",
    "GradientVector",
    "LossBreakdown",
    "class_loss",
    "kd_loss",
    "feature_gradient",
    "extract_feature_gradient",
    "gtk_loss",
    "combined_loss",
]
