"""Exemplar memory and batch composition."""

from .exemplar_memory import (
    ExemplarMemory,
    GroupedBatch,
    update_memory,
    sample_batch,
    steps_per_epoch,
)

__all__ = [
    "ExemplarMemory",
    "GroupedBatch",
    "update_memory",
    "sample_batch",
    "steps_per_epoch",
]
