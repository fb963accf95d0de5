"""Dataset ingestion and the class-incremental task stream."""

from .task_stream import build_schedule, stage_data, make_synthetic_blobs
from .dataset_loader import DatasetLoader, read_idx, normalize_per_channel

__all__ = [
    "build_schedule",
    "stage_data",
    "make_synthetic_blobs",
    "DatasetLoader",
    "read_idx",
    "normalize_per_channel",
]
