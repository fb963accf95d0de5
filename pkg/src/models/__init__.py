"""Data models for TKIL."""

from .dataset import DatasetHandle
from .schedule import StageSchedule
from .reports import GroupLoss, LossRecord, StageReport

__all__ = [
    "DatasetHandle",
    "StageSchedule",
    "GroupLoss",
    "LossRecord",
    "StageReport",
]
