"""
Labeled classification data held in memory.

A DatasetHandle is the unit every other module consumes: the task stream
filters it, the memory samples from it and the trainer batches it.
"""

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from src.utils.errors import LabelOutOfRange, ShapeMismatch


@dataclass(frozen=True)
class DatasetHandle:
    """
    An ordered, read-only collection of (input, label) samples.

    Attributes:
        name: Dataset identifier (e.g. "blobs", "digits")
        inputs: Array of shape (n, *input_shape)
        labels: Integer class ids of shape (n,)
        split: "train" or "test"
        num_classes: Total number of classes of the source dataset
    """
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.num_classes is None:
            inferred = int(self.labels.max()) + 1 if len(self.labels) else 0
            object.__setattr__(self, "num_classes", inferred)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelOutOfRange(
                f"Labels must lie in [0, {self.num_classes}), "
                f"got [{self.labels.min()}, {self.labels.max()}]"
            )
        # Own read-only copies; the caller's arrays stay writable.
        for name in ("inputs", "labels"):
            array = getattr(self, name)
            if array.flags.writeable:
                array = array.copy()
                array.setflags(write=False)
                object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[Tuple[np.ndarray, int]]:
        for x, y in zip(self.inputs, self.labels):
            yield x, int(y)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    @property
    def classes(self) -> np.ndarray:
        """Sorted unique class ids present."""
        return np.unique(self.labels)

    def subset(self, mask_or_index: np.ndarray) -> "DatasetHandle":
        """Return the samples selected by a boolean mask or index array, order kept."""
        return DatasetHandle(
            name=self.name,
            inputs=np.ascontiguousarray(self.inputs[mask_or_index]),
            labels=np.ascontiguousarray(self.labels[mask_or_index]),
            split=self.split,
            num_classes=self.num_classes,
        )

    def __repr__(self) -> str:
        return (
            f"DatasetHandle(name={self.name!r}, split={self.split!r}, "
            f"n={len(self)}, shape={self.input_shape}, classes={self.num_classes})"
        )
