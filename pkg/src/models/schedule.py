"""
Class-to-task partition of a class-incremental stream.

Tasks are 1-indexed. Head columns follow the class order: the classes of task
t occupy logit columns [(t-1)*k, t*k) where k = classes_per_task.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from src.utils.errors import OutOfRangeTask, LabelOutOfRange


@dataclass(frozen=True)
class StageSchedule:
    """
    Ordered partition of classes into tasks D_1..D_N.

    Attributes:
        num_tasks: Number of tasks N
        classes_per_task: Classes introduced at each stage
        class_order: Permutation of scheduled class ids
    """
    num_tasks: int
    classes_per_task: int
    class_order: Tuple[int, ...]
    task_of_class: Dict[int, int] = field(init=False, repr=False, compare=False)
    column_of_class: Dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "class_order", tuple(int(c) for c in self.class_order))
        object.__setattr__(self, "task_of_class", {
            c: i // self.classes_per_task + 1 for i, c in enumerate(self.class_order)
        })
        object.__setattr__(self, "column_of_class", {
            c: i for i, c in enumerate(self.class_order)
        })

    @property
    def tasks(self) -> List[List[int]]:
        """Class ids of every task, in task order."""
        return [self.classes_of_task(t) for t in range(1, self.num_tasks + 1)]

    def classes_of_task(self, t: int) -> List[int]:
        self._check_task(t)
        start = (t - 1) * self.classes_per_task
        return list(self.class_order[start:start + self.classes_per_task])

    def seen_classes(self, t: int) -> List[int]:
        """Classes learned through stage t."""
        self._check_task(t)
        return list(self.class_order[:t * self.classes_per_task])

    def columns_of_task(self, t: int) -> slice:
        """Logit slice holding task t's class block."""
        self._check_task(t)
        return slice((t - 1) * self.classes_per_task, t * self.classes_per_task)

    def to_columns(self, labels: np.ndarray) -> np.ndarray:
        """Map class ids to head columns."""
        try:
            return np.array([self.column_of_class[int(y)] for y in labels], dtype=np.int64)
        except KeyError as e:
            raise LabelOutOfRange(f"Class {e.args[0]} is not scheduled") from None

    def to_tasks(self, labels: np.ndarray) -> np.ndarray:
        """Map class ids to 1-based task indices."""
        try:
            return np.array([self.task_of_class[int(y)] for y in labels], dtype=np.int64)
        except KeyError as e:
            raise LabelOutOfRange(f"Class {e.args[0]} is not scheduled") from None

    def to_dict(self) -> dict:
        return {
            "num_tasks": self.num_tasks,
            "classes_per_task": self.classes_per_task,
            "class_order": list(self.class_order),
        }

    def _check_task(self, t: int) -> None:
        if not 1 <= t <= self.num_tasks:
            raise OutOfRangeTask(f"Task {t} outside 1..{self.num_tasks}")
