"""
Fixed-budget exemplar memory and mixed batch composition.

The memory holds an equal random quota of samples for every class learned so
far. Updates return a new memory; stored arrays are read-only.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from src.models import DatasetHandle, StageSchedule
from src.utils.errors import ClassCollision, EmptySource, ConfigInvalid
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExemplarMemory:
    """
    Rehearsal buffer M_t.

    Attributes:
        budget: Maximum total number of stored samples
        store: class id -> array of stored inputs for that class
        name: Name of the dataset the exemplars came from
    """
    budget: int
    store: Dict[int, np.ndarray] = field(default_factory=dict)
    name: str = "memory"

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigInvalid(f"Memory budget must be non-negative, got {self.budget}")
        for inputs in self.store.values():
            inputs.setflags(write=False)

    @property
    def classes(self) -> List[int]:
        return sorted(self.store)

    def __len__(self) -> int:
        return sum(len(v) for v in self.store.values())

    def counts(self) -> Dict[int, int]:
        return {c: len(self.store[c]) for c in self.classes}

    def as_dataset(self, classes: Optional[List[int]] = None, num_classes: Optional[int] = None) -> Optional[DatasetHandle]:
        """
        Flatten (a subset of) the stored classes into a DatasetHandle.

        Returns None when nothing is stored for the requested classes.
        """
        wanted = [c for c in (self.classes if classes is None else classes) if c in self.store]
        if not wanted or sum(len(self.store[c]) for c in wanted) == 0:
            return None
        inputs = np.concatenate([self.store[c] for c in wanted])
        labels = np.concatenate([np.full(len(self.store[c]), c, dtype=np.int64) for c in wanted])
        return DatasetHandle(self.name, inputs, labels, "memory", num_classes)

    def task_exemplars(self, schedule: StageSchedule, t: int) -> Optional[DatasetHandle]:
        """Exemplars of task t's classes (None if none are stored)."""
        return self.as_dataset(schedule.classes_of_task(t))

    def save(self, path: Union[str, Path]) -> Path:
        """
        Write the memory to a single .npz archive.

        The archive holds one array per class ("class_<id>") and a JSON
        manifest ("manifest") with the budget, name and class list.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = {"budget": self.budget, "name": self.name, "classes": self.classes}
        arrays = {f"class_{c}": self.store[c] for c in self.classes}
        np.savez(path, manifest=np.array(json.dumps(manifest)), **arrays)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExemplarMemory":
        """Read a memory archive written by save()."""
        with np.load(Path(path), allow_pickle=False) as archive:
            manifest = json.loads(str(archive["manifest"]))
            store = {int(c): archive[f"class_{c}"].copy() for c in manifest["classes"]}
        return cls(budget=int(manifest["budget"]), store=store, name=manifest["name"])


def update_memory(memory: ExemplarMemory, new_task_data: DatasetHandle, seed: int) -> ExemplarMemory:
    """
    Rebalance the memory to include the classes of a newly learned task.

    Quota q = floor(budget / number of classes after the update). Old classes
    keep a uniform random subset of their current exemplars; new classes
    contribute q uniform random samples (all of them if fewer exist).

    Raises:
        ClassCollision: If a new class is already stored
    """
    new_classes = [int(c) for c in new_task_data.classes]
    collisions = sorted(set(new_classes) & set(memory.store))
    if collisions:
        raise ClassCollision(f"Classes already stored in memory: {collisions}")

    total_classes = len(memory.store) + len(new_classes)
    quota = memory.budget // total_classes if total_classes else 0

    store: Dict[int, np.ndarray] = {}
    for c, inputs in memory.store.items():
        store[c] = _random_subset(inputs, quota, derive_rng(seed, c, 0))

    for c in new_classes:
        inputs = new_task_data.inputs[new_task_data.labels == c]
        store[c] = _random_subset(inputs, quota, derive_rng(seed, c, 1))

    updated = ExemplarMemory(budget=memory.budget, store=store, name=new_task_data.name)
    logger.info(
        f"Memory now holds {len(updated)}/{memory.budget} exemplars "
        f"over {total_classes} classes (quota {quota})"
    )
    return updated


def _random_subset(inputs: np.ndarray, quota: int, rng: np.random.Generator) -> np.ndarray:
    if len(inputs) <= quota:
        return np.array(inputs, copy=True)
    keep = np.sort(rng.choice(len(inputs), size=quota, replace=False))
    return np.ascontiguousarray(inputs[keep])


@dataclass
class GroupedBatch:
    """
    A mini-batch B_t partitioned by task.

    Attributes:
        groups: task index -> (inputs, labels), ordered by task index
    """
    groups: Dict[int, Tuple[np.ndarray, np.ndarray]]

    @property
    def tasks(self) -> List[int]:
        return sorted(self.groups)

    def __len__(self) -> int:
        return sum(len(y) for _, y in self.groups.values())

    def __iter__(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        for t in self.tasks:
            x, y = self.groups[t]
            yield t, x, y

    def merged(self) -> Tuple[np.ndarray, np.ndarray]:
        """All samples of the batch, task-ordered."""
        xs, ys = zip(*(self.groups[t] for t in self.tasks))
        return np.concatenate(xs), np.concatenate(ys)


def pooled_size(memory: ExemplarMemory, current: DatasetHandle) -> int:
    return len(memory) + len(current)


def steps_per_epoch(memory: ExemplarMemory, current: DatasetHandle, batch_size: int) -> int:
    return math.ceil(pooled_size(memory, current) / batch_size)


def sample_batch(
    memory: ExemplarMemory,
    current: DatasetHandle,
    batch_size: int,
    seed: int,
    step: int,
    schedule: StageSchedule
) -> GroupedBatch:
    """
    Draw mini-batch `step` from the pooled D_t ∪ M_t and group it by task.

    Every epoch is a fresh uniform permutation of the pool seeded by
    (seed, epoch); step k of the epoch takes the k-th slice. The same
    (seed, step) therefore always yields the same batch.

    Raises:
        EmptySource: If both memory and current data are empty
    """
    if batch_size <= 0:
        raise ConfigInvalid(f"batch_size must be positive, got {batch_size}")

    memory_data = memory.as_dataset()
    parts = [d for d in (memory_data, current) if d is not None and len(d) > 0]
    if not parts:
        raise EmptySource("Both memory and current task data are empty")

    inputs = np.concatenate([d.inputs for d in parts]) if len(parts) > 1 else parts[0].inputs
    labels = np.concatenate([d.labels for d in parts]) if len(parts) > 1 else parts[0].labels

    n = len(labels)
    per_epoch = math.ceil(n / batch_size)
    epoch, position = divmod(step, per_epoch)
    order = derive_rng(seed, 0xBA7C, epoch).permutation(n)
    index = np.sort(order[position * batch_size:(position + 1) * batch_size])

    batch_x, batch_y = inputs[index], labels[index]
    tasks = schedule.to_tasks(batch_y)

    groups = {
        int(t): (batch_x[tasks == t], batch_y[tasks == t])
        for t in np.unique(tasks)
    }
    return GroupedBatch(groups=groups)
