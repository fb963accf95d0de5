"""
Task stream: split a labeled dataset into class-disjoint tasks.
"""

import itertools
import logging
import math

import numpy as np

from src.models import DatasetHandle, StageSchedule
from src.utils.errors import IndivisibleClasses, ConfigInvalid
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)


def build_schedule(
    total_classes: int,
    num_tasks: int,
    seed: int = 0,
    shuffle: bool = False
) -> StageSchedule:
    """
    Partition class ids 0..total_classes-1 into num_tasks equal tasks.

    Args:
        total_classes: Number of classes to schedule
        num_tasks: Number of tasks N
        seed: Seed for the class permutation (only used when shuffle is set)
        shuffle: Permute the class order; identity order otherwise

    Returns:
        Deterministic StageSchedule

    Raises:
        IndivisibleClasses: If total_classes is not a multiple of num_tasks
    """
    if total_classes <= 0 or num_tasks <= 0:
        raise ConfigInvalid(
            f"total_classes and num_tasks must be positive, got {total_classes}, {num_tasks}"
        )
    if total_classes % num_tasks != 0:
        raise IndivisibleClasses(
            f"{total_classes} classes cannot be split into {num_tasks} equal tasks"
        )

    if shuffle:
        class_order = derive_rng(seed, 0x5C4ED).permutation(total_classes)
    else:
        class_order = np.arange(total_classes)

    return StageSchedule(
        num_tasks=num_tasks,
        classes_per_task=total_classes // num_tasks,
        class_order=tuple(int(c) for c in class_order),
    )


def stage_data(dataset: DatasetHandle, schedule: StageSchedule, t: int) -> DatasetHandle:
    """
    Select the samples of task t, keeping dataset order.

    Raises:
        OutOfRangeTask: If t is outside 1..N
    """
    task_classes = schedule.classes_of_task(t)
    mask = np.isin(dataset.labels, task_classes)
    return dataset.subset(mask)


def make_synthetic_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int = 0,
    split: str = "train",
    noise: float = 1.0
) -> DatasetHandle:
    """
    Gaussian clusters with one mean per class.

    Means sit on the integer lattice {0..m-1}^dim scaled by `separation`, so
    any two means are at least `separation` apart. Samples are stored
    class-major.

    Args:
        num_classes: Number of clusters
        per_class: Samples per cluster
        dim: Input dimensionality
        separation: Minimum distance between cluster means
        seed: Seed for the noise
        split: "train" or "test"; the two splits draw independent noise
        noise: Standard deviation of every cluster

    Returns:
        DatasetHandle of shape (num_classes * per_class, dim)
    """
    if num_classes <= 0 or per_class <= 0 or dim <= 0:
        raise ConfigInvalid("make_synthetic_blobs counts must be positive")

    side = max(2, math.ceil(num_classes ** (1.0 / dim)))
    lattice = itertools.islice(itertools.product(range(side), repeat=dim), num_classes)
    means = np.array(list(lattice), dtype=np.float64) * float(separation)

    rng = derive_rng(seed, 0xB10B, 0 if split == "train" else 1)
    inputs = np.concatenate([
        mean + noise * rng.standard_normal((per_class, dim)) for mean in means
    ]).astype(np.float32)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)

    logger.debug(f"Generated {len(labels)} blob samples ({num_classes} classes, dim {dim})")

    return DatasetHandle(
        name="blobs",
        inputs=inputs,
        labels=labels,
        split=split,
        num_classes=num_classes,
    )
