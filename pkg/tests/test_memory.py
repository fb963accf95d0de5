"""
Tests for the exemplar memory and mini-batch composition.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.ingest import build_schedule, make_synthetic_blobs, stage_data
from src.memory import ExemplarMemory, sample_batch, steps_per_epoch, update_memory
from src.utils.errors import ClassCollision, EmptySource


def _stream(num_classes=6, per_class=50, num_tasks=3):
    blobs = make_synthetic_blobs(num_classes, per_class, 2, 10.0, seed=0)
    schedule = build_schedule(num_classes, num_tasks)
    return blobs, schedule


def test_quota_after_each_update():
    """Budget 20: quota 10 over two classes, then 5 over four."""
    blobs, schedule = _stream(num_classes=4, per_class=30, num_tasks=2)
    memory = ExemplarMemory(budget=20)

    memory = update_memory(memory, stage_data(blobs, schedule, 1), seed=0)
    assert memory.counts() == {0: 10, 1: 10}

    memory = update_memory(memory, stage_data(blobs, schedule, 2), seed=0)
    assert memory.counts() == {0: 5, 1: 5, 2: 5, 3: 5}
    assert len(memory) <= memory.budget


def test_old_exemplars_are_subsets():
    blobs, schedule = _stream()
    first = update_memory(ExemplarMemory(budget=60), stage_data(blobs, schedule, 1), seed=4)
    second = update_memory(first, stage_data(blobs, schedule, 2), seed=4)

    for c in (0, 1):
        before = {tuple(row) for row in first.store[c]}
        after = {tuple(row) for row in second.store[c]}
        assert after <= before
        assert len(after) == 15


def test_small_class_keeps_everything():
    blobs, schedule = _stream(per_class=3)
    memory = update_memory(ExemplarMemory(budget=100), stage_data(blobs, schedule, 1), seed=0)

    assert memory.counts() == {0: 3, 1: 3}


def test_zero_budget_stores_nothing():
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=0), stage_data(blobs, schedule, 1), seed=0)

    assert len(memory) == 0
    assert memory.as_dataset() is None


def test_update_is_deterministic_and_pure():
    blobs, schedule = _stream()
    empty = ExemplarMemory(budget=30)
    a = update_memory(empty, stage_data(blobs, schedule, 1), seed=7)
    b = update_memory(empty, stage_data(blobs, schedule, 1), seed=7)

    assert len(empty) == 0
    for c in a.classes:
        assert np.array_equal(a.store[c], b.store[c])


def test_class_collision():
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=30), stage_data(blobs, schedule, 1), seed=0)

    with pytest.raises(ClassCollision):
        update_memory(memory, stage_data(blobs, schedule, 1), seed=0)


def test_sample_batch_groups_by_task():
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=60), stage_data(blobs, schedule, 1), seed=0)
    current = stage_data(blobs, schedule, 2)

    batch = sample_batch(memory, current, batch_size=32, seed=0, step=0, schedule=schedule)

    assert len(batch) == 32
    assert set(batch.tasks) <= {1, 2}
    for task, x, y in batch:
        assert set(schedule.to_tasks(y).tolist()) == {task}
        assert len(x) == len(y)


def test_sample_batch_covers_pool_once_per_epoch():
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=60), stage_data(blobs, schedule, 1), seed=0)
    current = stage_data(blobs, schedule, 2)
    steps = steps_per_epoch(memory, current, 32)

    seen = []
    for step in range(steps):
        x, _ = sample_batch(memory, current, 32, seed=1, step=step, schedule=schedule).merged()
        seen.extend(tuple(row) for row in x)

    # 60 exemplars + 100 current samples, each drawn exactly once
    assert steps == 5
    assert len(seen) == 160
    assert len(set(seen)) == 160


def test_sample_batch_is_reproducible():
    blobs, schedule = _stream()
    current = stage_data(blobs, schedule, 1)
    memory = ExemplarMemory(budget=10)

    a = sample_batch(memory, current, 16, seed=3, step=9, schedule=schedule)
    b = sample_batch(memory, current, 16, seed=3, step=9, schedule=schedule)

    assert np.array_equal(a.merged()[0], b.merged()[0])


def test_sample_batch_empty_source():
    blobs, schedule = _stream()
    empty = stage_data(blobs.subset(np.arange(0)), schedule, 1)

    with pytest.raises(EmptySource):
        sample_batch(ExemplarMemory(budget=10), empty, 8, seed=0, step=0, schedule=schedule)


def test_memory_snapshot_roundtrip(tmp_path):
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=30), stage_data(blobs, schedule, 1), seed=0)

    path = memory.save(tmp_path / "memory.npz")
    loaded = ExemplarMemory.load(path)

    assert loaded.budget == 30
    assert loaded.counts() == memory.counts()
    assert np.array_equal(loaded.store[0], memory.store[0])


def test_task_exemplars():
    blobs, schedule = _stream()
    memory = update_memory(ExemplarMemory(budget=60), stage_data(blobs, schedule, 1), seed=0)

    exemplars = memory.task_exemplars(schedule, 1)
    assert len(exemplars) == 60
    assert memory.task_exemplars(schedule, 2) is None


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
