"""
Tests for the averaged per-task trainer.

Bitwise comparisons use plain SGD; adaptive optimizer state would make the
straight-line reference trainer diverge from the per-step fresh optimizers.
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.ingest import build_schedule, make_synthetic_blobs, stage_data
from src.losses import LossWeights, class_loss
from src.memory import ExemplarMemory, GroupedBatch, sample_batch, steps_per_epoch, update_memory
from src.nets import build_model, clone, flatten, forward, grow_head
from src.train import StageState, TrainConfig, epoch_means, run_experiment, train_minibatch, train_stage
from src.utils.errors import ConfigInvalid, EmptyBatch, OutOfRangeTask


def _sgd(**kwargs):
    defaults = dict(epochs=2, batch_size=16, lr_initial=0.05, optimizer_id='sgd', seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def _stage_two(seed=0):
    """Blobs over 2 tasks, a stage-1 previous model and a grown current model."""
    blobs = make_synthetic_blobs(4, 20, 2, 6.0, seed=seed)
    schedule = build_schedule(4, 2)
    previous = build_model('mlp', (2,), 2, seed=seed)
    current = grow_head(previous, 2, seed=seed + 1)
    memory = update_memory(ExemplarMemory(budget=20), stage_data(blobs, schedule, 1), seed=seed)
    state = StageState(stage_index=2, current_model=current, previous_model=previous,
                       memory=memory, schedule=schedule)
    return blobs, schedule, state


def _step(model, x, columns, lr):
    optimizer = torch.optim.SGD(model.parameters(), lr=lr)
    optimizer.zero_grad(set_to_none=True)
    class_loss(forward(model, x)[1], columns).backward()
    optimizer.step()
    return model


def test_train_config_from_dict():
    config = TrainConfig.from_dict({
        'train': {'epochs': 3, 'optimizer': 'SGD', 'lr_initial': 0.1},
        'loss_weights': {'gamma': 0.0},
        'ablation': {'disable_kd': True},
    })

    assert config.epochs == 3
    assert config.optimizer_id == 'sgd'
    assert config.effective_weights() == LossWeights(alpha=1.0, beta=0.0, gamma=0.0)

    with pytest.raises(ConfigInvalid):
        TrainConfig(optimizer_id='adamw')
    with pytest.raises(ConfigInvalid):
        TrainConfig(lr_decay_factor=0.0)


def test_learning_rate_schedule():
    config = TrainConfig(lr_initial=0.01, lr_decay_every=20, lr_decay_factor=0.1)

    assert config.lr_at(0) == 0.01
    assert config.lr_at(19) == 0.01
    assert abs(config.lr_at(20) - 0.001) < 1e-12
    assert abs(config.lr_at(45) - 0.0001) < 1e-12


def test_decay_reading_is_logged_as_warning(caplog):
    blobs, schedule, state = _stage_two()

    with caplog.at_level(logging.WARNING, logger="src.train.trainer"):
        train_stage(state, stage_data(blobs, schedule, 2), _sgd(epochs=1, lr_decay_factor=0.1))

    notices = [r for r in caplog.records if "lr_decay_factor" in r.getMessage()]
    assert notices and all(r.levelno == logging.WARNING for r in notices)


def test_stage_state_needs_previous_model():
    _, schedule, state = _stage_two()
    with pytest.raises(ConfigInvalid):
        replace(state, previous_model=None)
    with pytest.raises(ConfigInvalid):
        StageState(stage_index=2, current_model=state.previous_model, previous_model=state.current_model,
                   memory=state.memory, schedule=schedule)


def test_zero_learning_rate_is_a_no_op():
    blobs, schedule, state = _stage_two()
    batch = sample_batch(state.memory, stage_data(blobs, schedule, 2), 16, seed=0, step=0, schedule=schedule)

    model, record = train_minibatch(state, batch, _sgd(), lr=0.0)

    assert torch.equal(flatten(model).values, flatten(state.current_model).values)
    assert [g.task_group for g in record.groups] == batch.tasks
    assert record.lr == 0.0


def test_minibatch_is_the_average_of_per_task_updates():
    """With β = γ = 0 each task model takes one SGD step on its own group."""
    blobs, schedule, state = _stage_two()
    batch = sample_batch(state.memory, stage_data(blobs, schedule, 2), 16, seed=0, step=0, schedule=schedule)
    config = _sgd(loss_weights=LossWeights(alpha=1.0, beta=0.0, gamma=0.0))

    model, _ = train_minibatch(state, batch, config, lr=0.05)

    updates = [flatten(_step(clone(state.current_model), x, schedule.to_columns(y), 0.05)).values
               for _, x, y in batch]
    expected = sum(updates) / len(updates)
    assert torch.allclose(flatten(model).values, expected, atol=1e-6)


def test_identical_groups_average_to_single_update():
    """Two groups holding the same samples average to one plain update, bitwise."""
    _, _, state = _stage_two()
    x = np.array([[0.0, 0.0], [0.0, 6.0]], dtype=np.float32)
    labels = np.array([0, 1])
    config = _sgd(loss_weights=LossWeights(alpha=1.0, beta=0.0, gamma=0.0))

    batch = GroupedBatch(groups={1: (x, labels), 2: (x, labels)})
    model, record = train_minibatch(state, batch, config, lr=0.05)

    reference = _step(clone(state.current_model), x, labels, 0.05)
    assert torch.equal(flatten(model).values, flatten(reference).values)
    assert len(record.groups) == 2


def test_untrained_clones_are_averaged_in():
    blobs, schedule, state = _stage_two()
    current = stage_data(blobs, schedule, 2)
    batch = GroupedBatch(groups={2: (current.inputs[:8], current.labels[:8])})

    plain, _ = train_minibatch(state, batch, _sgd(), lr=0.05)
    padded, _ = train_minibatch(state, batch, _sgd(average_includes_untrained_clones=True), lr=0.05)

    midpoint = (flatten(plain).values + flatten(state.current_model).values) / 2
    assert torch.allclose(flatten(padded).values, midpoint, atol=1e-6)


def test_single_group_joint_step_matches_averaging():
    blobs, schedule, state = _stage_two()
    current = stage_data(blobs, schedule, 2)
    batch = GroupedBatch(groups={2: (current.inputs[:8], current.labels[:8])})

    averaged, _ = train_minibatch(state, batch, _sgd(), lr=0.05)
    joint, record = train_minibatch(state, batch, _sgd(disable_averaging=True), lr=0.05)

    assert torch.allclose(flatten(averaged).values, flatten(joint).values)
    assert record.groups[0].size == 8


def test_minibatch_errors():
    _, _, state = _stage_two()
    with pytest.raises(EmptyBatch):
        train_minibatch(state, GroupedBatch(groups={}), _sgd())

    x = np.zeros((1, 2), dtype=np.float32)
    stage_one = replace(state, stage_index=1, previous_model=None)
    with pytest.raises(OutOfRangeTask):
        train_minibatch(stage_one, GroupedBatch(groups={2: (x, np.array([2]))}), _sgd())


def test_stage_one_matches_plain_training():
    """Stage 1 (no memory, no previous) follows the plain classifier trajectory."""
    blobs = make_synthetic_blobs(2, 30, 2, 6.0, seed=1)
    schedule = build_schedule(2, 1)
    model = build_model('mlp', (2,), 2, seed=3)
    memory = ExemplarMemory(budget=0)
    config = _sgd(epochs=3, seed=2)
    state = StageState(stage_index=1, current_model=model, previous_model=None,
                       memory=memory, schedule=schedule)

    trained, records = train_stage(state, blobs, config)

    reference = clone(model)
    optimizer = torch.optim.SGD(reference.parameters(), lr=config.lr_initial)
    steps = steps_per_epoch(memory, blobs, config.batch_size)
    for step in range(config.epochs * steps):
        x, y = sample_batch(memory, blobs, config.batch_size, seed=config.seed * 1000 + 1,
                            step=step, schedule=schedule).merged()
        optimizer.zero_grad(set_to_none=True)
        class_loss(forward(reference, x)[1], schedule.to_columns(y)).backward()
        optimizer.step()

    assert len(records) == config.epochs * steps
    assert torch.equal(flatten(trained).values, flatten(reference).values)


def test_train_stage_is_deterministic():
    blobs, schedule, state = _stage_two()
    data = stage_data(blobs, schedule, 2)
    config = TrainConfig(epochs=2, batch_size=16, seed=4)

    a, records_a = train_stage(state, data, config)
    b, records_b = train_stage(state, data, config)

    assert torch.equal(flatten(a).values, flatten(b).values)
    assert [r.total for r in records_a] == [r.total for r in records_b]
    assert len(epoch_means(records_a)) == 2


def test_train_stage_leaves_previous_model_untouched():
    blobs, schedule, state = _stage_two()
    before = {name: value.clone() for name, value in state.previous_model.state_dict().items()}

    train_stage(state, stage_data(blobs, schedule, 2), TrainConfig(epochs=2, batch_size=16, seed=1))

    after = state.previous_model.state_dict()
    assert all(torch.equal(before[name], after[name]) for name in before)


def test_train_stage_separates_two_blobs():
    blobs = make_synthetic_blobs(2, 50, 2, 10.0, seed=0)
    schedule = build_schedule(2, 1)
    state = StageState(stage_index=1, current_model=build_model('mlp', (2,), 2, seed=0),
                       previous_model=None, memory=ExemplarMemory(budget=0), schedule=schedule)

    model, _ = train_stage(state, blobs, TrainConfig(epochs=20, batch_size=32, lr_initial=0.05))

    with torch.no_grad():
        predictions = forward(model, blobs.inputs)[1].argmax(dim=1).numpy()
    assert (predictions == blobs.labels).mean() >= 0.99


def test_run_experiment_on_blobs(tmp_path):
    train = make_synthetic_blobs(6, 40, 2, 10.0, seed=0)
    test = make_synthetic_blobs(6, 20, 2, 10.0, seed=0, split="test")
    schedule = build_schedule(6, 3)
    config = TrainConfig(epochs=30, batch_size=32, lr_initial=0.01, lr_decay_every=20)
    records = []

    reports = run_experiment(train, test, schedule, config, memory_budget=120,
                             output_dir=tmp_path, on_record=records.append)

    assert [r.stage for r in reports] == [1, 2, 3]
    assert [r.seen_classes for r in reports] == [2, 4, 6]
    assert reports[0].task_accuracy == 1.0
    assert reports[-1].class_accuracy >= 0.8
    for t, report in enumerate(reports, start=1):
        expected = np.mean([r.class_accuracy for r in reports[:t]])
        assert abs(report.avg_incremental_accuracy - expected) < 1e-12
        assert len(report.epoch_losses) == config.epochs
        assert sorted(report.per_task_breakdown) == list(range(1, t + 1))
        assert (tmp_path / f"stage{t}.pt").exists()
        assert (tmp_path / f"memory_stage{t}.npz").exists()

    kinds = {r['kind'] for r in records}
    assert kinds == {'step', 'stage'}


def test_run_experiment_rejects_budget_below_class_count():
    train = make_synthetic_blobs(6, 10, 2, 10.0, seed=0)
    test = make_synthetic_blobs(6, 5, 2, 10.0, seed=0, split="test")

    with pytest.raises(ConfigInvalid):
        run_experiment(train, test, build_schedule(6, 3), TrainConfig(epochs=1, batch_size=16),
                       memory_budget=3)


def test_large_memory_run_matches_joint_training():
    """With every sample kept in memory, three stages end close to one joint stage."""
    train = make_synthetic_blobs(6, 40, 2, 10.0, seed=0)
    test = make_synthetic_blobs(6, 20, 2, 10.0, seed=0, split="test")
    config = TrainConfig(epochs=40, batch_size=32, lr_initial=0.01, lr_decay_every=30)

    incremental = run_experiment(train, test, build_schedule(6, 3), config, memory_budget=2000)
    joint = run_experiment(train, test, build_schedule(6, 1), config, memory_budget=2000)

    assert len(incremental) == 3 and len(joint) == 1
    assert incremental[-1].class_accuracy >= joint[-1].class_accuracy - 0.02


def test_single_task_run_is_plain_training():
    train = make_synthetic_blobs(2, 30, 2, 10.0, seed=0)
    test = make_synthetic_blobs(2, 10, 2, 10.0, seed=0, split="test")

    reports = run_experiment(train, test, build_schedule(2, 1), TrainConfig(epochs=10, batch_size=16),
                             memory_budget=20)

    assert len(reports) == 1
    assert reports[0].task_accuracy == 1.0
    assert reports[0].avg_incremental_accuracy == reports[0].class_accuracy


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
