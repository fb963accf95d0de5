"""
Desk-scale acceptance runs on the split digit benchmark.

Skipped unless TKIL_DIGITS_DIR points to a directory with the four IDX files.
These runs take tens of minutes on CPU.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.harness import ExperimentConfig, ablate, gamma_sweep, run
from src.ingest import DatasetLoader
from src.utils.config import load_config, merge_config

DIGITS_DIR = os.environ.get("TKIL_DIGITS_DIR")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not DIGITS_DIR, reason="TKIL_DIGITS_DIR not set"),
]

CONFIG_PATH = Path(__file__).parent.parent / "config" / "split_digits.yaml"


@pytest.fixture(scope="module")
def digits_config(tmp_path_factory):
    raw = load_config(CONFIG_PATH)
    raw = merge_config(raw, {
        'dataset': {'path': DIGITS_DIR},
        'output_dir': str(tmp_path_factory.mktemp("digits")),
    })
    return ExperimentConfig.from_dict(raw)


@pytest.fixture(scope="module")
def digits_data(digits_config):
    return DatasetLoader(digits_config.raw).load()


@pytest.fixture(scope="module")
def digits_bundle(digits_config, digits_data):
    return run(digits_config, force=True, datasets=digits_data)


def test_final_accuracy(digits_bundle):
    """5 stages x 2 classes, 3 seeds: avg incremental >= 90%, final task prediction >= 95%."""
    finals = [reports[-1] for reports in digits_bundle.runs.values()]

    assert len(digits_bundle.seeds) == 3
    assert np.mean([r.avg_incremental_accuracy for r in finals]) >= 0.90
    assert np.mean([r.task_accuracy for r in finals]) >= 0.95


def test_oracle_task_bound(digits_bundle):
    for reports in digits_bundle.runs.values():
        for r in reports:
            assert r.oracle_class_accuracy >= r.class_accuracy


def test_ablation_ordering(digits_config, digits_data):
    table = ablate(digits_config, ['kd', 'kd+avg', 'full'], force=True, datasets=digits_data)
    kd, kd_avg, full = (table.rows[c][-1] for c in ('kd', 'kd+avg', 'full'))

    assert full >= kd_avg >= kd
    assert full - kd >= 0.10


def test_gamma_ordering(digits_config, digits_data):
    table = gamma_sweep(digits_config, [0.1, 10.0], force=True, datasets=digits_data)

    assert table.rows['0.1'][-1] >= table.rows['10'][-1]
