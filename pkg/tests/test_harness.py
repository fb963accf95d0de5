"""
Tests for the experiment harness: config validation, fingerprints, runs,
sweeps, ablations, reports and the command line.
"""

import json
import sys
from pathlib import Path

import pytest
import yaml

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli import main
from src.harness import (
    ExperimentConfig, ResultsBundle, ablate, fingerprint, gamma_sweep, report, run, summarize, to_tsv,
)
from src.utils.config import load_config, merge_config
from src.utils.errors import ConfigInvalid, EmptyBundle, OutputExists

SMOKE = {
    'dataset': {'kind': 'blobs', 'blobs': {'num_classes': 4, 'per_class': 20, 'test_per_class': 10,
                                           'dim': 2, 'separation': 10.0}},
    'schedule': {'num_tasks': 2, 'total_classes': 4},
    'model': {'arch': 'mlp', 'kwargs': {'hidden': 8}},
    'memory': {'budget': 40},
    'train': {'epochs': 3, 'batch_size': 16},
    'finetune': {'epochs': 1},
    'evaluation': {'batch_size': 10},
    'seeds': [0],
}


def _config(tmp_path, **overrides) -> ExperimentConfig:
    raw = merge_config(load_config(), SMOKE)
    raw = merge_config(raw, {'output_dir': str(tmp_path / "runs")})
    return ExperimentConfig.from_dict(merge_config(raw, overrides))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, seeds=[])
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, schedule={'num_tasks': 3})
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, model={'arch': 'vit'})
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, dataset={'kind': 'digits', 'path': str(tmp_path / "nowhere")})
    # Fewer exemplar slots than classes
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, memory={'budget': 3})
    with pytest.raises(ConfigInvalid):
        _config(tmp_path, memory={'budget': 0})
    assert _config(tmp_path, memory={'budget': 4}).memory_budget == 4


def test_config_sections(tmp_path):
    config = _config(tmp_path, seeds=[3, 4], loss_weights={'gamma': 1.0})

    assert config.seeds == [3, 4]
    assert config.train.loss_weights.gamma == 1.0
    assert config.finetune.epochs == 1
    assert config.arch_kwargs == {'hidden': 8}
    assert config.build_schedule().tasks == [[0, 1], [2, 3]]


def test_fingerprint_is_canonical(tmp_path):
    config = _config(tmp_path)
    reordered = dict(reversed(list(config.raw.items())))

    assert fingerprint(reordered) == config.fingerprint
    assert _config(tmp_path, output_dir="elsewhere").fingerprint == config.fingerprint
    assert _config(tmp_path, logging={'level': 'DEBUG'}).fingerprint == config.fingerprint
    assert _config(tmp_path, loss_weights={'gamma': 0.5}).fingerprint != config.fingerprint
    assert _config(tmp_path, seeds=[1]).fingerprint != config.fingerprint
    # train.seed is replaced by each entry of `seeds`
    assert _config(tmp_path, train={'seed': 123}).fingerprint == config.fingerprint


def test_run_writes_bundle(tmp_path):
    config = _config(tmp_path)
    bundle = run(config)

    assert bundle.seeds == [0]
    assert len(bundle.runs[0]) == 2
    assert bundle.fingerprint == config.fingerprint

    run_dir = config.run_dir
    for name in ("bundle.json", "config.yaml", "metrics.jsonl", "seed-0/stage2.pt", "seed-0/memory_stage2.npz"):
        assert (run_dir / name).exists(), name

    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    kinds = [json.loads(line)['kind'] for line in lines]
    assert kinds.count('stage') == 2
    assert 'step' in kinds

    loaded = ResultsBundle.load(run_dir)
    assert loaded.fingerprint == bundle.fingerprint
    assert loaded.runs[0][1].per_task_breakdown.keys() == bundle.runs[0][1].per_task_breakdown.keys()
    assert loaded.runs[0][1].class_accuracy == bundle.runs[0][1].class_accuracy


def test_run_refuses_to_overwrite(tmp_path):
    config = _config(tmp_path)
    run(config)

    with pytest.raises(OutputExists):
        run(config)
    assert run(config, force=True).fingerprint == config.fingerprint


def test_run_is_deterministic(tmp_path):
    a = run(_config(tmp_path / "a"))
    b = run(_config(tmp_path / "b"))

    assert [r.to_dict() for r in a.runs[0]] == [r.to_dict() for r in b.runs[0]]


def test_gamma_sweep_rows(tmp_path):
    config = _config(tmp_path)
    table = gamma_sweep(config, [0.0, 1.0])

    assert list(table.rows) == ['0', '1']
    assert all(len(v) == 2 for v in table.rows.values())
    assert (config.output_dir / "gamma_sweep.tsv").read_text().startswith("gamma\tstage1\tstage2")


def test_gamma_zero_equals_disabled_gtk(tmp_path):
    config = _config(tmp_path)
    sweep = gamma_sweep(config, [0.0])
    disabled = run(config.with_overrides({'ablation': {'disable_gtk': True}}))

    swept = sweep.bundles['0']
    assert [r.task_accuracy for r in swept.runs[0]] == [r.task_accuracy for r in disabled.runs[0]]
    assert [r.epoch_losses for r in swept.runs[0]] == [r.epoch_losses for r in disabled.runs[0]]


def test_single_gamma_sweep_equals_run(tmp_path):
    config = _config(tmp_path)
    sweep = gamma_sweep(config, [0.1])
    direct = ResultsBundle.load(config.with_overrides({'loss_weights': {'gamma': 0.1}}).run_dir)

    assert sweep.bundles['0.1'].fingerprint == direct.fingerprint
    assert sweep.rows['0.1'] == [r.task_accuracy for r in direct.runs[0]]


def test_ablate_components(tmp_path):
    config = _config(tmp_path)
    table = ablate(config, ['kd', 'full'])

    assert list(table.rows) == ['kd', 'full']
    kd_config = table.bundles['kd'].config['ablation']
    assert kd_config['disable_gtk'] and kd_config['disable_averaging']
    assert (config.output_dir / "ablation_task_accuracy.tsv").exists()
    assert (config.output_dir / "ablation_class_accuracy.tsv").exists()

    with pytest.raises(ConfigInvalid):
        ablate(config, ['gtk-only'])


def test_report_recomputes_from_reports(tmp_path):
    config = _config(tmp_path, seeds=[0, 1])
    bundle = run(config)
    summaries = report(bundle, config.run_dir)

    assert len(summaries) == 2
    for t, summary in enumerate(summaries):
        per_seed = [sum(r.class_accuracy for r in reports[:t + 1]) / (t + 1)
                    for reports in bundle.runs.values()]
        assert abs(summary.avg_incremental_accuracy - sum(per_seed) / 2) < 1e-9
    assert (config.run_dir / "results.tsv").exists()
    assert (config.run_dir / "accuracy_curves.png").exists()


def test_single_seed_has_zero_std(tmp_path):
    summaries = summarize(run(_config(tmp_path)))

    assert all(s.std['task_accuracy'] == 0.0 for s in summaries)
    tsv = to_tsv(summaries).splitlines()
    assert tsv[0].startswith("stage\tseen_classes\ttask_accuracy_mean")
    assert len(tsv) == 3


def test_empty_bundle():
    with pytest.raises(EmptyBundle):
        report(ResultsBundle(fingerprint="x", code_version="0"))


def test_cli_commands(tmp_path):
    config_path = tmp_path / "smoke.yaml"
    config_path.write_text(yaml.safe_dump({**SMOKE, 'output_dir': str(tmp_path / "runs")}))

    assert main(["--version"]) == 0
    assert main(["-v"]) == 0
    assert main(["--help"]) == 0
    assert main(["train"]) == 1
    assert main(["run"]) == 1
    assert main(["sweep-gamma", "--config", str(config_path)]) == 1

    assert main(["run", "--config", str(config_path)]) == 0
    assert main(["run", "--config", str(config_path)]) == 2

    run_dir = next((tmp_path / "runs").glob("run-*"))
    assert main(["report", str(run_dir)]) == 0
    assert main(["report", str(tmp_path / "missing")]) == 5
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 5


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
