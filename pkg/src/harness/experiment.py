"""
Experiment runner: validated configuration, fingerprinted run directories,
the results bundle and the two ablation suites (γ sweep, component ablation).
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import yaml

from src.inference import EvaluationConfig, FinetuneConfig
from src.ingest import DatasetLoader, build_schedule
from src.models import DatasetHandle, StageReport, StageSchedule
from src.nets.backbones import ARCHITECTURES
from src.train import TrainConfig, run_experiment
from src.utils.config import merge_config
from src.utils.errors import ConfigInvalid, EmptyBundle, OutputExists
from src.utils.seeding import seed_everything

logger = logging.getLogger(__name__)

# Sections that change results; output_dir and logging do not
SEMANTIC_SECTIONS = (
    'dataset', 'schedule', 'model', 'memory', 'train', 'loss_weights',
    'ablation', 'finetune', 'evaluation', 'seeds',
)

# Component name -> ablation switches
COMPONENTS = {
    'kd': {'disable_gtk': True, 'disable_averaging': True},
    'kd+avg': {'disable_gtk': True, 'disable_averaging': False},
    'full': {'disable_gtk': False, 'disable_averaging': False},
}

# Keys inside semantic sections that run() replaces per seed
OVERRIDDEN_KEYS = {'train': ('seed',)}

BUNDLE_FILE = "bundle.json"
METRICS_FILE = "metrics.jsonl"


def _code_version() -> str:
    from src import __version__
    return __version__


def fingerprint(config: dict) -> str:
    """sha256 of the canonical JSON of the semantic config sections."""
    semantic = {key: copy.deepcopy(config.get(key)) for key in SEMANTIC_SECTIONS}
    for section, keys in OVERRIDDEN_KEYS.items():
        if isinstance(semantic.get(section), dict):
            for key in keys:
                semantic[section].pop(key, None)
    canonical = json.dumps(semantic, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class ExperimentConfig:
    """
    Validated experiment configuration.

    Attributes:
        raw: Merged config dict (source of the fingerprint)
        train: Training hyperparameters (seed overridden per run)
        finetune: Inference finetuning settings
        evaluation: Evaluation protocol
        num_tasks: Number of tasks N
        total_classes: Total classes K
        shuffle_classes: Permute class order before partitioning
        schedule_seed: Seed of the class permutation
        memory_budget: Total exemplar budget
        arch_id: Backbone identifier
        arch_kwargs: Backbone constructor arguments
        seeds: One full run per seed
        output_dir: Parent directory of run directories
    """
    raw: dict
    train: TrainConfig
    finetune: FinetuneConfig
    evaluation: EvaluationConfig
    num_tasks: int
    total_classes: int
    shuffle_classes: bool = False
    schedule_seed: int = 0
    memory_budget: int = 2000
    arch_id: str = 'mlp'
    arch_kwargs: dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("runs")

    @classmethod
    def from_dict(cls, config: dict) -> "ExperimentConfig":
        """
        Validate a merged config dict.

        Raises:
            ConfigInvalid: On empty seeds, an indivisible schedule, a memory
                budget below the class count, an unknown architecture or an
                unresolvable dataset
        """
        config = copy.deepcopy(config or {})
        schedule = config.get('schedule', {}) or {}
        model = config.get('model', {}) or {}
        memory = config.get('memory', {}) or {}

        seeds = config.get('seeds')
        if seeds is None:
            seeds = [0]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigInvalid("'seeds' must be a non-empty list")

        num_tasks = int(schedule.get('num_tasks', 5))
        total_classes = int(schedule.get('total_classes', _dataset_classes(config)))
        if num_tasks <= 0 or total_classes <= 0 or total_classes % num_tasks != 0:
            raise ConfigInvalid(
                f"schedule: {total_classes} classes cannot be split into {num_tasks} equal tasks"
            )

        arch_id = str(model.get('arch', 'mlp'))
        if arch_id not in ARCHITECTURES:
            raise ConfigInvalid(f"Unknown architecture: {arch_id}. Options: {list(ARCHITECTURES)}")

        budget = int(memory.get('budget', 2000))
        if budget < total_classes:
            raise ConfigInvalid(
                f"memory.budget {budget} leaves some of the {total_classes} classes without exemplars"
            )

        DatasetLoader(config).detect_format()
        if config.get('dataset', {}).get('path'):
            path = Path(config['dataset']['path'])
            if not path.exists():
                raise ConfigInvalid(f"Dataset path does not exist: {path}")

        return cls(
            raw=config,
            train=TrainConfig.from_dict(config),
            finetune=FinetuneConfig.from_dict(config),
            evaluation=EvaluationConfig.from_dict(config),
            num_tasks=num_tasks,
            total_classes=total_classes,
            shuffle_classes=bool(schedule.get('shuffle', False)),
            schedule_seed=int(schedule.get('seed', 0)),
            memory_budget=budget,
            arch_id=arch_id,
            arch_kwargs=dict(model.get('kwargs', {}) or {}),
            seeds=[int(s) for s in seeds],
            output_dir=Path(config.get('output_dir', 'runs')),
        )

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    @property
    def run_dir(self) -> Path:
        return self.output_dir / f"run-{self.fingerprint[:12]}"

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """New validated config with `overrides` merged over the raw dict."""
        return ExperimentConfig.from_dict(merge_config(self.raw, overrides))

    def build_schedule(self) -> StageSchedule:
        return build_schedule(self.total_classes, self.num_tasks,
                              seed=self.schedule_seed, shuffle=self.shuffle_classes)


def _dataset_classes(config: dict) -> int:
    dataset = config.get('dataset', {}) or {}
    if 'num_classes' in dataset:
        return int(dataset['num_classes'])
    return int((dataset.get('blobs', {}) or {}).get('num_classes', 10))


@dataclass
class ResultsBundle:
    """
    Every StageReport of a run, keyed by seed.

    Attributes:
        fingerprint: Hash of the canonical semantic config
        code_version: Package version that produced the results
        runs: seed -> StageReports in stage order
        config: The merged config dict
    """
    fingerprint: str
    code_version: str
    runs: Dict[int, List[StageReport]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def seeds(self) -> List[int]:
        return sorted(self.runs)

    @property
    def num_stages(self) -> int:
        return max((len(r) for r in self.runs.values()), default=0)

    def is_empty(self) -> bool:
        return not any(self.runs.values())

    def to_dict(self) -> dict:
        return {
            'fingerprint': self.fingerprint,
            'code_version': self.code_version,
            'runs': {str(seed): [r.to_dict() for r in reports] for seed, reports in self.runs.items()},
            'config': self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ResultsBundle":
        return cls(
            fingerprint=data['fingerprint'],
            code_version=data.get('code_version', 'unknown'),
            runs={int(seed): [StageReport.from_dict(r) for r in reports]
                  for seed, reports in (data.get('runs') or {}).items()},
            config=data.get('config', {}),
        )

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / BUNDLE_FILE
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "ResultsBundle":
        """
        Read bundle.json from a run directory (or the file itself).

        Raises:
            FileNotFoundError: If no bundle exists there
        """
        path = Path(directory)
        if path.is_dir():
            path = path / BUNDLE_FILE
        if not path.exists():
            raise FileNotFoundError(f"Bundle not found: {path}")
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


def run(
    config: ExperimentConfig,
    force: bool = False,
    datasets: Optional[Dict[str, DatasetHandle]] = None
) -> ResultsBundle:
    """
    Run the experiment once per seed and write the bundle.

    Layout of the run directory:
        config.yaml, metrics.jsonl, seed-<s>/stage<t>.pt,
        seed-<s>/memory_stage<t>.npz, bundle.json

    Args:
        config: Validated experiment configuration
        force: Overwrite an existing bundle with the same fingerprint
        datasets: Preloaded {"train", "test"} handles (loaded from config otherwise)

    Raises:
        OutputExists: If the run directory already holds a bundle and force is not set
    """
    run_dir = config.run_dir
    if (run_dir / BUNDLE_FILE).exists() and not force:
        raise OutputExists(f"Results already exist for this config: {run_dir} (use --force)")

    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.yaml", 'w') as f:
        yaml.safe_dump(config.raw, f, sort_keys=True)

    datasets = datasets or DatasetLoader(config.raw).load()
    schedule = config.build_schedule()
    logger.info(f"Run directory: {run_dir} ({len(config.seeds)} seed(s), {schedule.num_tasks} tasks)")

    bundle = ResultsBundle(fingerprint=config.fingerprint, code_version=_code_version(),
                           config=config.raw)

    with open(run_dir / METRICS_FILE, 'w') as metrics:
        def write_record(record: dict) -> None:
            metrics.write(json.dumps(record) + "\n")

        for seed in config.seeds:
            logger.info(f"Seed {seed}")
            seed_everything(seed)
            train_config = replace(config.train, seed=seed)
            bundle.runs[seed] = run_experiment(
                datasets['train'], datasets['test'], schedule, train_config,
                memory_budget=config.memory_budget,
                arch_id=config.arch_id,
                arch_kwargs=config.arch_kwargs,
                finetune=config.finetune,
                evaluation=config.evaluation,
                output_dir=run_dir / f"seed-{seed}",
                on_record=write_record,
            )
            metrics.flush()

    bundle.save(run_dir)
    logger.info(f"Bundle written: {run_dir / BUNDLE_FILE}")
    return bundle


@dataclass
class GridTable:
    """
    Rows of per-stage metrics (one row per sweep point or component).

    Attributes:
        row_label: Name of the row key column ("gamma", "component")
        metric: Metric the cells hold
        rows: row key -> per-stage mean over seeds
        bundles: row key -> bundle the row was computed from
    """
    row_label: str
    metric: str
    rows: Dict[str, List[float]] = field(default_factory=dict)
    bundles: Dict[str, ResultsBundle] = field(default_factory=dict)

    @property
    def num_stages(self) -> int:
        return max((len(v) for v in self.rows.values()), default=0)

    def to_tsv(self) -> str:
        header = [self.row_label] + [f"stage{t}" for t in range(1, self.num_stages + 1)]
        lines = ["\t".join(header)]
        for key, values in self.rows.items():
            lines.append("\t".join([key] + [f"{v:.4f}" for v in values]))
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_tsv())
        return path


def stage_means(bundle: ResultsBundle, metric: str) -> List[float]:
    """Per-stage mean over seeds of a StageReport field."""
    if bundle.is_empty():
        raise EmptyBundle("Bundle contains no stage reports")
    means = []
    for t in range(bundle.num_stages):
        values = [getattr(reports[t], metric) for reports in bundle.runs.values() if len(reports) > t]
        values = [v for v in values if v is not None]
        means.append(sum(values) / len(values) if values else float('nan'))
    return means


def _grid(
    config: ExperimentConfig,
    points: Dict[str, dict],
    row_label: str,
    metric: str,
    force: bool,
    datasets: Optional[Dict[str, DatasetHandle]]
) -> GridTable:
    datasets = datasets or DatasetLoader(config.raw).load()
    table = GridTable(row_label=row_label, metric=metric)
    for key, overrides in points.items():
        logger.info(f"{row_label} = {key}")
        bundle = run(config.with_overrides(overrides), force=force, datasets=datasets)
        table.rows[key] = stage_means(bundle, metric)
        table.bundles[key] = bundle
    return table


def gamma_sweep(
    config: ExperimentConfig,
    gammas: Sequence[float],
    force: bool = False,
    datasets: Optional[Dict[str, DatasetHandle]] = None
) -> GridTable:
    """
    One full run per γ with seeds held fixed.

    Returns:
        Grid of per-stage task accuracy, one row per γ
    """
    if not gammas:
        raise ConfigInvalid("gamma_sweep needs at least one γ")
    points = {f"{g:g}": {'loss_weights': {'gamma': float(g)}} for g in gammas}
    table = _grid(config, points, 'gamma', 'task_accuracy', force, datasets)
    table.save(config.output_dir / "gamma_sweep.tsv")
    return table


def ablate(
    config: ExperimentConfig,
    components: Sequence[str],
    force: bool = False,
    datasets: Optional[Dict[str, DatasetHandle]] = None
) -> GridTable:
    """
    Component ablation: 'kd' (no GTK, no averaging), 'kd+avg' (no GTK),
    'full' (everything).

    Writes ablation_task_accuracy.tsv and ablation_class_accuracy.tsv.

    Returns:
        Grid of per-stage task accuracy, one row per component

    Raises:
        ConfigInvalid: On an unknown component name
    """
    unknown = [c for c in components if c not in COMPONENTS]
    if unknown or not components:
        raise ConfigInvalid(f"Unknown components: {unknown}. Options: {list(COMPONENTS)}")
    points = {c: {'ablation': COMPONENTS[c]} for c in components}
    table = _grid(config, points, 'component', 'task_accuracy', force, datasets)
    table.save(config.output_dir / "ablation_task_accuracy.tsv")

    classes = GridTable(row_label='component', metric='class_accuracy', bundles=table.bundles)
    for key, bundle in table.bundles.items():
        classes.rows[key] = stage_means(bundle, 'class_accuracy')
    classes.save(config.output_dir / "ablation_class_accuracy.tsv")
    return table
