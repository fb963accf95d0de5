"""
Rendering of a results bundle: mean ± std table over seeds, TSV export and
accuracy-vs-stage curves.

Every rendered number is recomputed from the stored StageReports.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from src.harness.experiment import ResultsBundle
from src.utils.errors import EmptyBundle

logger = logging.getLogger(__name__)

METRICS = ('task_accuracy', 'class_accuracy', 'base_class_accuracy',
           'oracle_class_accuracy', 'single_sample_task_accuracy')


@dataclass
class StageSummary:
    """Mean and std over seeds of every metric at one stage."""
    stage: int
    seen_classes: int
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)
    avg_incremental_accuracy: float = 0.0
    avg_incremental_std: float = 0.0
    balance_std: float = 0.0


def summarize(bundle: ResultsBundle) -> List[StageSummary]:
    """
    Aggregate the bundle per stage.

    Average incremental accuracy is recomputed per seed as the mean of
    class_accuracy over stages 1..t. Balance std is the std of per-task
    class accuracy, averaged over seeds.

    Raises:
        EmptyBundle: If the bundle holds no reports
    """
    if bundle.is_empty():
        raise EmptyBundle("Bundle contains no stage reports")

    summaries = []
    for t in range(bundle.num_stages):
        reports = [r[t] for r in bundle.runs.values() if len(r) > t]
        summary = StageSummary(stage=reports[0].stage, seen_classes=reports[0].seen_classes)

        for metric in METRICS:
            values = [getattr(r, metric) for r in reports if getattr(r, metric) is not None]
            if values:
                summary.mean[metric] = float(np.mean(values))
                summary.std[metric] = float(np.std(values))

        running = [np.mean([r[i].class_accuracy for i in range(t + 1)])
                   for r in bundle.runs.values() if len(r) > t]
        summary.avg_incremental_accuracy = float(np.mean(running))
        summary.avg_incremental_std = float(np.std(running))

        balance = [np.std([v['class_accuracy'] for v in r.per_task_breakdown.values()])
                   for r in reports if r.per_task_breakdown]
        summary.balance_std = float(np.mean(balance)) if balance else 0.0
        summaries.append(summary)

    return summaries


def to_tsv(summaries: List[StageSummary]) -> str:
    """Tab-delimited table, one row per stage."""
    columns = [m for m in METRICS if any(m in s.mean for s in summaries)]
    header = ['stage', 'seen_classes']
    for metric in columns:
        header += [f"{metric}_mean", f"{metric}_std"]
    header += ['avg_incremental_accuracy_mean', 'avg_incremental_accuracy_std', 'balance_std']

    lines = ["\t".join(header)]
    for s in summaries:
        row = [str(s.stage), str(s.seen_classes)]
        for metric in columns:
            row += [_fmt(s.mean.get(metric)), _fmt(s.std.get(metric))]
        row += [_fmt(s.avg_incremental_accuracy), _fmt(s.avg_incremental_std), _fmt(s.balance_std)]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def plot_curves(summaries: List[StageSummary], path: Union[str, Path], title: str = "") -> Path:
    """Task and class accuracy (mean ± std) against stage."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    stages = [s.stage for s in summaries]
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric, label in (('task_accuracy', 'task accuracy'),
                          ('class_accuracy', 'class accuracy'),
                          ('base_class_accuracy', 'base model accuracy')):
        if not all(metric in s.mean for s in summaries):
            continue
        mean = np.array([s.mean[metric] for s in summaries])
        std = np.array([s.std[metric] for s in summaries])
        ax.plot(stages, mean, marker='o', label=label)
        ax.fill_between(stages, mean - std, mean + std, alpha=0.2)

    ax.set_xlabel("stage")
    ax.set_ylabel("accuracy over seen classes")
    ax.set_xticks(stages)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def report(bundle: ResultsBundle, output_dir: Optional[Union[str, Path]] = None) -> List[StageSummary]:
    """
    Summarize a bundle and write results.tsv and accuracy_curves.png.

    Args:
        bundle: Loaded results bundle
        output_dir: Where files go (None = nothing written)

    Raises:
        EmptyBundle: If the bundle holds no reports
    """
    summaries = summarize(bundle)
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        (output_dir / "results.tsv").write_text(to_tsv(summaries))
        plot_curves(summaries, output_dir / "accuracy_curves.png",
                    title=f"run {bundle.fingerprint[:12]} ({len(bundle.seeds)} seed(s))")
        logger.info(f"Wrote results.tsv and accuracy_curves.png to {output_dir}")
    return summaries
