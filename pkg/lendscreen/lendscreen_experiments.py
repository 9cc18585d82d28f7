"""Experiment runners over independent (variant, seed, backbone, ratio) jobs.

Each job owns its model, tape and random streams, so results do not depend
on how many worker processes run them.

Usage:
  import asyncio
  from lendscreen import lendscreen_experiments as experiments

  table = asyncio.run(experiments.run_ablation(split, model_config,
                                               train_config, seeds=[0, 1]))
"""

import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .lendscreen_data import reveal_test_labels
from .lendscreen_enums import BackboneKind, Variant
from .lendscreen_errors import LendScreenError
from .lendscreen_metrics import length_bin_deltas
from .lendscreen_training import Trainer, TrainResult, evaluate
from .lendscreen_types import (INCLUSION_FIELDS, DatasetSplit, MetricsReport,
                               ModelConfig, ProfitModel, TrainConfig)


logger = logging.getLogger(__name__)

LABEL_RATIOS = (0.0, 0.01, 0.05, 0.1, 0.2, 0.5)

METRICS_COLUMNS = (
    'variant', 'backbone', 'seed', 'transductive', 'label_ratio', 'aucroc',
    'profit', 'screened_profit', 'revealed_profit', 'n_evaluated',
    'n_approved', 'approval_rate', 'alignment', 'uniformity',
) + tuple(f'{name}_mean' for name in INCLUSION_FIELDS) + ('final_loss',)


@dataclass(frozen=True)
class ExperimentJob:
    variant: Variant = Variant.OURS
    seed: int = 0
    backbone: BackboneKind = BackboneKind.TRANSFORMER
    transductive: bool = False
    label_ratio: float = 0.0


@dataclass
class JobResult:
    job: ExperimentJob
    row: dict
    loss_curves: pd.DataFrame
    predictions: pd.DataFrame


def job_configs(job: ExperimentJob, model_config: ModelConfig,
                train_config: TrainConfig) -> Tuple[ModelConfig, TrainConfig]:
    return (replace(model_config, backbone=BackboneKind(job.backbone)),
            replace(train_config.for_variant(job.variant), seed=job.seed,
                    transductive=job.transductive))


def job_row(job: ExperimentJob, report: MetricsReport,
            final_loss: float) -> dict:
    row = {'variant': str(job.variant), 'backbone': str(job.backbone),
           'seed': job.seed, 'transductive': job.transductive,
           'label_ratio': job.label_ratio}
    row.update(report.summary())
    row['final_loss'] = final_loss
    return row


def train_job(split: DatasetSplit, job: ExperimentJob,
              model_config: ModelConfig, train_config: TrainConfig,
              profit_model: ProfitModel = None
              ) -> Tuple[TrainResult, MetricsReport, pd.DataFrame]:
    job_model, job_train = job_configs(job, model_config, train_config)
    job_split = reveal_test_labels(split, job.label_ratio, job.seed)
    result = Trainer(job_model, job_train).train(job_split)
    report, predictions = evaluate(result.model, result.stats, job_split,
                                   job_train, profit_model)
    return result, report, predictions


def run_job(split: DatasetSplit, job: ExperimentJob, model_config: ModelConfig,
            train_config: TrainConfig,
            profit_model: ProfitModel = None) -> JobResult:
    """Trains and evaluates one job. Module level so worker processes can
    import it."""
    result, report, predictions = train_job(split, job, model_config,
                                            train_config, profit_model)
    row = job_row(job, report, result.final_loss)
    curves = result.loss_curves.copy()
    for key in ('label_ratio', 'transductive', 'seed', 'backbone', 'variant'):
        curves.insert(0, key, row[key])
    return JobResult(job=job, row=row, loss_curves=curves,
                     predictions=predictions)


async def run_jobs(split: DatasetSplit, jobs: Sequence[ExperimentJob],
                   model_config: ModelConfig, train_config: TrainConfig,
                   profit_model: ProfitModel = None,
                   workers: int = 1) -> List[JobResult]:
    """Runs jobs inline (workers == 1) or across a process pool; results keep
    the order of `jobs`."""
    logger.info(f"Running {len(jobs)} jobs on {workers} worker(s)")
    if workers <= 1:
        results = []
        for job in jobs:
            logger.info(f"Job {job}")
            results.append(run_job(split, job, model_config, train_config,
                                   profit_model))
        return results

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        tasks = [loop.run_in_executor(pool, run_job, split, job, model_config,
                                      train_config, profit_model)
                 for job in jobs]
        return list(await asyncio.gather(*tasks))


def metrics_table(results: Iterable[JobResult]) -> pd.DataFrame:
    return pd.DataFrame([result.row for result in results],
                        columns=list(METRICS_COLUMNS))


def loss_curve_table(results: Iterable[JobResult]) -> pd.DataFrame:
    return pd.concat([result.loss_curves for result in results],
                     ignore_index=True)


def seed_means(table: pd.DataFrame, by: Sequence[str],
               columns: Sequence[str] = ('aucroc', 'profit', 'uniformity')
               ) -> pd.DataFrame:
    """Seed-mean of the given metrics per group."""
    return table.groupby(list(by), sort=False)[list(columns)].mean().reset_index()


async def run_ablation(split: DatasetSplit, model_config: ModelConfig,
                       train_config: TrainConfig, seeds: Sequence[int] = (0,),
                       profit_model: ProfitModel = None,
                       workers: int = 1) -> List[JobResult]:
    """Four variants per seed, evaluated on the fully labeled test split."""
    jobs = [ExperimentJob(variant=variant, seed=seed,
                          backbone=model_config.backbone)
            for seed in seeds for variant in Variant]
    return await run_jobs(split, jobs, model_config, train_config,
                          profit_model, workers)


async def run_backbone_sweep(split: DatasetSplit, model_config: ModelConfig,
                             train_config: TrainConfig,
                             seeds: Sequence[int] = (0,),
                             backbones: Sequence[BackboneKind] = tuple(BackboneKind),
                             profit_model: ProfitModel = None,
                             workers: int = 1) -> List[JobResult]:
    jobs = [ExperimentJob(variant=variant, seed=seed,
                          backbone=BackboneKind(backbone))
            for backbone in backbones for seed in seeds for variant in Variant]
    return await run_jobs(split, jobs, model_config, train_config,
                          profit_model, workers)


async def run_transductive(split: DatasetSplit, model_config: ModelConfig,
                           train_config: TrainConfig,
                           seeds: Sequence[int] = (0,),
                           profit_model: ProfitModel = None,
                           workers: int = 1) -> List[JobResult]:
    """The full model with and without unlabeled test loans in CL and DA."""
    jobs = [ExperimentJob(variant=Variant.OURS, seed=seed,
                          backbone=model_config.backbone,
                          transductive=transductive)
            for seed in seeds for transductive in (False, True)]
    return await run_jobs(split, jobs, model_config, train_config,
                          profit_model, workers)


def check_ratios(ratios: Iterable[float]) -> Tuple[float, ...]:
    ratios = tuple(float(ratio) for ratio in ratios)
    unknown = [ratio for ratio in ratios
               if not any(np.isclose(ratio, allowed) for allowed in LABEL_RATIOS)]
    if unknown:
        raise LendScreenError(f"label ratios must be drawn from {LABEL_RATIOS}, "
                              f"got {unknown}")
    return ratios


async def run_label_ratio_sweep(split: DatasetSplit, model_config: ModelConfig,
                                train_config: TrainConfig,
                                ratios: Sequence[float] = LABEL_RATIOS,
                                seeds: Sequence[int] = (0,),
                                transductive_modes: Sequence[bool] = (False,),
                                profit_model: ProfitModel = None,
                                workers: int = 1) -> List[JobResult]:
    """Reveals a ratio of test labels per seed, trains the full model and
    evaluates on the remaining test loans."""
    jobs = [ExperimentJob(variant=Variant.OURS, seed=seed,
                          backbone=model_config.backbone,
                          transductive=transductive, label_ratio=ratio)
            for transductive in transductive_modes
            for seed in seeds for ratio in check_ratios(ratios)]
    return await run_jobs(split, jobs, model_config, train_config,
                          profit_model, workers)


def run_length_bins(results: Sequence[JobResult],
                    ours: Variant = Variant.OURS,
                    vanilla: Variant = Variant.NEITHER
                    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-seed, per-bin AUC of `ours` and `vanilla` with delta and slope.

    Returns (bins, slopes), one slope row per seed."""
    by_key = {(result.job.seed, Variant(result.job.variant)): result
              for result in results}
    tables, slopes = [], []
    for seed in sorted({seed for seed, _ in by_key}):
        if (seed, ours) not in by_key or (seed, vanilla) not in by_key:
            continue
        left = by_key[(seed, ours)].predictions
        right = by_key[(seed, vanilla)].predictions
        left = left[~left['revealed']]
        right = right[~right['revealed']]
        merged = left.merge(right[['borrower_id', 'position', 'score']],
                            on=['borrower_id', 'position'],
                            suffixes=('_ours', '_vanilla'))
        table, slope = length_bin_deltas(merged['score_ours'],
                                         merged['score_vanilla'],
                                         merged['label'],
                                         merged['sequence_length'])
        table.insert(0, 'seed', seed)
        tables.append(table)
        slopes.append({'seed': seed, 'slope': slope})
    if not tables:
        raise LendScreenError(f"length bins need both {ours} and {vanilla} "
                              f"results for a seed")
    return (pd.concat(tables, ignore_index=True),
            pd.DataFrame(slopes, columns=['seed', 'slope']))
