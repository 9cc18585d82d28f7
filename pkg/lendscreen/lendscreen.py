"""Reproducible runs of the inclusive loan-screening experiments.

Every command writes its artifacts to a run directory named after the command
and a hash of its configuration and inputs, and finishes by writing a
manifest. Re-running a manifest's command with its config reproduces its
metrics exactly.

Usage:
  import asyncio
  from lendscreen import lendscreen

  api = lendscreen.LendScreenApi(runs_dir='runs')
  configs = api.load_config('samples/desk_scale.json')
  api.generate(configs, 'data/desk')
  manifest = asyncio.run(api.ablate(configs, 'data/desk', seeds=[0, 1, 2]))
  print(manifest['metrics'])
"""

import os
import logging
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import pandas as pd

from .lendscreen_data import load_split, save_split, generate_population
from .lendscreen_enums import Artifacts, BackboneKind, Command, Mode
from .lendscreen_errors import ConfigError, LendScreenError
from .lendscreen_experiments import (ExperimentJob, JobResult, check_ratios,
                                     job_row, loss_curve_table,
                                     metrics_table, run_ablation,
                                     run_backbone_sweep, run_label_ratio_sweep,
                                     run_length_bins, run_transductive,
                                     seed_means, train_job)
from .lendscreen_model import load_checkpoint, save_checkpoint
from .lendscreen_parsing import ConfigParsers, loads_config, snapshot, type_parsing
from .lendscreen_training import embed, evaluate, tagged_pca
from .lendscreen_types import DatasetSplit, RunManifest
from .utils import atomic_write_text, config_hash, dumps

EXPERIMENT_KEYS = ('seeds', 'ratios', 'backbones', 'with_transductive',
                   'plots')


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class LendScreenApi(object):
    """Generates datasets, trains and evaluates models and runs experiments."""

    @property
    def logger(self) -> logging.Logger:
        return self._logger

    @property
    def runs_dir(self) -> str:
        return self._runs_dir

    @property
    def workers(self) -> int:
        return self._workers

    def __init__(self,
                 runs_dir: str = 'runs',
                 workers: int = 1,
                 logger: logging.Logger = logging.getLogger(name=__name__)
                 ):
        """Instantiates the LendScreenApi.

        Args:
          runs_dir: Root directory of run directories. Overridden by env var
              'LENDSCREEN_RUNS_DIR'.

          workers: Number of worker processes for independent experiment
              jobs. Overridden by env var 'LENDSCREEN_WORKERS'. Results do not
              depend on it.

          logger: add custom logger
        """

        self._logger = logger

        self._runs_dir = os.getenv(key="LENDSCREEN_RUNS_DIR", default=runs_dir)

        workers = type_parsing.str_to_int(
            os.getenv(key="LENDSCREEN_WORKERS", default=workers))
        if isinstance(workers, bool) or not isinstance(workers, int) \
                or workers < 1:
            error_msg = f"Worker count must be a positive integer, got {workers!r}. Set it with the init arg 'workers' or the env var 'LENDSCREEN_WORKERS'."

            self._logger.error(error_msg)
            raise ConfigError('workers', error_msg)
        self._workers = workers

    # ------------------------------------------------------------ inputs

    def load_config(self, path: str = None,
                    overrides: Iterable[str] = ()) -> Dict[str, Any]:
        """Parsed configs from a JSON file (optional) plus `section.key=value`
        overrides."""
        text = ''
        if path:
            try:
                with open(path, encoding='utf-8') as handle:
                    text = handle.read()
            except OSError as error:
                error_msg = f"Cannot read config file {path}: {error.strerror}"

                self._logger.error(error_msg)
                raise LendScreenError(error_msg)
        configs = loads_config(text, overrides)
        unknown = set(configs['experiment']) - set(EXPERIMENT_KEYS)
        if unknown:
            raise ConfigError(f"experiment.{sorted(unknown)[0]}", 'unknown key')
        return configs

    def load_dataset(self, directory: str) -> DatasetSplit:
        train_path = os.path.join(directory, Artifacts.TRAIN_SPLIT)
        if not os.path.exists(train_path):
            error_msg = f"Dataset not found: {train_path} does not exist"

            self._logger.error(error_msg)
            raise LendScreenError(error_msg)
        split = load_split(directory)
        self._logger.info(f"Loaded {len(split.train)} train and "
                          f"{len(split.test)} test borrowers from {directory}")
        return split

    # ------------------------------------------------------- run plumbing

    def _run_dir(self, command: Command, configs: Dict[str, Any],
                 inputs: Dict[str, Any]) -> Tuple[str, str]:
        digest = config_hash({'command': command, 'config': snapshot(configs),
                              'inputs': inputs})
        run_id = f"{command}-{digest}"
        path = os.path.join(self._runs_dir, run_id)
        os.makedirs(path, exist_ok=True)
        return run_id, path

    def _write_csv(self, frame: pd.DataFrame, path: str) -> str:
        atomic_write_text(path, frame.to_csv(index=False))
        self._logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def _finish(self, run_id: str, directory: str, command: Command,
                configs: Dict[str, Any], seed: int, started_at: str,
                outputs: Dict[str, str], metrics: Dict[str, Any]) -> RunManifest:
        manifest = RunManifest(run_id=run_id, command=str(command),
                               config=snapshot(configs), seed=seed,
                               started_at=started_at, finished_at=_now(),
                               outputs=outputs, metrics=metrics)
        path = os.path.join(directory, Artifacts.MANIFEST)
        atomic_write_text(path, dumps(manifest, indent=2))
        self._logger.info(f"Run {run_id} finished; manifest at {path}")
        return manifest

    def _seeds(self, configs: Dict[str, Any], seeds: Sequence[int] = None
               ) -> List[int]:
        if seeds is None:
            seeds = configs['experiment'].get('seeds',
                                              [configs['training'].seed])
        if isinstance(seeds, (int, str)):
            seeds = type_parsing.int_list(str(seeds))
        if not seeds:
            raise ConfigError('experiment.seeds', 'needs at least one seed')
        return [int(seed) for seed in seeds]

    def _plots(self, configs: Dict[str, Any], plots: bool = None) -> bool:
        if plots is None:
            return bool(type_parsing.to_bool(
                configs['experiment'].get('plots', False)))
        return plots

    def _experiment_outputs(self, directory: str, results: List[JobResult]
                            ) -> Tuple[Dict[str, str], pd.DataFrame]:
        table = metrics_table(results)
        outputs = {
            'metrics': self._write_csv(
                table, os.path.join(directory, Artifacts.METRICS)),
            'loss_curves': self._write_csv(
                loss_curve_table(results),
                os.path.join(directory, Artifacts.LOSS_CURVES)),
        }
        return outputs, table

    @staticmethod
    def _summary(table: pd.DataFrame, by: Sequence[str]) -> Dict[str, Any]:
        means = seed_means(table, by)
        summary = {}
        for _, row in means.iterrows():
            key = '/'.join(str(row[name]) for name in by)
            summary[key] = {'aucroc': row['aucroc'], 'profit': row['profit'],
                            'uniformity': row['uniformity']}
        return summary

    # ----------------------------------------------------------- commands

    def generate(self, configs: Dict[str, Any], out_dir: str) -> RunManifest:
        """Writes the train/test JSONL split and a manifest into `out_dir`."""
        started_at = _now()
        generator = configs['generator']
        split = generate_population(generator)
        outputs = save_split(split, out_dir)
        self._logger.info(f"Generated {len(split.train)} train and "
                          f"{len(split.test)} test borrowers into {out_dir}")
        labels = [label for history in split.train
                  for label in history['labels']]
        metrics = {'n_train': len(split.train), 'n_test': len(split.test),
                   'train_loans': len(labels),
                   'train_approval_rate': sum(label != -1 for label in labels)
                   / len(labels)}
        return self._finish(f"{Command.GENERATE}-{config_hash(snapshot(configs))}",
                            out_dir, Command.GENERATE, configs, generator.seed,
                            started_at, outputs, metrics)

    def train(self, configs: Dict[str, Any], data_dir: str) -> RunManifest:
        """Trains one model, evaluates it on the test split and checkpoints
        it."""
        started_at = _now()
        split = self.load_dataset(data_dir)
        training = configs['training']
        job = ExperimentJob(variant=training.variant, seed=training.seed,
                            backbone=configs['model'].backbone,
                            transductive=training.transductive)
        run_id, directory = self._run_dir(
            Command.TRAIN, configs, {'data': os.path.abspath(data_dir)})
        result, report, _ = train_job(split, job, configs['model'], training,
                                      configs['profit'])
        row = job_row(job, report, result.final_loss)
        curves = result.loss_curves
        outputs = {
            'checkpoint': save_checkpoint(
                os.path.join(directory, Artifacts.CHECKPOINT), result.model,
                result.stats, {'config': snapshot(configs), 'steps': result.steps}),
            'metrics': self._write_csv(
                metrics_table([JobResult(job, row, curves, None)]),
                os.path.join(directory, Artifacts.METRICS)),
            'loss_curves': self._write_csv(
                curves, os.path.join(directory, Artifacts.LOSS_CURVES)),
        }
        return self._finish(run_id, directory, Command.TRAIN, configs,
                            training.seed, started_at, outputs, row)

    def _checkpoint_configs(self, configs: Dict[str, Any], metadata: dict
                            ) -> Dict[str, Any]:
        if configs is not None:
            return configs
        return ConfigParsers().parse(metadata.get('config', {}))

    def evaluate(self, configs: Dict[str, Any], data_dir: str,
                 checkpoint: str) -> RunManifest:
        """Scores a saved checkpoint on the test split. With `configs` None the
        configs recorded in the checkpoint are used."""
        started_at = _now()
        split = self.load_dataset(data_dir)
        expected = configs['model'] if configs is not None else None
        model, stats, metadata = load_checkpoint(checkpoint, expected)
        configs = self._checkpoint_configs(configs, metadata)
        training = configs['training']
        run_id, directory = self._run_dir(
            Command.EVALUATE, configs,
            {'data': os.path.abspath(data_dir),
             'checkpoint': os.path.abspath(checkpoint)})
        report, predictions = evaluate(model, stats, split, training,
                                       configs['profit'], self._logger)
        job = ExperimentJob(variant=training.variant, seed=training.seed,
                            backbone=model.config.backbone)
        row = job_row(job, report, float('nan'))
        outputs = {'metrics': self._write_csv(
            metrics_table([JobResult(job, row, None, predictions)]),
            os.path.join(directory, Artifacts.METRICS))}
        return self._finish(run_id, directory, Command.EVALUATE, configs,
                            training.seed, started_at, outputs, row)

    async def ablate(self, configs: Dict[str, Any], data_dir: str,
                     seeds: Sequence[int] = None,
                     plots: bool = None) -> RunManifest:
        """Four variants per seed; also writes the sequence-length breakdown
        of the full model against the model trained without either objective.
        """
        started_at = _now()
        split = self.load_dataset(data_dir)
        seeds = self._seeds(configs, seeds)
        run_id, directory = self._run_dir(
            Command.ABLATE, configs,
            {'data': os.path.abspath(data_dir), 'seeds': seeds})
        results = await run_ablation(split, configs['model'],
                                     configs['training'], seeds,
                                     configs['profit'], self._workers)
        outputs, table = self._experiment_outputs(directory, results)
        bins, slopes = run_length_bins(results)
        bins = bins.merge(slopes, on='seed')
        outputs['length_bins'] = self._write_csv(
            bins, os.path.join(directory, Artifacts.LENGTH_BINS))
        if self._plots(configs, plots):
            from . import lendscreen_plots
            outputs['align_uniform_plot'] = lendscreen_plots.plot_align_uniform(
                table, os.path.join(directory, Artifacts.ALIGN_UNIFORM_PLOT))
            outputs['length_bins_plot'] = lendscreen_plots.plot_length_bins(
                bins, os.path.join(directory, Artifacts.LENGTH_BINS_PLOT))
        metrics = self._summary(table, ['variant'])
        metrics['length_bin_slope'] = float(slopes['slope'].mean())
        return self._finish(run_id, directory, Command.ABLATE, configs,
                            seeds[0], started_at, outputs, metrics)

    async def backbones(self, configs: Dict[str, Any], data_dir: str,
                        seeds: Sequence[int] = None,
                        backbones: Sequence[str] = None) -> RunManifest:
        started_at = _now()
        split = self.load_dataset(data_dir)
        seeds = self._seeds(configs, seeds)
        if backbones is None:
            backbones = configs['experiment'].get(
                'backbones', [kind.value for kind in BackboneKind])
        if isinstance(backbones, str):
            backbones = [kind.strip() for kind in backbones.split(',')]
        try:
            backbones = [BackboneKind(kind) for kind in backbones]
        except ValueError as error:
            raise ConfigError('experiment.backbones', str(error))
        run_id, directory = self._run_dir(
            Command.BACKBONES, configs,
            {'data': os.path.abspath(data_dir), 'seeds': seeds,
             'backbones': backbones})
        results = await run_backbone_sweep(split, configs['model'],
                                           configs['training'], seeds,
                                           backbones, configs['profit'],
                                           self._workers)
        outputs, table = self._experiment_outputs(directory, results)
        return self._finish(run_id, directory, Command.BACKBONES, configs,
                            seeds[0], started_at, outputs,
                            self._summary(table, ['backbone', 'variant']))

    async def transductive(self, configs: Dict[str, Any], data_dir: str,
                           seeds: Sequence[int] = None) -> RunManifest:
        started_at = _now()
        split = self.load_dataset(data_dir)
        seeds = self._seeds(configs, seeds)
        run_id, directory = self._run_dir(
            Command.TRANSDUCTIVE, configs,
            {'data': os.path.abspath(data_dir), 'seeds': seeds})
        results = await run_transductive(split, configs['model'],
                                         configs['training'], seeds,
                                         configs['profit'], self._workers)
        outputs, table = self._experiment_outputs(directory, results)
        return self._finish(run_id, directory, Command.TRANSDUCTIVE, configs,
                            seeds[0], started_at, outputs,
                            self._summary(table, ['transductive']))

    async def sweep(self, configs: Dict[str, Any], data_dir: str,
                    ratios: Sequence[float] = None,
                    seeds: Sequence[int] = None,
                    with_transductive: bool = None,
                    plots: bool = None) -> RunManifest:
        """Labeled-test-ratio sweep; one metrics row per (mode, seed, ratio)."""
        started_at = _now()
        split = self.load_dataset(data_dir)
        seeds = self._seeds(configs, seeds)
        experiment = configs['experiment']
        if ratios is None:
            ratios = experiment.get('ratios', [0.0, 0.01, 0.05, 0.1, 0.2, 0.5])
        if isinstance(ratios, (int, float, str)):
            ratios = type_parsing.float_list(str(ratios))
        ratios = list(check_ratios(ratios))
        if with_transductive is None:
            with_transductive = bool(type_parsing.to_bool(
                experiment.get('with_transductive', False)))
        modes = (False, True) if with_transductive else (False,)
        run_id, directory = self._run_dir(
            Command.SWEEP, configs,
            {'data': os.path.abspath(data_dir), 'seeds': seeds,
             'ratios': ratios, 'transductive_modes': modes})
        results = await run_label_ratio_sweep(split, configs['model'],
                                              configs['training'], ratios,
                                              seeds, modes, configs['profit'],
                                              self._workers)
        outputs, table = self._experiment_outputs(directory, results)
        if self._plots(configs, plots):
            from . import lendscreen_plots
            outputs['label_ratio_plot'] = lendscreen_plots.plot_label_ratio(
                table, os.path.join(directory, Artifacts.LABEL_RATIO_PLOT))
        return self._finish(run_id, directory, Command.SWEEP, configs,
                            seeds[0], started_at, outputs,
                            self._summary(table, ['transductive', 'label_ratio']))

    def embed(self, configs: Dict[str, Any], checkpoint: str, data_dir: str,
              out_dir: str, split_name: str = 'train',
              plots: bool = None) -> RunManifest:
        """Exports the fused vector of every loan, tagged with its label
        (1 non-default, 0 default, -1 unapproved) and domain, plus a 2-D PCA.
        """
        started_at = _now()
        split = self.load_dataset(data_dir)
        expected = configs['model'] if configs is not None else None
        model, stats, metadata = load_checkpoint(checkpoint, expected)
        configs = self._checkpoint_configs(configs, metadata)
        if split_name not in ('train', 'test'):
            raise ConfigError('split', "must be 'train' or 'test'")
        histories = split.train if split_name == 'train' else split.test
        tags, vectors = embed(model, stats, histories,
                              configs['training'].eval_batch_size, Mode.EVAL)
        coordinates, pca = tagged_pca(tags, vectors)

        os.makedirs(out_dir, exist_ok=True)
        embeddings = pd.concat(
            [tags, pd.DataFrame(vectors, columns=[f'f{i}' for i in
                                                  range(vectors.shape[1])])],
            axis=1)
        outputs = {
            'embeddings': self._write_csv(
                embeddings, os.path.join(out_dir, Artifacts.EMBEDDINGS)),
            'pca': self._write_csv(coordinates,
                                   os.path.join(out_dir, Artifacts.PCA)),
        }
        if self._plots(configs, plots):
            from . import lendscreen_plots
            outputs['pca_plot'] = lendscreen_plots.plot_pca(
                coordinates, os.path.join(out_dir, Artifacts.PCA_PLOT))
        metrics = {'n_loans': len(coordinates),
                   'explained_variance_ratio':
                       pca.explained_variance_ratio.tolist()}
        run_id = f"{Command.EMBED}-" + config_hash(
            {'config': snapshot(configs),
             'checkpoint': os.path.abspath(checkpoint), 'split': split_name})
        return self._finish(run_id, out_dir, Command.EMBED, configs,
                            configs['training'].seed, started_at, outputs,
                            metrics)
