"""Training loop and evaluation of one screening model."""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .lendscreen_data import (FeatureStats, LoanBatch, build_batch,
                              compute_feature_stats, iterate_batches,
                              loan_table, training_pool)
from .lendscreen_enums import Mode
from .lendscreen_errors import LendScreenError, NumericalError
from .lendscreen_metrics import (alignment_metric, evaluate_auc,
                                 evaluate_profit, inclusion_report,
                                 length_bin_auc, pca_project,
                                 realized_profit, uniformity_metric)
from .lendscreen_model import ScreeningModel
from .lendscreen_objectives import (ContrastiveBatch, contrastive_loss,
                                    domain_loss, label_loss, total_loss,
                                    wd_schedule)
from .lendscreen_optim import AdamOptimizer
from .lendscreen_tensor import Tensor, backward, no_grad, softmax
from .lendscreen_types import (INCLUSION_FIELDS, BorrowerHistory, DatasetSplit,
                               MetricsReport, ModelConfig, PcaResult,
                               ProfitModel, TrainConfig)
from .utils import derive_seed, make_rng


LOSS_CURVE_COLUMNS = ('epoch', 'steps', 'total', 'label', 'contrastive',
                      'domain', 'w_d')


@dataclass
class TrainResult:
    model: ScreeningModel
    stats: FeatureStats
    loss_curves: pd.DataFrame
    steps: int

    @property
    def final_loss(self) -> float:
        return float(self.loss_curves['total'].iloc[-1])


def contrastive_views(first: Tensor, second: Tensor, batch: LoanBatch,
                      limit: int, rng: np.random.Generator
                      ) -> Optional[ContrastiveBatch]:
    """Pairs the two dropout views at contrastive positions, at most `limit`."""
    rows, slots = np.nonzero(batch.contrastive_mask)
    if rows.size == 0:
        return None
    if rows.size > limit:
        keep = np.sort(rng.choice(rows.size, size=limit, replace=False))
        rows, slots = rows[keep], slots[keep]
    return ContrastiveBatch(first[rows, slots], second[rows, slots])


class Trainer(object):
    """Trains one model on a split with the configured objectives."""

    @property
    def logger(self) -> logging.Logger:
        return self._logger

    def __init__(self,
                 model_config: ModelConfig,
                 train_config: TrainConfig,
                 logger: logging.Logger = logging.getLogger(name=__name__)):
        self._logger = logger
        self.model_config = model_config.validate()
        self.train_config = train_config.validate()

    def _step_losses(self, model: ScreeningModel, batch: LoanBatch,
                     step_seed: int, pair_rng: np.random.Generator):
        config = self.train_config
        first = model.forward(batch, Mode.TRAIN, derive_seed(step_seed, 'view', 0))
        losses = {'label': label_loss(first.label_logits, batch.Y,
                                      batch.label_mask),
                  'contrastive': None, 'domain': None}
        if config.use_cl:
            second = model.forward(batch, Mode.TRAIN,
                                   derive_seed(step_seed, 'view', 1))
            views = contrastive_views(first.f, second.f, batch,
                                      config.max_contrastive_pairs, pair_rng)
            if views is None:
                self._logger.debug("No contrastive loans in batch; skipping "
                                   "the contrastive term")
            else:
                losses['contrastive'] = contrastive_loss(views,
                                                         config.weights.tau)
        if config.use_da:
            losses['domain'] = domain_loss(first.domain_logits, batch.domain,
                                           batch.domain_mask)
        return losses

    def train(self, split: DatasetSplit) -> TrainResult:
        config = self.train_config
        pool = training_pool(split, config.transductive)
        if not any(entry.label_positions for entry in pool):
            error_msg = "no labeled loans to train the label predictor on"
            self._logger.error(error_msg)
            raise LendScreenError(error_msg)

        stats = compute_feature_stats(split.train)
        model = ScreeningModel(self.model_config,
                               seed=derive_seed(config.seed, 'init'))
        optimizer = AdamOptimizer(model.params, config.learning_rate,
                                  config.beta1, config.beta2)
        weights = replace(config.weights, step=0)
        self._logger.info(
            f"Training {config.variant} ({self.model_config.backbone}) on "
            f"{len(pool)} borrowers, {model.parameter_count()} parameters, "
            f"seed {config.seed}")

        curves = []
        for epoch in range(config.epochs):
            sums = dict.fromkeys(('total', 'label', 'contrastive', 'domain'), 0.0)
            batches = 0
            shuffle = make_rng(config.seed, 'shuffle', epoch)
            for chunk in iterate_batches(pool, config.batch_size, shuffle):
                batch = build_batch(chunk, self.model_config.max_sequence_length,
                                    stats)
                step = weights.step
                losses = self._step_losses(
                    model, batch, derive_seed(config.seed, 'dropout', step),
                    make_rng(config.seed, 'pairs', step))
                loss = total_loss(losses['label'], losses['contrastive'],
                                  losses['domain'], weights, config.use_cl,
                                  config.use_da)
                value = loss.item()
                if not np.isfinite(value):
                    self._logger.error(f"Loss became {value} at step {step}")
                    raise NumericalError(step, f"non-finite loss ({value})")
                optimizer.zero_grad()
                backward(loss)
                optimizer.step()
                weights.step += 1

                sums['total'] += value
                for name in ('label', 'contrastive', 'domain'):
                    if losses[name] is not None:
                        sums[name] += losses[name].item()
                batches += 1
                self._logger.debug(
                    f"step {step}: loss {value:.6f} label "
                    f"{losses['label'].item():.6f}")

            row = {'epoch': epoch + 1, 'steps': weights.step,
                   'w_d': wd_schedule(weights.step, weights.gamma,
                                      weights.wd_max)}
            row.update({name: total / batches for name, total in sums.items()})
            curves.append(row)
            self._logger.info(f"epoch {epoch + 1}/{config.epochs}: loss "
                              f"{row['total']:.5f} (label {row['label']:.5f}, "
                              f"contrastive {row['contrastive']:.5f}, domain "
                              f"{row['domain']:.5f})")

        return TrainResult(model=model, stats=stats,
                           loss_curves=pd.DataFrame(curves,
                                                    columns=LOSS_CURVE_COLUMNS),
                           steps=weights.step)


def train(split: DatasetSplit, model_config: ModelConfig,
          train_config: TrainConfig,
          logger: logging.Logger = logging.getLogger(name=__name__)
          ) -> TrainResult:
    return Trainer(model_config, train_config, logger).train(split)


# --------------------------------------------------------------- evaluation

def _batched(histories: Sequence[BorrowerHistory], model: ScreeningModel,
             stats: FeatureStats, batch_size: int):
    for chunk in iterate_batches(list(histories), batch_size):
        yield build_batch(chunk, model.config.max_sequence_length, stats)


def _valid(array: np.ndarray, batch: LoanBatch) -> np.ndarray:
    return array[batch.mask]


def predict(model: ScreeningModel, stats: FeatureStats,
            histories: Sequence[BorrowerHistory],
            batch_size: int = 512) -> pd.DataFrame:
    """Non-default probability per loan, one row per (borrower, position).

    Loans dropped by truncation are absent."""
    frames = []
    with no_grad():
        for batch in _batched(histories, model, stats, batch_size):
            out = model.forward(batch, Mode.EVAL)
            scores = softmax(out.label_logits, axis=-1).data[..., 1]
            refs = batch.loan_refs()
            lengths = np.repeat(batch.sequence_lengths, batch.lengths)
            frames.append(pd.DataFrame({
                'borrower_id': [ref[0] for ref in refs],
                'position': [ref[1] for ref in refs],
                'sequence_length': lengths,
                'score': _valid(scores, batch),
            }))
    return pd.concat(frames, ignore_index=True)


def embed(model: ScreeningModel, stats: FeatureStats,
          histories: Sequence[BorrowerHistory], batch_size: int = 512,
          mode: Mode = Mode.EVAL, dropout_seed: Optional[int] = None
          ) -> Tuple[pd.DataFrame, np.ndarray]:
    """Fused vectors per loan, with (label, domain) tags in the frame."""
    frames, vectors = [], []
    with no_grad():
        for batch in _batched(histories, model, stats, batch_size):
            out = model.forward(batch, mode, dropout_seed)
            refs = batch.loan_refs()
            labels = _valid(batch.Y, batch)
            frames.append(pd.DataFrame({
                'id': [f'{borrower}:{position}' for borrower, position in refs],
                'label': labels,
                'domain': (labels != -1).astype(np.int64),
            }))
            vectors.append(_valid(out.f.data, batch))
    return pd.concat(frames, ignore_index=True), np.concatenate(vectors)


def _diagnostic_histories(histories: Sequence[BorrowerHistory], sample: int,
                          rng: np.random.Generator) -> List[BorrowerHistory]:
    chosen, loans = [], 0
    for index in rng.permutation(len(histories)):
        chosen.append(histories[index])
        loans += len(histories[index]['labels'])
        if loans >= sample:
            break
    return chosen


def representation_diagnostics(model: ScreeningModel, stats: FeatureStats,
                               histories: Sequence[BorrowerHistory],
                               sample: int, seed: int,
                               batch_size: int = 512) -> Tuple[float, float]:
    """(alignment, uniformity) from two dropout views of sampled loans."""
    chosen = _diagnostic_histories(histories, sample, make_rng(seed, 'diagnostics'))
    _, first = embed(model, stats, chosen, batch_size, Mode.TRAIN,
                     derive_seed(seed, 'diagnostics', 0))
    _, second = embed(model, stats, chosen, batch_size, Mode.TRAIN,
                      derive_seed(seed, 'diagnostics', 1))
    return (alignment_metric(first[:sample], second[:sample]),
            uniformity_metric(first[:sample]))


def tagged_pca(tags: pd.DataFrame, vectors: np.ndarray, k: int = 2
               ) -> Tuple[pd.DataFrame, PcaResult]:
    """PCA coordinates per loan, next to its id and (label, domain) tags."""
    pca = pca_project(vectors, k=k)
    frame = pd.DataFrame({'id': tags['id'].to_numpy()})
    for component in range(k):
        frame[f'pc{component + 1}'] = pca.coordinates[:, component]
    frame['label'] = tags['label'].to_numpy()
    frame['domain'] = tags['domain'].to_numpy()
    return frame, pca


def _diagnostic_pca(model: ScreeningModel, stats: FeatureStats,
                    histories: Sequence[BorrowerHistory], sample: int,
                    seed: int, batch_size: int, logger: logging.Logger
                    ) -> Optional[pd.DataFrame]:
    chosen = _diagnostic_histories(histories, sample, make_rng(seed, 'diagnostics'))
    tags, vectors = embed(model, stats, chosen, batch_size, Mode.EVAL)
    try:
        frame, _ = tagged_pca(tags.iloc[:sample], vectors[:sample])
    except LendScreenError as error:
        logger.warning(f"No PCA coordinates for this report: {error}")
        return None
    return frame


def evaluate(model: ScreeningModel, stats: FeatureStats, split: DatasetSplit,
             train_config: TrainConfig, profit_model: ProfitModel = None,
             logger: logging.Logger = logging.getLogger(name=__name__)
             ) -> Tuple[MetricsReport, pd.DataFrame]:
    """Scores the test split and returns the report plus per-loan predictions.

    Revealed test loans are excluded from AUC, decisions and inclusion; their
    realized profit is reported as `revealed_profit` and added to `profit`."""
    profit_model = profit_model or ProfitModel()
    predictions = predict(model, stats, split.test, train_config.eval_batch_size)
    table = loan_table(split.test)
    predictions = predictions.merge(
        table, on=['borrower_id', 'position', 'sequence_length'], how='left')
    predictions['revealed'] = [
        (borrower, int(position)) in split.revealed
        for borrower, position in zip(predictions['borrower_id'],
                                      predictions['position'])]
    predictions['approve'] = (predictions['score']
                              >= train_config.approval_threshold)

    evaluated = predictions[~predictions['revealed']].reset_index(drop=True)
    revealed = predictions[predictions['revealed']].reset_index(drop=True)
    decisions = evaluated['approve'].to_numpy()

    aucroc = evaluate_auc(evaluated['score'], evaluated['label'])
    screened_profit = evaluate_profit(decisions, evaluated, profit_model)
    revealed_profit = (float(realized_profit(revealed, profit_model).sum())
                       if len(revealed) else 0.0)
    try:
        inclusion = inclusion_report(decisions, evaluated)
    except LendScreenError:
        logger.warning("Model approved no test loans; inclusion means are NaN")
        inclusion = {name: float('nan') for name in INCLUSION_FIELDS}
    alignment, uniformity = representation_diagnostics(
        model, stats, split.test, train_config.diagnostic_sample,
        train_config.seed, train_config.eval_batch_size)

    report = MetricsReport(
        aucroc=aucroc,
        profit=screened_profit + revealed_profit,
        n_approved=int(decisions.sum()),
        approval_rate=float(decisions.mean()),
        inclusion=inclusion,
        alignment=alignment,
        uniformity=uniformity,
        length_bin_auc=length_bin_auc(evaluated['score'], evaluated['label'],
                                      evaluated['sequence_length']),
        n_evaluated=len(evaluated),
        screened_profit=screened_profit,
        revealed_profit=revealed_profit,
        pca=_diagnostic_pca(model, stats, split.test,
                            train_config.diagnostic_sample, train_config.seed,
                            train_config.eval_batch_size, logger))
    logger.info(f"AUC {aucroc:.4f}, profit {report.profit:.2f}, approved "
                f"{report.n_approved}/{report.n_evaluated}")
    return report, predictions
