"""Unittests for lendscreen_training.py

Usage:
  python -m unittest tests.training_test
"""

import math
import os
import unittest

import numpy as np
from numpy import testing

from lendscreen import lendscreen_training as training
from lendscreen.lendscreen_data import build_batch, reveal_test_labels
from lendscreen.lendscreen_enums import Variant
from lendscreen.lendscreen_errors import LendScreenError, NumericalError
from lendscreen.lendscreen_tensor import Tensor
from lendscreen.lendscreen_types import DatasetSplit, GeneratorConfig
from tests.fixtures import make_history, tiny_model, tiny_split, tiny_training

SLOW = os.getenv('LENDSCREEN_SLOW_TESTS') == '1'


class DivergingTrainer(training.Trainer):
    """Trainer whose label loss turns NaN from `diverge_at` on."""

    def __init__(self, *args, diverge_at=0, **kwargs):
        super().__init__(*args, **kwargs)
        self.diverge_at = diverge_at
        self.calls = 0

    def _step_losses(self, model, batch, step_seed, pair_rng):
        losses = super()._step_losses(model, batch, step_seed, pair_rng)
        if self.calls >= self.diverge_at:
            losses['label'] = losses['label'] * float('nan')
        self.calls += 1
        return losses


class TrainerTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.split = tiny_split()
        cls.result = training.train(cls.split, tiny_model(), tiny_training())

    def test_loss_curves(self):
        curves = self.result.loss_curves
        self.assertEqual(list(curves.columns),
                         list(training.LOSS_CURVE_COLUMNS))
        self.assertEqual(list(curves['epoch']), [1, 2])
        batches = math.ceil(len(self.split.train) / 16)
        self.assertEqual(self.result.steps, 2 * batches)
        self.assertEqual(list(curves['steps']), [batches, 2 * batches])
        self.assertTrue(np.all(np.isfinite(curves[['total', 'label',
                                                   'contrastive',
                                                   'domain']].to_numpy())))
        self.assertGreater(curves['w_d'].iloc[1], curves['w_d'].iloc[0])
        self.assertEqual(self.result.final_loss, curves['total'].iloc[-1])

    def test_deterministic(self):
        again = training.train(self.split, tiny_model(), tiny_training())
        for name, tensor in self.result.model.params.items():
            testing.assert_array_equal(again.model.params[name].data,
                                       tensor.data)
        self.assertTrue(again.loss_curves.equals(self.result.loss_curves))

    def test_ablated_terms_are_zero(self):
        vanilla = training.train(self.split, tiny_model(),
                                 tiny_training(epochs=1).for_variant(
                                     Variant.NEITHER))
        curves = vanilla.loss_curves
        self.assertEqual(curves['contrastive'].iloc[0], 0.0)
        self.assertEqual(curves['domain'].iloc[0], 0.0)
        self.assertAlmostEqual(curves['total'].iloc[0], curves['label'].iloc[0])

    def test_no_labeled_loans(self):
        split = DatasetSplit(train=(make_history('a', [-1, -1]),
                                    make_history('b', [-1])),
                             test=(make_history('c', [1, 0]),),
                             generator_config=GeneratorConfig())
        self.assertRaises(LendScreenError, lambda: training.train(
            split, tiny_model(), tiny_training()))

    def test_divergence_names_step(self):
        trainer = DivergingTrainer(tiny_model(), tiny_training(), diverge_at=2)
        with self.assertRaises(NumericalError) as context:
            trainer.train(self.split)
        self.assertEqual(context.exception.step, 2)
        self.assertIn('step 2', str(context.exception))


@unittest.skipUnless(SLOW, 'set LENDSCREEN_SLOW_TESTS=1 to run')
class LossDecreaseTestCase(unittest.TestCase):

    def test_first_epoch_above_last(self):
        split = tiny_split(n_borrowers=400)
        for seed in range(3):
            result = training.train(split, tiny_model(),
                                    tiny_training(epochs=6, seed=seed))
            curves = result.loss_curves
            self.assertGreater(curves['total'].iloc[0],
                               curves['total'].iloc[-1], f"seed {seed}")


class EvaluationTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.split = tiny_split(n_borrowers=200)
        cls.config = tiny_training(epochs=1)
        cls.result = training.train(cls.split, tiny_model(), cls.config)

    def test_predict(self):
        predictions = training.predict(self.result.model, self.result.stats,
                                       self.split.test)
        n_loans = sum(len(history['labels']) for history in self.split.test)
        self.assertEqual(len(predictions), n_loans)
        self.assertEqual(list(predictions.columns),
                         ['borrower_id', 'position', 'sequence_length', 'score'])
        self.assertTrue(np.all((predictions['score'] > 0)
                               & (predictions['score'] < 1)))

    def test_embed(self):
        frame, vectors = training.embed(self.result.model, self.result.stats,
                                        self.split.train)
        n_loans = sum(len(history['labels']) for history in self.split.train)
        self.assertEqual(vectors.shape, (n_loans, 8))
        testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0,
                                atol=1e-9)
        testing.assert_array_equal(frame['domain'],
                                   (frame['label'] != -1).astype(int))
        self.assertEqual(frame['id'].iloc[0], 'b000000:0')

    def test_evaluate(self):
        report, predictions = training.evaluate(
            self.result.model, self.result.stats, self.split, self.config)
        n_loans = len(self.split.test_loans())
        self.assertEqual(report.n_evaluated, n_loans)
        self.assertTrue(0.0 <= report.aucroc <= 1.0)
        self.assertEqual(report.revealed_profit, 0.0)
        self.assertEqual(report.profit, report.screened_profit)
        self.assertEqual(report.n_approved, int(predictions['approve'].sum()))
        self.assertTrue(0.0 <= report.uniformity <= 1.0)
        self.assertGreaterEqual(report.alignment, 0.0)
        self.assertIn('aucroc', report.summary())
        self.assertEqual(list(report.pca.columns),
                         ['id', 'pc1', 'pc2', 'label', 'domain'])
        self.assertEqual(len(report.pca), self.config.diagnostic_sample)
        self.assertTrue(report.pca['label'].isin([0, 1]).all())
        self.assertTrue(report.pca['domain'].eq(1).all())
        self.assertGreaterEqual(report.pca['pc1'].var(),
                                report.pca['pc2'].var())

    def test_evaluate_with_revealed_labels(self):
        revealed = reveal_test_labels(self.split, 0.2, 0)
        report, predictions = training.evaluate(
            self.result.model, self.result.stats, revealed, self.config)
        self.assertEqual(report.n_evaluated,
                         len(revealed.evaluation_loans()))
        self.assertEqual(int(predictions['revealed'].sum()),
                         len(revealed.revealed))
        self.assertAlmostEqual(report.profit, report.screened_profit
                               + report.revealed_profit)

    def test_contrastive_view_limit(self):
        batch_histories = [make_history('a', [-1, -1, -1]),
                           make_history('b', [-1, 1])]
        batch = build_batch(batch_histories, 6, self.result.stats)
        out = self.result.model.forward(batch)
        views = training.contrastive_views(out.f, out.f, batch, 2,
                                           np.random.default_rng(0))
        self.assertEqual(views.size, 2)
        labeled = build_batch([make_history('c', [1, 0])], 6, self.result.stats)
        out = self.result.model.forward(labeled)
        self.assertIsNone(training.contrastive_views(
            out.f, out.f, labeled, 2, np.random.default_rng(0)))
        self.assertIsInstance(views.z, Tensor)
