"""Unittests for lendscreen_data.py

Usage:
  python -m unittest tests.data_test
"""

import json
import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np
from numpy import testing

from lendscreen import lendscreen_data as data
from lendscreen.lendscreen_errors import ConfigError, LendScreenError
from lendscreen.lendscreen_types import (DEMOGRAPHIC_FIELDS, DatasetSplit,
                                        GeneratorConfig)
from tests.fixtures import make_history, tiny_generator, tiny_split


def stats_with(amount_mean=0.0, amount_std=1.0):
    return data.FeatureStats(
        sequence_mean=np.array([amount_mean, 0.0, 0.0, 0.0, 0.0, 0.0]),
        sequence_std=np.array([amount_std, 1.0, 1.0, 1.0, 1.0, 1.0]),
        demographic_mean=np.zeros(6), demographic_std=np.ones(6))


def first_slot_gaps(bias_strength, seed=0):
    """Approved minus rejected mean and its standard error for every
    demographic field, first loans only."""
    cfg = GeneratorConfig(n_borrowers=3000, bias_strength=bias_strength,
                          seed=seed)
    draws = data.draw_population(cfg)
    threshold = data.calibrate_threshold(draws, cfg)
    approved = data.historical_screen(draws, threshold, cfg.bias_strength)[:, 0]
    gaps = {}
    for field, values in draws.demographics.items():
        gap = values[approved].mean() - values[~approved].mean()
        error = np.sqrt(values[approved].var() / approved.sum()
                        + values[~approved].var() / (~approved).sum())
        gaps[field] = (gap, error)
    return gaps


def first_slot_gap(bias_strength, seed=0, field='living_city_dpi'):
    return first_slot_gaps(bias_strength, seed)[field]


class GeneratorTestCase(unittest.TestCase):

    def test_deterministic(self):
        first, second = tiny_split(), tiny_split()
        self.assertEqual(first.train, second.train)
        self.assertEqual(first.test, second.test)
        self.assertNotEqual(first.train, tiny_split(seed=4).train)

    def test_split_shape(self):
        split = tiny_split()
        self.assertEqual(len(split.train), 64)
        self.assertEqual(len(split.test), 16)
        self.assertEqual(split.train[0]['borrower_id'], 'b000000')
        self.assertEqual(split.test[0]['borrower_id'], 'b000064')
        for history in split.train + split.test:
            self.assertTrue(1 <= len(history['labels']) <= 6)
        train_labels = {label for history in split.train
                        for label in history['labels']}
        self.assertIn(-1, train_labels)
        self.assertEqual(data.approval_rate(split.test), 1.0)

    def test_observability_follows_previous_approval(self):
        for history in tiny_split(n_borrowers=200).train:
            labels = history['labels']
            self.assertEqual(history['observability'][0], 0)
            for t in range(1, len(labels)):
                self.assertEqual(history['observability'][t],
                                 int(labels[t - 1] != -1))
                if labels[t - 1] == -1:
                    self.assertEqual(history['repayments'][t]['overdue_days'],
                                     0.0)

    def test_approval_rate_is_calibrated(self):
        cfg = GeneratorConfig(n_borrowers=2000, seed=1)
        split = data.generate_population(cfg)
        self.assertAlmostEqual(data.approval_rate(split.train),
                               cfg.target_approval_rate, delta=0.01)

    def test_biased_screener_favours_income(self):
        table = data.loan_table(data.generate_population(
            GeneratorConfig(n_borrowers=2000, seed=0)).train)
        labeled = table[table['label'] != -1]['monthly_income_level'].mean()
        unlabeled = table[table['label'] == -1]['monthly_income_level'].mean()
        self.assertGreater(labeled, unlabeled)

    def test_unbiased_screener(self):
        gaps = [first_slot_gaps(0.0, seed) for seed in range(10)]
        for field in DEMOGRAPHIC_FIELDS:
            with self.subTest(field=field):
                mean_gap = np.mean([seed_gaps[field][0] for seed_gaps in gaps])
                mean_error = np.mean([seed_gaps[field][1] for seed_gaps in gaps])
                self.assertLess(abs(mean_gap), 2.0 * mean_error)
                # single seeds only have sampling noise
                for seed_gaps in gaps:
                    gap, error = seed_gaps[field]
                    self.assertLess(abs(gap / error), 4.0)

    def test_covariates_independent_of_screening_traits(self):
        draws = data.draw_population(GeneratorConfig(n_borrowers=3000, seed=2))
        for field in ('covariate_1', 'covariate_2'):
            values = draws.demographics[field]
            for trait in (draws.behaviour, draws.socioeconomic):
                self.assertLess(abs(np.corrcoef(values, trait)[0, 1]), 0.1)

    def test_gap_grows_with_bias(self):
        gaps = [first_slot_gap(bias)[0] for bias in (0.0, 1.0, 2.0)]
        self.assertEqual(gaps, sorted(gaps))

    def test_threshold_extremes(self):
        draws = data.draw_population(tiny_generator())
        self.assertFalse(data.historical_screen(draws, np.inf, 1.0).any())
        approved = data.historical_screen(draws, -np.inf, 1.0)
        testing.assert_array_equal(approved, draws.active)

    def test_default_probability(self):
        risk = data.default_probability(np.array([-1.0, 0.0, 1.0]), 450.0)
        self.assertTrue(np.all(np.diff(risk) < 0))
        self.assertAlmostEqual(float(data.default_probability(0.0, 450.0)), 0.2)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError) as context:
            data.generate_population(GeneratorConfig(test_fraction=1.5))
        self.assertEqual(context.exception.field, 'test_fraction')


class BatchTestCase(unittest.TestCase):

    def test_single_loan(self):
        batch = data.build_batch([make_history('a', [1])], 20, stats_with())
        testing.assert_array_equal(batch.mask, [[True]])
        testing.assert_array_equal(batch.S, [[0.0]])
        testing.assert_array_equal(batch.Y, [[1]])

    def test_z_scoring(self):
        history = make_history('a', [1], amounts=[14.0])
        batch = data.build_batch([history], 20, stats_with(10.0, 2.0))
        self.assertEqual(batch.C[0, 0, 0], 2.0)

    def test_padding_and_labels(self):
        batch = data.build_batch([make_history('a', [1, -1, 0]),
                                  make_history('b', [0])], 20, stats_with())
        self.assertEqual(batch.C.shape, (2, 3, len(data.SEQUENCE_FEATURES)))
        testing.assert_array_equal(batch.mask, [[True, True, True],
                                                [True, False, False]])
        testing.assert_array_equal(batch.Y, [[1, -1, 0], [0, -1, -1]])
        testing.assert_array_equal(batch.label_mask, [[True, False, True],
                                                      [True, False, False]])
        testing.assert_array_equal(batch.contrastive_mask,
                                   [[False, True, False],
                                    [False, False, False]])
        testing.assert_array_equal(batch.domain, [[1, 0, 1], [1, 0, 0]])
        testing.assert_array_equal(batch.S, [[0, 1, 0], [0, 0, 0]])
        self.assertEqual(batch.loan_refs(), [('a', 0), ('a', 1), ('a', 2),
                                             ('b', 0)])

    def test_overdue_is_capped(self):
        history = make_history('a', [1, 1], overdue=[400.0, 0.0])
        batch = data.build_batch([history], 20, stats_with())
        self.assertEqual(batch.C[0, 1, 3], 1.0)

    def test_truncation_keeps_most_recent(self):
        history = make_history('a', [1, 0, 1, 1, 0],
                               amounts=[1.0, 2.0, 3.0, 4.0, 5.0])
        with self.assertLogs('lendscreen', level='WARNING'):
            batch = data.build_batch([history], 3, stats_with())
        testing.assert_array_equal(batch.C[0, :, 0], [3.0, 4.0, 5.0])
        self.assertTrue(batch.truncated[0])
        self.assertEqual(batch.sequence_lengths[0], 5)
        self.assertEqual(batch.loan_refs(), [('a', 2), ('a', 3), ('a', 4)])

    def test_empty_batch(self):
        self.assertRaises(LendScreenError,
                          lambda: data.build_batch([], 3, stats_with()))

    def test_feature_stats(self):
        histories = [make_history('a', [1, 1], amounts=[100.0, 300.0]),
                     make_history('b', [1], amounts=[200.0])]
        stats = data.compute_feature_stats(histories)
        self.assertAlmostEqual(stats.sequence_mean[0], 200.0)
        # every loan has the same term
        self.assertEqual(stats.sequence_std[2], 1.0)
        restored = data.FeatureStats.from_dict(stats.to_dict())
        testing.assert_array_equal(restored.sequence_std, stats.sequence_std)

    def test_iterate_batches(self):
        entries = list(range(10))
        self.assertEqual([len(chunk) for chunk in
                          data.iterate_batches(entries, 4)], [4, 4, 2])
        shuffled = [item for chunk in data.iterate_batches(
            entries, 3, np.random.default_rng(0)) for item in chunk]
        self.assertEqual(sorted(shuffled), entries)


class RevealTestCase(unittest.TestCase):

    def setUp(self):
        histories = tuple(make_history(f't{i}', [1, 0, 1, 1, 0, 1])
                          for i in range(1000))
        self.split = DatasetSplit(train=(make_history('a', [1, -1]),),
                                  test=histories,
                                  generator_config=GeneratorConfig())

    def test_zero_ratio(self):
        self.assertIs(data.reveal_test_labels(self.split, 0.0, 0), self.split)

    def test_half(self):
        revealed = data.reveal_test_labels(self.split, 0.5, 7)
        self.assertEqual(len(revealed.revealed), 3000)
        self.assertEqual(len(revealed.evaluation_loans()), 3000)
        again = data.reveal_test_labels(self.split, 0.5, 7)
        self.assertEqual(revealed.revealed, again.revealed)

    def test_out_of_range(self):
        self.assertRaises(LendScreenError,
                          lambda: data.reveal_test_labels(self.split, 0.6, 0))
        self.assertRaises(LendScreenError,
                          lambda: data.reveal_test_labels(self.split, -0.1, 0))

    def test_training_pool(self):
        pool = data.training_pool(self.split, transductive=False)
        self.assertEqual(len(pool), 1)

        transductive = data.training_pool(self.split, transductive=True)
        self.assertEqual(len(transductive), 1001)
        test_entry = transductive[1]
        self.assertEqual(test_entry.label_positions, frozenset())
        self.assertEqual(test_entry.contrastive_positions, frozenset(range(6)))

        split = replace(self.split, revealed=frozenset({('t3', 1)}))
        pool = data.training_pool(split, transductive=False)
        self.assertEqual(len(pool), 2)
        self.assertEqual(pool[1].label_positions, frozenset({1}))
        self.assertEqual(pool[1].contrastive_positions, frozenset())


class PersistenceTestCase(unittest.TestCase):

    def test_round_trip(self):
        split = tiny_split(n_borrowers=30)
        with tempfile.TemporaryDirectory() as directory:
            paths = data.save_split(split, directory)
            self.assertTrue(os.path.exists(paths['train']))
            loaded = data.load_split(directory)
        self.assertEqual(loaded.train, split.train)
        self.assertEqual(loaded.test, split.test)
        self.assertEqual(loaded.generator_config, split.generator_config)

    def test_load_rejects_invalid_generator_config(self):
        split = tiny_split(n_borrowers=30)
        with tempfile.TemporaryDirectory() as directory:
            data.save_split(split, directory)
            path = os.path.join(directory, data.Artifacts.GENERATOR_CONFIG)
            with open(path, encoding='utf-8') as handle:
                document = json.load(handle)
            document['test_fraction'] = 1.5
            with open(path, 'w', encoding='utf-8') as handle:
                json.dump(document, handle)
            with self.assertRaises(ConfigError) as context:
                data.load_split(directory)
        self.assertEqual(context.exception.field, 'test_fraction')

    def test_loan_table(self):
        table = data.loan_table([make_history('a', [1, -1])])
        self.assertEqual(list(table['position']), [0, 1])
        self.assertEqual(list(table['sequence_length']), [2, 2])
        self.assertIn('homeownership', table.columns)
        self.assertIn('amount', table.columns)
