"""Synthetic selective-labels loan population, batching and persistence.

Each borrower has a socioeconomic index and a behavioural trait; latent
creditworthiness mixes the two. A historical screener approves applications
from a score that rewards the socioeconomic index (scaled by
`bias_strength`), a noisy read of the behavioural trait and the attitude shown
while repaying the previous loan. Rejected applications carry label -1 and
hide the repayment record that would otherwise follow them. The test split is
drawn from the same population but every application is approved, so every
test loan is labeled.
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd
from scipy import special

from .lendscreen_enums import Artifacts
from .lendscreen_errors import LendScreenError
from .lendscreen_parsing import RecordParsers
from .lendscreen_types import (DEMOGRAPHIC_FIELDS,
                               BorrowerHistory, DatasetSplit, GeneratorConfig)
from .utils import JSONSerial, atomic_write_text, make_rng


logger = logging.getLogger(__name__)

SEQUENCE_FEATURES = ('amount', 'annual_interest_rate', 'term_months',
                     'overdue_days', 'positive_attitude_proportion',
                     'assisted_proportion')
OVERDUE_CAP_DAYS = 180.0
DEFAULT_OVERDUE_DAYS = 90.0
MEAN_LOAN_AMOUNT = 450.0
AMOUNT_LOG_SD = 0.35
MEAN_INTEREST_RATE = 0.18
CREDITWORTHINESS_SLOPE = 1.5
AMOUNT_RISK_SLOPE = 0.3


def default_probability(creditworthiness, amount, base_default_rate=0.2):
    """Ground-truth default probability; non-increasing in creditworthiness."""
    amount_z = np.log(np.asarray(amount, dtype=np.float64)
                      / MEAN_LOAN_AMOUNT) / AMOUNT_LOG_SD
    return special.expit(special.logit(base_default_rate)
                         - CREDITWORTHINESS_SLOPE * np.asarray(creditworthiness)
                         + AMOUNT_RISK_SLOPE * amount_z)


@dataclass
class PopulationDraws:
    """Every random quantity of a population, drawn up front so screening is a
    deterministic function of the threshold. Loan arrays are borrower × slot."""
    socioeconomic: np.ndarray
    behaviour: np.ndarray
    creditworthiness: np.ndarray
    demographics: Dict[str, np.ndarray]
    lengths: np.ndarray
    amount: np.ndarray
    rate: np.ndarray
    term: np.ndarray
    defaulted: np.ndarray
    overdue_days: np.ndarray
    attitude: np.ndarray
    assisted: np.ndarray
    screen_noise: np.ndarray

    @property
    def n_borrowers(self) -> int:
        return self.lengths.shape[0]

    @property
    def active(self) -> np.ndarray:
        slots = np.arange(self.amount.shape[1])
        return slots[None, :] < self.lengths[:, None]

    def subset(self, rows: np.ndarray) -> 'PopulationDraws':
        values = {}
        for name, value in self.__dict__.items():
            if isinstance(value, dict):
                values[name] = {key: array[rows] for key, array in value.items()}
            else:
                values[name] = value[rows]
        return PopulationDraws(**values)


def draw_population(cfg: GeneratorConfig) -> PopulationDraws:
    n = cfg.n_borrowers
    slots = cfg.max_history_length
    rng = make_rng(cfg.seed, 'population')

    socioeconomic = rng.standard_normal(n)
    behaviour = rng.standard_normal(n)
    weight = cfg.socioeconomic_weight
    creditworthiness = weight * socioeconomic + np.sqrt(1.0 - weight ** 2) * behaviour

    demographics = {
        'living_city_dpi': 40000.0 * np.exp(
            0.2 * socioeconomic + 0.08 * rng.standard_normal(n)),
        'monthly_income_level': np.clip(np.round(
            3.3 + 1.2 * socioeconomic + 0.6 * rng.standard_normal(n)), 1, 7),
        'education_level': np.clip(np.round(
            2.3 + 0.7 * socioeconomic + 0.5 * rng.standard_normal(n)), 1, 5),
        'homeownership': (rng.random(n) < special.expit(
            -1.9 + 0.9 * socioeconomic)).astype(np.int64),
        'covariate_1': rng.standard_normal(n),
        'covariate_2': rng.standard_normal(n),
    }

    repeat = rng.random(n) < cfg.repeat_applicant_fraction
    extra = rng.geometric(1.0 / (cfg.mean_repeat_applications - 1.0), n) - 1
    lengths = np.where(repeat, np.minimum(2 + extra, slots), 1).astype(np.int64)

    shape = (n, slots)
    amount = np.clip(MEAN_LOAN_AMOUNT * np.exp(
        AMOUNT_LOG_SD * rng.standard_normal(shape) - AMOUNT_LOG_SD ** 2 / 2
        + 0.1 * socioeconomic[:, None]), 50.0, 5000.0)
    rate = np.clip(MEAN_INTEREST_RATE + 0.02 * rng.standard_normal(shape),
                   0.06, 0.36)
    term = rng.integers(3, 9, size=shape)

    risk = default_probability(creditworthiness[:, None], amount,
                               cfg.base_default_rate)
    defaulted = rng.random(shape) < risk
    flipped = rng.random(shape) < cfg.label_noise
    defaulted = np.logical_xor(defaulted, flipped)

    late_scale = 3.0 * np.exp(-0.8 * creditworthiness)[:, None]
    overdue_days = np.where(
        defaulted,
        DEFAULT_OVERDUE_DAYS + rng.exponential(30.0, shape),
        np.minimum(rng.exponential(1.0, shape) * late_scale,
                   DEFAULT_OVERDUE_DAYS - 1.0))
    attitude = special.expit(0.6 + 1.2 * behaviour[:, None]
                             + 0.5 * rng.standard_normal(shape))
    assisted = special.expit(-1.2 + 1.5 * defaulted
                             - 0.5 * creditworthiness[:, None]
                             + 0.5 * rng.standard_normal(shape))
    screen_noise = rng.standard_normal(shape)

    return PopulationDraws(
        socioeconomic=socioeconomic, behaviour=behaviour,
        creditworthiness=creditworthiness, demographics=demographics,
        lengths=lengths, amount=amount, rate=rate, term=term,
        defaulted=defaulted, overdue_days=overdue_days, attitude=attitude,
        assisted=assisted, screen_noise=screen_noise)


def historical_screen(draws: PopulationDraws, threshold: float,
                      bias_strength: float, screener_noise: float = 1.0,
                      prior_attitude_weight: float = 1.0) -> np.ndarray:
    """Approve/reject per application (borrower × slot, False past the end).

    Score = bias_strength·socioeconomic index + noisy behavioural read +
    reward for the attitude shown on the previous loan, when it was approved.
    """
    approved = np.zeros(draws.amount.shape, dtype=bool)
    active = draws.active
    base = bias_strength * draws.socioeconomic + draws.behaviour
    for slot in range(draws.amount.shape[1]):
        score = base + screener_noise * draws.screen_noise[:, slot]
        if slot > 0:
            score = score + np.where(
                approved[:, slot - 1],
                prior_attitude_weight * (2.0 * draws.attitude[:, slot - 1] - 1.0),
                0.0)
        approved[:, slot] = active[:, slot] & (score >= threshold)
    return approved


def _approval_rate(draws: PopulationDraws, threshold: float,
                   cfg: GeneratorConfig) -> float:
    approved = historical_screen(draws, threshold, cfg.bias_strength,
                                 cfg.screener_noise, cfg.prior_attitude_weight)
    return approved.sum() / draws.active.sum()


def calibrate_threshold(draws: PopulationDraws, cfg: GeneratorConfig,
                        iterations: int = 60) -> float:
    """Bisection for the threshold whose approval rate meets the target."""
    low, high = -50.0, 50.0
    for _ in range(iterations):
        middle = 0.5 * (low + high)
        if _approval_rate(draws, middle, cfg) > cfg.target_approval_rate:
            low = middle
        else:
            high = middle
    return 0.5 * (low + high)


def _history(draws: PopulationDraws, row: int, approved: np.ndarray,
             borrower_id: str) -> BorrowerHistory:
    length = int(draws.lengths[row])
    applications, repayments, labels, observability = [], [], [], []
    for slot in range(length):
        applications.append({
            'amount': float(draws.amount[row, slot]),
            'annual_interest_rate': float(draws.rate[row, slot]),
            'term_months': int(draws.term[row, slot]),
        })
        previous_seen = slot > 0 and bool(approved[row, slot - 1])
        if previous_seen:
            repayments.append({
                'overdue_days': float(draws.overdue_days[row, slot - 1]),
                'positive_attitude_proportion': float(
                    draws.attitude[row, slot - 1]),
                'assisted_proportion': float(draws.assisted[row, slot - 1]),
            })
        else:
            repayments.append({'overdue_days': 0.0,
                               'positive_attitude_proportion': 0.0,
                               'assisted_proportion': 0.0})
        observability.append(int(previous_seen))
        if approved[row, slot]:
            labels.append(0 if draws.defaulted[row, slot] else 1)
        else:
            labels.append(-1)
    demographics = {}
    for name in DEMOGRAPHIC_FIELDS:
        value = draws.demographics[name][row]
        demographics[name] = (int(value) if name == 'homeownership'
                              else float(value))
    return BorrowerHistory(
        borrower_id=borrower_id,
        demographics=demographics,
        applications=applications,
        repayments=repayments,
        labels=labels,
        observability=observability,
        latent_creditworthiness=float(draws.creditworthiness[row]))


def generate_population(cfg: GeneratorConfig) -> DatasetSplit:
    """Pure function of `cfg`: identical configs give identical splits."""
    cfg.validate()
    draws = draw_population(cfg)
    n_test = min(max(1, int(round(cfg.n_borrowers * cfg.test_fraction))),
                 cfg.n_borrowers - 1)
    n_train = cfg.n_borrowers - n_test
    train_draws = draws.subset(np.arange(n_train))
    test_draws = draws.subset(np.arange(n_train, cfg.n_borrowers))

    threshold = calibrate_threshold(train_draws, cfg)
    approved = historical_screen(train_draws, threshold, cfg.bias_strength,
                                 cfg.screener_noise, cfg.prior_attitude_weight)
    active = train_draws.active
    if not approved.any():
        # approve the single best first application
        approved[np.argmax(cfg.bias_strength * train_draws.socioeconomic
                           + train_draws.behaviour), 0] = True
    if approved.sum() == active.sum():
        approved[np.argmin(cfg.bias_strength * train_draws.socioeconomic
                           + train_draws.behaviour), 0] = False
    logger.info(f"Historical screener threshold {threshold:.4f}; approval "
                f"rate {approved.sum() / active.sum():.4f} over "
                f"{int(active.sum())} training applications")

    train = tuple(_history(train_draws, row, approved, f"b{row:06d}")
                  for row in range(n_train))
    approve_all = test_draws.active
    test = tuple(_history(test_draws, row, approve_all,
                          f"b{n_train + row:06d}")
                 for row in range(n_test))
    return DatasetSplit(train=train, test=test, generator_config=cfg)


def approval_rate(histories: Sequence[BorrowerHistory]) -> float:
    labels = [label for history in histories for label in history['labels']]
    return sum(label != -1 for label in labels) / len(labels)


def loan_table(histories: Sequence[BorrowerHistory]) -> pd.DataFrame:
    """One row per loan with its application, label and demographics."""
    rows = []
    for history in histories:
        length = len(history['labels'])
        for position in range(length):
            row = {'borrower_id': history['borrower_id'],
                   'position': position,
                   'sequence_length': length,
                   'label': history['labels'][position]}
            row.update(history['applications'][position])
            row.update(history['demographics'])
            rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------- batching

@dataclass
class FeatureStats:
    """Train-split z-score statistics for sequence and demographic features."""
    sequence_mean: np.ndarray
    sequence_std: np.ndarray
    demographic_mean: np.ndarray
    demographic_std: np.ndarray

    def to_dict(self) -> dict:
        return {name: value.tolist() for name, value in self.__dict__.items()}

    @classmethod
    def from_dict(cls, values: dict) -> 'FeatureStats':
        return cls(**{name: np.asarray(values[name], dtype=np.float64)
                      for name in ('sequence_mean', 'sequence_std',
                                   'demographic_mean', 'demographic_std')})


def _raw_sequence(history: BorrowerHistory) -> np.ndarray:
    rows = []
    for application, repayment in zip(history['applications'],
                                      history['repayments']):
        rows.append([
            application['amount'],
            application['annual_interest_rate'],
            application['term_months'],
            min(repayment['overdue_days'], OVERDUE_CAP_DAYS) / OVERDUE_CAP_DAYS,
            repayment['positive_attitude_proportion'],
            repayment['assisted_proportion'],
        ])
    return np.asarray(rows, dtype=np.float64)


def _raw_demographics(history: BorrowerHistory) -> np.ndarray:
    return np.asarray([history['demographics'][name]
                       for name in DEMOGRAPHIC_FIELDS], dtype=np.float64)


def _safe_std(values: np.ndarray) -> np.ndarray:
    std = values.std(axis=0)
    return np.where(std > 0, std, 1.0)


def compute_feature_stats(train: Sequence[BorrowerHistory]) -> FeatureStats:
    sequence = np.concatenate([_raw_sequence(history) for history in train])
    demographics = np.stack([_raw_demographics(history) for history in train])
    return FeatureStats(sequence_mean=sequence.mean(axis=0),
                        sequence_std=_safe_std(sequence),
                        demographic_mean=demographics.mean(axis=0),
                        demographic_std=_safe_std(demographics))


@dataclass
class PoolEntry:
    """A history plus the loan positions each objective may use.

    Positions index the full (untruncated) history."""
    history: BorrowerHistory
    label_positions: FrozenSet[int]
    contrastive_positions: FrozenSet[int]
    domain_positions: FrozenSet[int]
    labeled_domain_positions: FrozenSet[int]

    @classmethod
    def from_history(cls, history: BorrowerHistory) -> 'PoolEntry':
        labels = history['labels']
        labeled = frozenset(t for t, label in enumerate(labels) if label != -1)
        unlabeled = frozenset(t for t, label in enumerate(labels)
                              if label == -1)
        return cls(history, labeled, unlabeled,
                   frozenset(range(len(labels))), labeled)

    @classmethod
    def from_test(cls, history: BorrowerHistory, revealed: Set[int],
                  transductive: bool) -> 'PoolEntry':
        revealed = frozenset(revealed)
        hidden = frozenset(range(len(history['labels']))) - revealed
        if not transductive:
            hidden = frozenset()
        return cls(history, revealed, hidden, revealed | hidden, revealed)


@dataclass
class LoanBatch:
    borrower_ids: List[str]
    C: np.ndarray
    S: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    domain: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    label_mask: np.ndarray
    contrastive_mask: np.ndarray
    domain_mask: np.ndarray
    lengths: np.ndarray
    offsets: np.ndarray
    truncated: np.ndarray
    sequence_lengths: np.ndarray

    @property
    def size(self) -> int:
        return self.C.shape[0]

    @property
    def width(self) -> int:
        return self.C.shape[1]

    def loan_refs(self) -> List[tuple]:
        """(borrower_id, original position) for every valid slot, row-major."""
        refs = []
        for row, borrower_id in enumerate(self.borrower_ids):
            for slot in range(int(self.lengths[row])):
                refs.append((borrower_id, int(self.offsets[row]) + slot))
        return refs


def build_batch(entries: Sequence[Union[BorrowerHistory, PoolEntry]],
                max_len: int, stats: FeatureStats) -> LoanBatch:
    """Pads, z-scores and masks a list of histories.

    Sequences longer than `max_len` keep their most recent `max_len` loans.
    Batches are right-padded to the longest kept sequence."""
    if not entries:
        raise LendScreenError("cannot build an empty batch")
    entries = [entry if isinstance(entry, PoolEntry)
               else PoolEntry.from_history(entry) for entry in entries]
    full_lengths = np.asarray([len(entry.history['labels'])
                               for entry in entries], dtype=np.int64)
    lengths = np.minimum(full_lengths, max_len)
    offsets = full_lengths - lengths
    width = int(lengths.max())
    batch = len(entries)

    C = np.zeros((batch, width, len(SEQUENCE_FEATURES)))
    S = np.zeros((batch, width))
    Y = np.full((batch, width), -1, dtype=np.int64)
    domain = np.zeros((batch, width), dtype=np.int64)
    mask = np.zeros((batch, width), dtype=bool)
    label_mask = np.zeros((batch, width), dtype=bool)
    contrastive_mask = np.zeros((batch, width), dtype=bool)
    domain_mask = np.zeros((batch, width), dtype=bool)
    D = np.zeros((batch, len(DEMOGRAPHIC_FIELDS)))

    for row, entry in enumerate(entries):
        history = entry.history
        start, length = int(offsets[row]), int(lengths[row])
        if start:
            logger.warning(f"Borrower {history['borrower_id']} has "
                           f"{full_lengths[row]} loans; keeping the most "
                           f"recent {max_len}")
        raw = _raw_sequence(history)[start:start + length]
        C[row, :length] = (raw - stats.sequence_mean) / stats.sequence_std
        S[row, :length] = history['observability'][start:start + length]
        D[row] = ((_raw_demographics(history) - stats.demographic_mean)
                  / stats.demographic_std)
        mask[row, :length] = True
        for slot in range(length):
            original = start + slot
            if original in entry.label_positions:
                Y[row, slot] = history['labels'][original]
                label_mask[row, slot] = True
            contrastive_mask[row, slot] = original in entry.contrastive_positions
            domain_mask[row, slot] = original in entry.domain_positions
            domain[row, slot] = int(original in entry.labeled_domain_positions)

    positions = np.broadcast_to(np.arange(width), (batch, width)).copy()
    return LoanBatch(
        borrower_ids=[entry.history['borrower_id'] for entry in entries],
        C=C, S=S, D=D, Y=Y, domain=domain, mask=mask, positions=positions,
        label_mask=label_mask, contrastive_mask=contrastive_mask,
        domain_mask=domain_mask, lengths=lengths, offsets=offsets,
        truncated=offsets > 0, sequence_lengths=full_lengths)


def iterate_batches(entries: Sequence, batch_size: int,
                    rng: Optional[np.random.Generator] = None) -> Iterator[list]:
    order = (rng.permutation(len(entries)) if rng is not None
             else np.arange(len(entries)))
    for start in range(0, len(entries), batch_size):
        yield [entries[i] for i in order[start:start + batch_size]]


# ------------------------------------------------------- pools and reveal

def reveal_test_labels(split: DatasetSplit, ratio: float,
                       seed: int) -> DatasetSplit:
    """Moves a uniformly sampled `ratio` of test loans into the labeled pool.

    The revealed loans stay in their borrower's sequence for context and are
    excluded from `split.evaluation_loans()`."""
    if not 0.0 <= ratio <= 0.5:
        raise LendScreenError(f"reveal ratio must be in [0, 0.5], got {ratio}")
    loans = split.test_loans()
    count = int(round(ratio * len(loans)))
    if count == 0:
        return split
    rng = make_rng(seed, 'reveal')
    chosen = np.sort(rng.choice(len(loans), size=count, replace=False))
    return replace(split, revealed=frozenset(loans[i] for i in chosen))


def training_pool(split: DatasetSplit, transductive: bool) -> List[PoolEntry]:
    """Train histories plus the test histories that feed any objective."""
    pool = [PoolEntry.from_history(history) for history in split.train]
    revealed: Dict[str, Set[int]] = {}
    for borrower_id, position in split.revealed:
        revealed.setdefault(borrower_id, set()).add(position)
    for history in split.test:
        positions = revealed.get(history['borrower_id'], set())
        if positions or transductive:
            pool.append(PoolEntry.from_test(history, positions, transductive))
    return pool


# ------------------------------------------------------------ persistence

def _write_jsonl(path: str, histories: Sequence[BorrowerHistory]):
    lines = [json.dumps(history, cls=JSONSerial) for history in histories]
    atomic_write_text(path, '\n'.join(lines) + '\n')


def save_split(split: DatasetSplit, directory: str) -> Dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {
        'train': os.path.join(directory, Artifacts.TRAIN_SPLIT),
        'test': os.path.join(directory, Artifacts.TEST_SPLIT),
        'generator': os.path.join(directory, Artifacts.GENERATOR_CONFIG),
    }
    _write_jsonl(paths['train'], split.train)
    _write_jsonl(paths['test'], split.test)
    atomic_write_text(paths['generator'], json.dumps(
        split.generator_config, cls=JSONSerial, indent=2, sort_keys=True))
    return paths


def load_split(directory: str) -> DatasetSplit:
    parsers = RecordParsers()
    with open(os.path.join(directory, Artifacts.TRAIN_SPLIT),
              encoding='utf-8') as handle:
        train = parsers.borrowers(handle)
    with open(os.path.join(directory, Artifacts.TEST_SPLIT),
              encoding='utf-8') as handle:
        test = parsers.borrowers(handle)
    config_path = os.path.join(directory, Artifacts.GENERATOR_CONFIG)
    generator_config = GeneratorConfig()
    if os.path.exists(config_path):
        with open(config_path, encoding='utf-8') as handle:
            generator_config = GeneratorConfig(**json.load(handle)).validate()
    return DatasetSplit(train=tuple(train), test=tuple(test),
                        generator_config=generator_config)
