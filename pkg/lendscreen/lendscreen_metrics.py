"""Evaluation metrics. Every function here is pure."""

import logging
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial import distance

from .lendscreen_data import loan_table
from .lendscreen_errors import LendScreenError, ShapeError
from .lendscreen_types import INCLUSION_FIELDS, PcaResult, ProfitModel


logger = logging.getLogger(__name__)

# (name, shortest, longest) sequence length per bin
LENGTH_BINS: Tuple[Tuple[str, int, float], ...] = (
    ('1', 1, 1),
    ('2-3', 2, 3),
    ('4-6', 4, 6),
    ('7-10', 7, 10),
    ('>10', 11, np.inf),
)

Loans = Union[pd.DataFrame, Sequence[dict]]


def _as_table(loans: Loans) -> pd.DataFrame:
    return loans if isinstance(loans, pd.DataFrame) else loan_table(loans)


def evaluate_auc(scores, labels) -> float:
    """Mann–Whitney AUC: P(score of a label-1 loan > score of a label-0 loan),
    ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length", scores.shape,
                         labels.shape)
    if not np.all((labels == 0) | (labels == 1)):
        raise LendScreenError("AUC labels must be 0 or 1")
    positives = int((labels == 1).sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise LendScreenError("AUC needs at least one label of each class")
    ranks = stats.rankdata(scores)
    u_statistic = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return float(u_statistic / (positives * negatives))


def realized_profit(loans: Loans, profit_model: ProfitModel = None) -> np.ndarray:
    """Per-loan profit if approved: interest on repayment, principal on default."""
    profit_model = profit_model or ProfitModel()
    table = _as_table(loans)
    interest = (table['amount'] * table['annual_interest_rate']
                * table['term_months'] / 12.0 * profit_model.interest_share)
    loss = -profit_model.loss_given_default * table['amount']
    return np.where(table['label'].to_numpy() == 1, interest.to_numpy(),
                    loss.to_numpy())


def _check_decisions(decisions, table: pd.DataFrame) -> np.ndarray:
    decisions = np.asarray(decisions, dtype=bool)
    if decisions.shape != (len(table),):
        raise LendScreenError(f"{decisions.size} decisions for {len(table)} "
                              f"loans")
    return decisions


def evaluate_profit(decisions, loans: Loans,
                    profit_model: ProfitModel = None) -> float:
    """Sum of realized profit over approved loans; rejected loans add 0."""
    table = _as_table(loans)
    decisions = _check_decisions(decisions, table)
    if not decisions.any():
        return 0.0
    return float(realized_profit(table, profit_model)[decisions].sum())


def inclusion_report(decisions, loans: Loans) -> Dict[str, float]:
    """Mean socioeconomic features over approved loans."""
    table = _as_table(loans)
    decisions = _check_decisions(decisions, table)
    if not decisions.any():
        raise LendScreenError("inclusion report needs at least one approval")
    approved = table.loc[decisions, list(INCLUSION_FIELDS)]
    return {name: float(approved[name].mean()) for name in INCLUSION_FIELDS}


def alignment_metric(z: np.ndarray, z_prime: np.ndarray) -> float:
    """Mean squared distance between positive-pair embeddings."""
    z, z_prime = np.asarray(z), np.asarray(z_prime)
    if z.shape != z_prime.shape:
        raise ShapeError("paired embeddings differ", z.shape, z_prime.shape)
    return float(((z - z_prime) ** 2).sum(axis=-1).mean())


def uniformity_metric(embeddings: np.ndarray) -> float:
    """Mean of exp(−2‖x−y‖²) over unordered distinct pairs (no logarithm)."""
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] < 2:
        raise LendScreenError("uniformity needs at least two embeddings")
    return float(np.exp(-2.0 * distance.pdist(embeddings, 'sqeuclidean')).mean())


def pca_project(embeddings: np.ndarray, k: int = 2) -> PcaResult:
    """Projects centred embeddings onto the top-k covariance eigenvectors.

    Each component is signed so its largest-magnitude coordinate is positive.
    """
    data = np.asarray(embeddings, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < k or data.shape[1] < k:
        raise LendScreenError(f"PCA with k={k} needs at least {k} points of "
                              f"dimension >= {k}, got {data.shape}")
    centred = data - data.mean(axis=0)
    covariance = centred.T @ centred / max(data.shape[0] - 1, 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]
    total = eigenvalues.sum()
    if total <= 0.0:
        raise LendScreenError("PCA of identical points is undefined")
    components = eigenvectors[:, :k].T
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivots])
    components = components * signs[:, None]
    return PcaResult(coordinates=centred @ components.T,
                     components=components,
                     explained_variance=eigenvalues[:k],
                     explained_variance_ratio=eigenvalues[:k] / total)


def length_bin(length: int) -> str:
    for name, shortest, longest in LENGTH_BINS:
        if shortest <= length <= longest:
            return name
    raise LendScreenError(f"sequence length must be >= 1, got {length}")


def length_bin_auc(scores, labels, lengths) -> Dict[str, float]:
    """AUC per sequence-length bin; empty or single-class bins are omitted."""
    frame = pd.DataFrame({'score': np.asarray(scores, dtype=np.float64),
                          'label': np.asarray(labels),
                          'bin': [length_bin(int(n)) for n in lengths]})
    result = {}
    for name, _, _ in LENGTH_BINS:
        members = frame[frame['bin'] == name]
        if members.empty:
            logger.warning(f"Length bin {name} is empty; omitting it")
            continue
        if members['label'].nunique() < 2:
            logger.warning(f"Length bin {name} has a single class; omitting it")
            continue
        result[name] = evaluate_auc(members['score'], members['label'])
    return result


def least_squares_slope(values: Sequence[float],
                        positions: Optional[Sequence[float]] = None) -> float:
    values = np.asarray(values, dtype=np.float64)
    if positions is None:
        positions = np.arange(values.size, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(np.polyfit(np.asarray(positions, dtype=np.float64), values,
                            1)[0])


def length_bin_deltas(ours, vanilla, labels, lengths
                      ) -> Tuple[pd.DataFrame, float]:
    """Per-bin AUC of two score vectors over the same loans, their delta
    (ours − vanilla) and the least-squares slope of the delta over bin index."""
    labels = np.asarray(labels)
    bins = np.asarray([length_bin(int(n)) for n in lengths])
    ours_auc = length_bin_auc(ours, labels, lengths)
    vanilla_auc = length_bin_auc(vanilla, labels, lengths)
    rows = []
    for index, (name, _, _) in enumerate(LENGTH_BINS):
        if name not in ours_auc or name not in vanilla_auc:
            continue
        rows.append({'bin': name, 'bin_index': index,
                     'n_loans': int((bins == name).sum()),
                     'auc_ours': ours_auc[name],
                     'auc_vanilla': vanilla_auc[name],
                     'delta': ours_auc[name] - vanilla_auc[name]})
    table = pd.DataFrame(rows, columns=['bin', 'bin_index', 'n_loans',
                                        'auc_ours', 'auc_vanilla', 'delta'])
    slope = least_squares_slope(table['delta'], table['bin_index'])
    return table, slope
