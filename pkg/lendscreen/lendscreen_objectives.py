"""Label, contrastive and domain losses, and their weighted sum."""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .lendscreen_errors import LendScreenError, ShapeError
from .lendscreen_tensor import (Tensor, as_tensor, concat, log_softmax,
                                masked_fill, take_along_axis)
from .lendscreen_types import LossWeights

UNIT_NORM_TOLERANCE = 1e-6


def _masked_cross_entropy(logits: Tensor, targets: np.ndarray,
                          mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    targets = np.asarray(targets)
    if logits.shape[:-1] != mask.shape or targets.shape != mask.shape:
        raise ShapeError("logits, targets and mask must align", logits.shape,
                         targets.shape, mask.shape)
    count = int(mask.sum())
    if count == 0:
        # keeps the graph connected with an all-zero gradient
        return (logits * 0.0).sum()
    indices = np.where(mask, targets, 0).astype(np.int64)[..., None]
    picked = take_along_axis(log_softmax(logits, axis=-1), indices, axis=-1)
    picked = picked.reshape(mask.shape)
    return -(picked * mask.astype(np.float64)).sum() / float(count)


def label_loss(label_logits: Tensor, Y: np.ndarray,
               loan_mask: np.ndarray) -> Tensor:
    """Mean two-class cross-entropy over masked loans with Y in {0, 1}."""
    Y = np.asarray(Y)
    mask = np.asarray(loan_mask, dtype=bool) & (Y >= 0)
    return _masked_cross_entropy(label_logits, Y, mask)


def domain_loss(domain_logits: Tensor, domain_tags: np.ndarray,
                loan_mask: np.ndarray) -> Tensor:
    """Mean two-class cross-entropy of the domain tag (1 labeled, 0 not)."""
    return _masked_cross_entropy(domain_logits, domain_tags, loan_mask)


@dataclass
class ContrastiveBatch:
    """M positionally aligned pairs of unit-norm views, each M×hidden."""
    z: Tensor
    z_prime: Tensor

    def __post_init__(self):
        self.z, self.z_prime = as_tensor(self.z), as_tensor(self.z_prime)
        if self.z.shape != self.z_prime.shape or self.z.ndim != 2:
            raise ShapeError("contrastive views must both be M×hidden",
                             self.z.shape, self.z_prime.shape)
        for view in (self.z, self.z_prime):
            norms = np.linalg.norm(view.data, axis=-1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                raise LendScreenError("contrastive views must have unit norm")

    @property
    def size(self) -> int:
        return self.z.shape[0]


def _anchor_log_probs(batch: ContrastiveBatch, tau: float):
    pairs = batch.size
    views = concat([batch.z, batch.z_prime], axis=0)
    logits = (views @ views.transpose()) / float(tau)
    same = np.eye(2 * pairs, dtype=bool)
    log_probs = log_softmax(masked_fill(logits, same, -np.inf), axis=-1)
    positives = np.concatenate([np.arange(pairs, 2 * pairs),
                                np.arange(pairs)])[:, None]
    return log_probs, positives


def contrastive_loss(batch: ContrastiveBatch, tau: float) -> Tensor:
    """In-batch contrastive loss over 2M anchors.

    For anchor z_i the denominator runs over the same-view vectors z_k, k ≠ i,
    and over every cross-view vector z'_k including the positive z'_i;
    symmetrically for anchors z'_i. M = 1 gives exactly 0."""
    if tau <= 0:
        raise LendScreenError(f"temperature must be > 0, got {tau}")
    if batch.size < 1:
        raise LendScreenError("contrastive batch needs at least one pair")
    log_probs, positives = _anchor_log_probs(batch, tau)
    picked = take_along_axis(log_probs, positives, axis=-1)
    return -picked.sum() / float(2 * batch.size)


def positive_weights(batch: ContrastiveBatch, tau: float) -> np.ndarray:
    """Softmax weight each anchor places on its positive, shape (2M,)."""
    log_probs, positives = _anchor_log_probs(batch, tau)
    return np.exp(np.take_along_axis(log_probs.data, positives, axis=-1))[:, 0]


def wd_schedule(p: float, gamma: float = 0.001, wd_max: float = 0.1) -> float:
    """wd_max·(2/(1+exp(−γ·p)) − 1), evaluated as wd_max·tanh(γ·p/2)."""
    if p < 0:
        raise LendScreenError(f"schedule step must be >= 0, got {p}")
    return float(wd_max * np.tanh(0.5 * gamma * p))


LossTerm = Optional[Union[Tensor, float]]


def total_loss(L_y: LossTerm, L_cl: LossTerm, L_d: LossTerm,
               weights: LossWeights, use_cl: bool = True,
               use_da: bool = True) -> Tensor:
    """w_y·L_y + w_cl·L_cl + w_d(p)·L_d; disabled or missing terms are dropped."""
    total = as_tensor(0.0)
    if L_y is not None:
        total = total + as_tensor(L_y) * weights.w_y
    if use_cl and L_cl is not None:
        total = total + as_tensor(L_cl) * weights.w_cl
    if use_da and L_d is not None:
        total = total + as_tensor(L_d) * wd_schedule(
            weights.step, weights.gamma, weights.wd_max)
    return total
