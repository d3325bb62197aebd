"""Class-weighted NLL plus the prototype diversity term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import similarity as sim
from .autograd import Variable, as_variable, mul, sum_

ALPHA = 0.1


class DegenerateSimilarityError(ArithmeticError):
    pass


@dataclass
class LossReport:
    nll: float
    diverse: float
    total: float
    alpha: float


def weighted_nll(log_probs, labels, weights) -> Variable:
    """Batch mean of ``-w[y] * log p(y)``."""
    log_probs = as_variable(log_probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64)
    B, L = log_probs.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= L):
        raise ValueError(f"labels must lie in [0, {L - 1}]")
    coef = np.zeros((B, L), dtype=log_probs.dtype)
    coef[np.arange(B), labels] = -weights[labels] / B
    return sum_(mul(log_probs, coef))


def prototype_similarity_matrix(bank) -> Variable:
    """(K, K) similarities between every pair of prototypes in the bank."""
    p = bank.prototypes
    if bank.is_1d:
        return sim.sim_1d(p, p)
    return sim.scalarize(sim.sim_2av(p, p))


def _pair_masks(n_classes: int, n_per_class: int):
    k = n_classes * n_per_class
    cls = np.arange(k) // n_per_class
    upper = np.triu(np.ones((k, k), dtype=bool), 1)
    same = cls[:, None] == cls[None, :]
    inter = upper & ~same
    intra = upper & same if n_per_class > 1 else np.eye(k, dtype=bool)
    return inter, intra


def diverse_loss(bank) -> Variable:
    """Mean inter-class prototype similarity over mean intra-class similarity.

    With one prototype per class the intra-class term uses each prototype's
    similarity with itself.
    """
    if bank.n_classes < 2:
        raise ValueError("diverse loss needs at least two classes")
    s = prototype_similarity_matrix(bank)
    inter, intra = _pair_masks(bank.n_classes, bank.n_per_class)
    num = sum_(mul(s, inter.astype(s.dtype) / inter.sum()))
    den = sum_(mul(s, intra.astype(s.dtype) / intra.sum()))
    if abs(float(den.data)) < 1e-8:
        raise DegenerateSimilarityError("degenerate intra-class similarity")
    return num / den


def total_loss(log_probs, labels, weights, bank, alpha: float = ALPHA):
    """Returns ``(loss_variable, LossReport)`` with total = nll + alpha * diverse."""
    nll = weighted_nll(log_probs, labels, weights)
    dv = diverse_loss(bank)
    total = nll + alpha * dv if alpha else nll
    report = LossReport(float(nll.data), float(dv.data), float(total.data), alpha)
    return total, report
