"""MIL ranking objective between an abnormal and a normal bag.

For positive (abnormal) scores ``p`` and negative (normal) scores ``q``::

    loss = max(0, margin - max(p) + max(q))
           + lambda1 * sum_i p_i
           + lambda2 * sum_i (p_i - p_{i+1})**2

The sparsity and smoothness terms only look at the positive bag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyBag, EmptyBatch, LengthMismatch

DEFAULT_LAMBDA = 0.00008


@dataclass(frozen=True)
class ObjectiveConfig:
    margin: float = 1.0
    lambda1: float = DEFAULT_LAMBDA
    lambda2: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")


@dataclass
class BagPairLoss:
    total: float
    hinge_term: float
    sparsity_term: float
    smoothness_term: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray
    argmax_pos: int
    argmax_neg: int


@dataclass
class BatchLoss:
    """Mean over pairs; ``grad_pos``/``grad_neg`` are ``(pairs, N)`` and already divided by the pair count."""

    total: float
    hinge_term: float
    sparsity_term: float
    smoothness_term: float
    pairs: list[BagPairLoss]
    grad_pos: np.ndarray
    grad_neg: np.ndarray


def ranking_holds(score_abnormal: float, score_normal: float) -> bool:
    return bool(score_abnormal > score_normal)


def bag_max(scores) -> tuple[float, int]:
    """Largest score and the lowest index attaining it."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyBag("bag has no segments")
    idx = int(np.argmax(scores))
    return float(scores[idx]), idx


def pair_loss(pos_scores, neg_scores, cfg: ObjectiveConfig = ObjectiveConfig()) -> BagPairLoss:
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    pmax, ip = bag_max(pos)
    nmax, ineg = bag_max(neg)

    slack = cfg.margin - pmax + nmax
    hinge = max(0.0, slack)
    diffs = pos[:-1] - pos[1:]
    sparsity = cfg.lambda1 * float(pos.sum())
    smoothness = cfg.lambda2 * float(np.dot(diffs, diffs))

    grad_pos = np.full_like(pos, cfg.lambda1)
    grad_neg = np.zeros_like(neg)
    if slack > 0:
        grad_pos[ip] -= 1.0
        grad_neg[ineg] += 1.0
    grad_pos[:-1] += 2.0 * cfg.lambda2 * diffs
    grad_pos[1:] -= 2.0 * cfg.lambda2 * diffs

    return BagPairLoss(
        total=hinge + sparsity + smoothness,
        hinge_term=hinge,
        sparsity_term=sparsity,
        smoothness_term=smoothness,
        grad_pos=grad_pos,
        grad_neg=grad_neg,
        argmax_pos=ip,
        argmax_neg=ineg,
    )


def batch_loss(pairs: Sequence[tuple[np.ndarray, np.ndarray]],
               cfg: ObjectiveConfig = ObjectiveConfig()) -> BatchLoss:
    if len(pairs) == 0:
        raise EmptyBatch("batch has no bag pairs")
    losses = [pair_loss(p, n, cfg) for p, n in pairs]
    n_pos = {len(l.grad_pos) for l in losses}
    n_neg = {len(l.grad_neg) for l in losses}
    if len(n_pos) > 1 or len(n_neg) > 1:
        raise LengthMismatch("bags within a batch must share one segment count")
    k = len(losses)
    return BatchLoss(
        total=sum(l.total for l in losses) / k,
        hinge_term=sum(l.hinge_term for l in losses) / k,
        sparsity_term=sum(l.sparsity_term for l in losses) / k,
        smoothness_term=sum(l.smoothness_term for l in losses) / k,
        pairs=losses,
        grad_pos=np.stack([l.grad_pos for l in losses]) / k,
        grad_neg=np.stack([l.grad_neg for l in losses]) / k,
    )
