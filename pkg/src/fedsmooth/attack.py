"""Loss-threshold membership inference against a trained model.

The attacker scores each sample by negated per-sample loss (members
tend to have lower loss) and is summarized by the AUC of that score,
computed as the Mann-Whitney rank statistic with half credit for ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .objectives import per_example_xent

__all__ = [
    "AttackSet",
    "per_sample_losses",
    "threshold_auc",
    "roc_points",
    "balanced_attack_set",
]


@dataclass(frozen=True)
class AttackSet:
    losses: np.ndarray
    is_member: np.ndarray

    def __post_init__(self) -> None:
        assert self.losses.shape == self.is_member.shape
        assert self.is_member.dtype == np.bool_


def per_sample_losses(
    w: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int
) -> np.ndarray:
    """Per-sample cross-entropy under the model, no regularization."""
    return per_example_xent(w, X, y, n_classes)


def threshold_auc(losses: np.ndarray, is_member: np.ndarray) -> float:
    """P(member score > non-member score) + 0.5 P(tie), score = -loss."""
    losses = np.asarray(losses, dtype=np.float64)
    is_member = np.asarray(is_member, dtype=bool)
    assert losses.shape == is_member.shape and losses.ndim == 1
    n_pos = int(is_member.sum())
    n_neg = is_member.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both members and non-members")
    ranks = rankdata(-losses)
    return float((ranks[is_member].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_points(losses: np.ndarray, is_member: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """ROC curve of the -loss score, one point per distinct threshold.

    Starts at (0, 0), ends at (1, 1); tied scores move diagonally so the
    trapezoidal area equals the rank-statistic AUC exactly.
    """
    losses = np.asarray(losses, dtype=np.float64)
    is_member = np.asarray(is_member, dtype=bool)
    n_pos = int(is_member.sum())
    n_neg = is_member.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both members and non-members")
    order = np.argsort(losses, kind="stable")  # descending score
    member = is_member[order]
    scores = -losses[order]
    tp = np.cumsum(member)
    fp = np.cumsum(~member)
    last = np.flatnonzero(np.diff(scores, append=np.nan) != 0)  # end of each tie block
    tpr = np.concatenate([[0.0], tp[last] / n_pos])
    fpr = np.concatenate([[0.0], fp[last] / n_neg])
    return fpr, tpr


def balanced_attack_set(
    w: np.ndarray,
    n_classes: int,
    member_X: np.ndarray,
    member_y: np.ndarray,
    holdout_X: np.ndarray,
    holdout_y: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> AttackSet:
    """Equal-size member/non-member evaluation set, sampled without replacement."""
    count = min(count, len(member_y), len(holdout_y))
    assert count >= 1, "no samples to attack"
    mi = rng.choice(len(member_y), size=count, replace=False)
    hi = rng.choice(len(holdout_y), size=count, replace=False)
    losses = np.concatenate(
        [
            per_sample_losses(w, member_X[mi], member_y[mi], n_classes),
            per_sample_losses(w, holdout_X[hi], holdout_y[hi], n_classes),
        ]
    )
    is_member = np.concatenate([np.ones(count, dtype=bool), np.zeros(count, dtype=bool)])
    return AttackSet(losses=losses, is_member=is_member)
