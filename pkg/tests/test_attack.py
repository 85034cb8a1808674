"""Membership attack: rank AUC vs brute force, ROC/AUC agreement."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsmooth.attack import (
    AttackSet,
    balanced_attack_set,
    per_sample_losses,
    roc_points,
    threshold_auc,
)
from fedsmooth.objectives import logistic_loss_grad, per_example_xent


def brute_force_auc(losses, is_member) -> float:
    """O(n^2) definition: P(member score > non-member) + half ties."""
    member = np.asarray(losses)[np.asarray(is_member, dtype=bool)]
    non = np.asarray(losses)[~np.asarray(is_member, dtype=bool)]
    wins = ties = 0
    for m in member:
        for n in non:
            if -m > -n:
                wins += 1
            elif m == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(member) * len(non))


def trapezoid_area(fpr, tpr) -> float:
    return float(np.trapezoid(tpr, fpr))


def test_auc_perfect_separation():
    losses = np.array([0.1, 0.2, 0.9, 1.5])
    members = np.array([True, True, False, False])
    assert threshold_auc(losses, members) == 1.0
    assert threshold_auc(losses, ~members) == 0.0


def test_auc_all_tied_is_half():
    losses = np.full(10, 0.7)
    members = np.arange(10) < 5
    assert threshold_auc(losses, members) == 0.5


def test_auc_hand_value():
    # members {0.1, 0.8}, non-members {0.5, 0.8}: wins 2.5 + tie 0.5 of 4
    losses = np.array([0.1, 0.8, 0.5, 0.8])
    members = np.array([True, True, False, False])
    assert threshold_auc(losses, members) == pytest.approx(0.625)


def test_auc_requires_both_classes():
    with pytest.raises(ValueError):
        threshold_auc(np.ones(4), np.ones(4, dtype=bool))
    with pytest.raises(ValueError):
        threshold_auc(np.ones(4), np.zeros(4, dtype=bool))


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(0)
    losses = rng.normal(size=4000)
    members = np.arange(4000) < 2000
    assert threshold_auc(losses, members) == pytest.approx(0.5, abs=0.02)


@given(
    n_pos=st.integers(min_value=1, max_value=25),
    n_neg=st.integers(min_value=1, max_value=25),
    seed=st.integers(min_value=0, max_value=2**20),
    quantize=st.booleans(),
)
@settings(max_examples=80, deadline=None)
def test_auc_matches_brute_force(n_pos, n_neg, seed, quantize):
    rng = np.random.default_rng(seed)
    losses = rng.normal(size=n_pos + n_neg)
    if quantize:  # force plenty of ties
        losses = np.round(losses * 2.0) / 2.0
    members = np.zeros(n_pos + n_neg, dtype=bool)
    members[rng.choice(n_pos + n_neg, size=n_pos, replace=False)] = True
    assert threshold_auc(losses, members) == pytest.approx(
        brute_force_auc(losses, members), abs=1e-12
    )


@given(
    n_pos=st.integers(min_value=1, max_value=25),
    n_neg=st.integers(min_value=1, max_value=25),
    seed=st.integers(min_value=0, max_value=2**20),
)
@settings(max_examples=80, deadline=None)
def test_roc_area_equals_rank_auc(n_pos, n_neg, seed):
    rng = np.random.default_rng(seed)
    losses = np.round(rng.normal(size=n_pos + n_neg), 1)  # heavy ties
    members = np.zeros(n_pos + n_neg, dtype=bool)
    members[rng.choice(n_pos + n_neg, size=n_pos, replace=False)] = True
    fpr, tpr = roc_points(losses, members)
    assert trapezoid_area(fpr, tpr) == pytest.approx(
        threshold_auc(losses, members), abs=1e-12
    )


def test_roc_geometry():
    losses = np.array([0.1, 0.4, 0.2, 0.9, 0.4])
    members = np.array([True, False, True, False, True])
    fpr, tpr = roc_points(losses, members)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(fpr) >= -1e-15) and np.all(np.diff(tpr) >= -1e-15)


def test_auc_invariant_under_monotone_loss_transforms():
    rng = np.random.default_rng(1)
    losses = rng.exponential(size=200)
    members = rng.random(200) < 0.5
    members[0] = True
    members[1] = False
    base = threshold_auc(losses, members)
    assert threshold_auc(3.0 * losses + 2.0, members) == pytest.approx(base, abs=1e-12)
    assert threshold_auc(np.log1p(losses), members) == pytest.approx(base, abs=1e-12)


def test_per_sample_losses_consistent_with_objective():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 6))
    y = rng.integers(0, 3, size=20)
    w = rng.normal(size=18)
    per = per_sample_losses(w, X, y, 3)
    assert np.allclose(per, per_example_xent(w, X, y, 3))
    loss, _ = logistic_loss_grad(w, X, y, 3)
    assert per.mean() == pytest.approx(loss, rel=1e-12)


def test_attack_set_validation():
    with pytest.raises(AssertionError):
        AttackSet(losses=np.ones(3), is_member=np.ones(3))  # not boolean
    with pytest.raises(AssertionError):
        AttackSet(losses=np.ones(3), is_member=np.ones(4, dtype=bool))


def test_balanced_attack_set_layout():
    rng = np.random.default_rng(3)
    member_X = rng.normal(size=(40, 4))
    member_y = rng.integers(0, 2, size=40)
    hold_X = rng.normal(size=(25, 4))
    hold_y = rng.integers(0, 2, size=25)
    w = rng.normal(size=8)
    aset = balanced_attack_set(
        w, 2, member_X, member_y, hold_X, hold_y, count=30,
        rng=np.random.default_rng(9),
    )
    # capped by the smaller pool
    assert aset.losses.shape == (50,)
    assert int(aset.is_member.sum()) == 25
    assert np.all(aset.is_member[:25]) and not np.any(aset.is_member[25:])
    again = balanced_attack_set(
        w, 2, member_X, member_y, hold_X, hold_y, count=30,
        rng=np.random.default_rng(9),
    )
    assert np.array_equal(aset.losses, again.losses)


def test_overfit_model_leaks_membership():
    # train a tiny logistic model to near-zero loss on its members: the
    # attack must separate members from fresh draws of the same mixture
    from fedsmooth.data import synth_classification

    X, y = synth_classification(80, 16, 4, separation=0.8, seed=5)
    member_X, member_y = X[:30], y[:30]
    hold_X, hold_y = X[30:], y[30:]
    w = np.zeros(64)  # 64 params on 30 samples: memorization territory
    for _ in range(2000):
        _, g = logistic_loss_grad(w, member_X, member_y, 4)
        w = w - 2.0 * g
    member_loss, _ = logistic_loss_grad(w, member_X, member_y, 4)
    assert member_loss < 0.05
    aset = balanced_attack_set(
        w, 4, member_X, member_y, hold_X, hold_y, count=50,
        rng=np.random.default_rng(4),
    )
    auc = threshold_auc(aset.losses, aset.is_member)
    assert auc > 0.65
