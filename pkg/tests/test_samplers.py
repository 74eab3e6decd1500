import numpy as np
import pytest

from tripletlab.metric import pairwise_distances
from tripletlab.samplers import (LabeledBatch, TripletBatch, hardness_stats,
                                 sample_triplets, STRATEGIES)

GAMMA = 0.2


def _unit_rows(rng, count, dim):
    rows = rng.normal(size=(count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _batch(rng, classes=4, per_class=6, dim=5):
    labels = np.repeat(np.arange(classes), per_class)
    inputs = rng.uniform(0, 1, size=(classes * per_class, dim))
    return LabeledBatch(inputs, labels)


def test_batch_requires_two_samples_per_class():
    with pytest.raises(ValueError, match=">= 2"):
        LabeledBatch(np.zeros((3, 2)), np.array([0, 1, 1]))


def test_triplet_invariants_checked():
    trip = TripletBatch([0], [1], [2])
    trip.check(np.array([0, 0, 1]))
    bad = TripletBatch([0], [2], [1])
    with pytest.raises(ValueError, match="invariants"):
        bad.check(np.array([0, 0, 1]))


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_every_strategy_obeys_label_rules_and_anchors_once(strategy):
    rng = np.random.default_rng(0)
    batch = _batch(rng)
    emb = _unit_rows(rng, len(batch), 8)
    trip = sample_triplets(batch, emb, strategy, GAMMA, np.random.default_rng(1))
    assert np.array_equal(np.sort(trip.anchors), np.arange(len(batch)))
    trip.check(batch.labels)


def test_hardest_picks_argmin_negative():
    # anchor 0 with negatives at distances 0.3 (row 2) and 0.9 (row 3)
    emb = np.array([
        [1.0, 0.0],
        [np.cos(0.1), np.sin(0.1)],
        [np.cos(0.3), np.sin(0.3)],
        [np.cos(1.2), np.sin(1.2)],
    ])
    batch = LabeledBatch(np.zeros((4, 2)), np.array([0, 0, 1, 1]))
    trip = sample_triplets(batch, emb, "hardest", GAMMA, np.random.default_rng(0))
    assert trip.negatives[0] == 2


def test_semihard_picks_the_window_member():
    # d(a,p)=0.5; negatives at 0.45, 0.6, 0.9 -> only 0.6 is inside (0.5, 0.7)
    a = np.array([1.0, 0.0, 0.0])

    def at_distance(d):
        # unit vector at exact euclidean distance d from a
        cos = 1.0 - d * d / 2.0
        sin = np.sqrt(1.0 - cos * cos)
        return np.array([cos, sin, 0.0])

    emb = np.stack([a, at_distance(0.5), at_distance(0.45),
                    at_distance(0.6), at_distance(0.9)])
    batch = LabeledBatch(np.zeros((5, 2)), np.array([0, 0, 1, 1, 1]))
    for seed in range(5):
        trip = sample_triplets(batch, emb, "semihard", GAMMA, np.random.default_rng(seed))
        assert trip.negatives[0] == 3


def test_semihard_fallback_prefers_nearest_beyond_window():
    # no negative inside the window; nearest beyond d(a,p)+gamma must win
    a = np.array([1.0, 0.0, 0.0])

    def at_distance(d):
        cos = 1.0 - d * d / 2.0
        return np.array([cos, np.sqrt(1.0 - cos * cos), 0.0])

    emb = np.stack([a, at_distance(0.5), at_distance(1.2), at_distance(0.8)])
    batch = LabeledBatch(np.zeros((4, 2)), np.array([0, 0, 1, 1]))
    trip = sample_triplets(batch, emb, "semihard", GAMMA, np.random.default_rng(0))
    assert trip.negatives[0] == 3


def test_semihard_window_hardness_range():
    rng = np.random.default_rng(7)
    batch = _batch(rng, classes=4, per_class=8)
    emb = _unit_rows(rng, len(batch), 16)
    d = pairwise_distances(emb)
    trip = sample_triplets(batch, emb, "semihard", GAMMA, np.random.default_rng(8))
    h = trip.hardness(emb)
    for t in range(len(trip)):
        a, p, n = trip.anchors[t], trip.positives[t], trip.negatives[t]
        in_window = d[a, p] < d[a, n] < d[a, p] + GAMMA
        if in_window:
            assert -GAMMA < h[t] < 0.0


def test_hardest_is_upper_bound_for_fixed_anchor_positive():
    rng = np.random.default_rng(9)
    batch = _batch(rng)
    emb = _unit_rows(rng, len(batch), 8)
    d = pairwise_distances(emb)
    trip = sample_triplets(batch, emb, "hardest", GAMMA, np.random.default_rng(10))
    for t in range(len(trip)):
        a, p, n = trip.anchors[t], trip.positives[t], trip.negatives[t]
        h_chosen = d[a, p] - d[a, n]
        negatives = np.where(batch.labels != batch.labels[a])[0]
        assert h_chosen >= np.max(d[a, p] - d[a, negatives]) - 1e-12


def test_softhard_respects_median_split():
    rng = np.random.default_rng(11)
    batch = _batch(rng, classes=3, per_class=8)
    emb = _unit_rows(rng, len(batch), 8)
    d = pairwise_distances(emb)
    trip = sample_triplets(batch, emb, "softhard", GAMMA, np.random.default_rng(12))
    for t in range(len(trip)):
        a, p, n = trip.anchors[t], trip.positives[t], trip.negatives[t]
        same = np.where((batch.labels == batch.labels[a]) & (np.arange(len(batch)) != a))[0]
        diff = np.where(batch.labels != batch.labels[a])[0]
        assert d[a, p] >= np.median(d[a, same])
        assert d[a, n] <= np.median(d[a, diff])


def test_unknown_strategy_rejected():
    rng = np.random.default_rng(13)
    batch = _batch(rng)
    with pytest.raises(ValueError, match="strategy"):
        sample_triplets(batch, _unit_rows(rng, len(batch), 4), "magic", GAMMA, rng)


def test_stats_single_triplet_variance_zero():
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    trip = TripletBatch([0], [1], [2])
    mean, var = hardness_stats(trip, emb)
    assert var == 0.0
    assert mean == pytest.approx(np.sqrt(2.0) - 2.0)


def test_stats_empty_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        hardness_stats(TripletBatch([], [], []), np.zeros((0, 2)))


def test_mean_hardness_ordering_on_trained_model(trained_model, desk_dataset):
    # random <= semihard <= hardest in expectation once geometry is learned,
    # with a strictly positive hardest-vs-random gap
    means = {"random": [], "semihard": [], "hardest": []}
    for batch_seed in range(6):
        brng = np.random.default_rng(100 + batch_seed)
        rows = np.concatenate([
            brng.choice(np.where(desk_dataset.train_y == c)[0], size=4, replace=False)
            for c in range(desk_dataset.classes)])
        batch = LabeledBatch(desk_dataset.train_x[rows], desk_dataset.train_y[rows])
        emb = trained_model.embed_array(batch.inputs)
        for strategy in means:
            trip = sample_triplets(batch, emb, strategy, GAMMA,
                                   np.random.default_rng(batch_seed))
            means[strategy].append(trip.hardness(emb).mean())
    assert np.mean(means["random"]) <= np.mean(means["semihard"]) <= np.mean(means["hardest"])
    assert np.mean(means["hardest"]) - np.mean(means["random"]) > 0.0


def test_sampling_is_deterministic_given_seed():
    rng = np.random.default_rng(14)
    batch = _batch(rng)
    emb = _unit_rows(rng, len(batch), 8)
    t1 = sample_triplets(batch, emb, "distance", GAMMA, np.random.default_rng(5))
    t2 = sample_triplets(batch, emb, "distance", GAMMA, np.random.default_rng(5))
    assert np.array_equal(t1.positives, t2.positives)
    assert np.array_equal(t1.negatives, t2.negatives)
