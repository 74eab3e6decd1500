"""Mini-batch construction and triplet mining strategies.

Every batch row serves as anchor exactly once; strategies differ in how
the positive and negative for that anchor are chosen. Given the batch,
current embeddings, and an rng, sampling is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import pairwise_distances

STRATEGIES = ("random", "semihard", "softhard", "distance", "hardest")

# Distance-weighted sampling: candidate weight is min(CAP, 1/q(d)) where q is
# the density of pairwise distances of uniform points on the D-sphere.
DISTANCE_CLIP = 0.5
DISTANCE_CAP = 100.0


@dataclass
class LabeledBatch:
    """Inputs of shape (B, n) with one integer class label per row."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("batch needs (B,n) inputs and (B,) labels")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on batch size")
        _, counts = np.unique(self.labels, return_counts=True)
        if np.any(counts < 2):
            raise ValueError("every class in a batch needs >= 2 samples")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TripletBatch:
    """Anchor/positive/negative row indices into one LabeledBatch."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    strategy: str = "random"

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.int64)
        self.positives = np.asarray(self.positives, dtype=np.int64)
        self.negatives = np.asarray(self.negatives, dtype=np.int64)

    def __len__(self) -> int:
        return self.anchors.shape[0]

    def check(self, labels: np.ndarray):
        labels = np.asarray(labels)
        ok = (
            np.all(labels[self.anchors] == labels[self.positives])
            and np.all(self.anchors != self.positives)
            and np.all(labels[self.anchors] != labels[self.negatives])
        )
        if not ok:
            raise ValueError("triplet label invariants violated")

    def hardness(self, embeddings: np.ndarray) -> np.ndarray:
        d = pairwise_distances(embeddings)
        return d[self.anchors, self.positives] - d[self.anchors, self.negatives]


def _distance_weights(dists: np.ndarray, dim: int) -> np.ndarray:
    d = np.maximum(dists, DISTANCE_CLIP)
    q = d ** (dim - 2) * np.maximum(1.0 - 0.25 * d * d, 0.0) ** ((dim - 3) / 2.0)
    w = np.full_like(q, DISTANCE_CAP)
    nz = q > 0.0
    w[nz] = np.minimum(1.0 / q[nz], DISTANCE_CAP)
    return w


def sample_triplets(batch: LabeledBatch, embeddings: np.ndarray, strategy: str,
                    gamma: float, rng: np.random.Generator) -> TripletBatch:
    """Mine one triplet per anchor row under the named strategy.

    random:   uniform positive, uniform negative.
    semihard: uniform positive; negative uniform over the semihard window
              d(a,p) < d(a,n) < d(a,p)+gamma, falling back to the nearest
              negative beyond the window, then to a uniform negative.
    softhard: positive uniform over the farther half of positives
              (d >= median), negative uniform over the nearer half
              (d <= median).
    distance: uniform positive; negative drawn with probability
              proportional to the inverse sphere-distance density.
    hardest:  uniform positive; nearest negative.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != len(batch):
        raise ValueError("embeddings do not match batch size")
    labels = batch.labels
    dists = pairwise_distances(embeddings)
    dim = embeddings.shape[1]

    anchors = np.arange(len(batch), dtype=np.int64)
    positives = np.empty(len(batch), dtype=np.int64)
    negatives = np.empty(len(batch), dtype=np.int64)

    for i in anchors:
        pos_idx = np.where((labels == labels[i]) & (np.arange(len(batch)) != i))[0]
        neg_idx = np.where(labels != labels[i])[0]
        d_pos = dists[i, pos_idx]
        d_neg = dists[i, neg_idx]

        if strategy == "softhard":
            far_pos = pos_idx[d_pos >= np.median(d_pos)]
            p = far_pos[rng.integers(len(far_pos))]
        else:
            p = pos_idx[rng.integers(len(pos_idx))]
        d_ap = dists[i, p]

        if strategy == "random":
            n = neg_idx[rng.integers(len(neg_idx))]
        elif strategy == "semihard":
            window = neg_idx[(d_neg > d_ap) & (d_neg < d_ap + gamma)]
            if len(window):
                n = window[rng.integers(len(window))]
            else:
                beyond = neg_idx[d_neg >= d_ap + gamma]
                if len(beyond):
                    n = beyond[np.argmin(dists[i, beyond])]
                else:
                    n = neg_idx[rng.integers(len(neg_idx))]
        elif strategy == "softhard":
            near_neg = neg_idx[d_neg <= np.median(d_neg)]
            n = near_neg[rng.integers(len(near_neg))]
        elif strategy == "distance":
            w = _distance_weights(d_neg, dim)
            n = rng.choice(neg_idx, p=w / w.sum())
        else:  # hardest
            n = neg_idx[np.argmin(d_neg)]
        positives[i] = p
        negatives[i] = n

    out = TripletBatch(anchors, positives, negatives, strategy=strategy)
    out.check(labels)
    return out


def hardness_stats(triplets: TripletBatch, embeddings: np.ndarray) -> tuple[float, float]:
    """Sample mean and (population) variance of triplet hardness."""
    if len(triplets) == 0:
        raise ValueError("hardness_stats: empty triplet set")
    h = triplets.hardness(np.asarray(embeddings, dtype=np.float64))
    return float(h.mean()), float(h.var())
