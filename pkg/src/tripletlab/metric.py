"""Triplet loss, triplet hardness, and their closed-form gradients.

Embeddings live on the unit hypersphere and distances are Euclidean, so
hardness d(a,p) - d(a,n) is bounded by [-2, 2] and the triplet loss
max(0, hardness + margin) by [0, 2 + margin].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc

DEFAULT_MARGIN = 0.2


@dataclass(frozen=True)
class MarginConfig:
    gamma: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"margin must be >= 0, got {self.gamma}")


def hardness_node(a: gc.Node, p: gc.Node, n: gc.Node) -> gc.Node:
    """Per-triplet hardness d(a,p) - d(a,n) for row-aligned (T,D) nodes."""
    return gc.sub(gc.euclidean_rowwise(a, p), gc.euclidean_rowwise(a, n))


def triplet_losses(a: gc.Node, p: gc.Node, n: gc.Node, gamma: float = DEFAULT_MARGIN) -> gc.Node:
    """Per-triplet losses max(0, d(a,p) - d(a,n) + gamma), shape (T,)."""
    h = hardness_node(a, p, n)
    shifted = gc.add(h, a.tape.leaf(np.full(h.shape, gamma)))
    return gc.clamp_min(shifted, 0.0)


def mean_triplet_loss(a: gc.Node, p: gc.Node, n: gc.Node, gamma: float = DEFAULT_MARGIN) -> gc.Node:
    losses = triplet_losses(a, p, n, gamma)
    return gc.scale(gc.sum_all(losses), 1.0 / losses.shape[0])


def rowwise_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a - b) ** 2).sum(axis=1))


def hardness_values(a: np.ndarray, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Tape-free hardness of row-aligned embedding arrays."""
    return rowwise_distance(a, p) - rowwise_distance(a, n)


def triplet_loss_values(a: np.ndarray, p: np.ndarray, n: np.ndarray,
                        gamma: float = DEFAULT_MARGIN) -> np.ndarray:
    return np.maximum(0.0, hardness_values(a, p, n) + gamma)


def pairwise_distances(emb_a: np.ndarray, emb_b: np.ndarray | None = None) -> np.ndarray:
    """Euclidean distance matrix between rows of emb_a and emb_b."""
    if emb_b is None:
        emb_b = emb_a
    sq_a = (emb_a * emb_a).sum(axis=1)[:, None]
    sq_b = (emb_b * emb_b).sum(axis=1)[None, :]
    sq = np.maximum(sq_a + sq_b - 2.0 * emb_a @ emb_b.T, 0.0)
    return np.sqrt(sq)


def analytic_triplet_grads(a: np.ndarray, p: np.ndarray, n: np.ndarray):
    """Closed-form triplet-loss gradients w.r.t. the embeddings themselves
    (valid where the loss is active):

        dL/da = (a-p)/|a-p| - (a-n)/|a-n|
        dL/dp = (p-a)/|a-p|
        dL/dn = (a-n)/|a-n|

    Accepts single vectors or row-aligned (T,D) arrays. Coincident anchor
    and positive/negative rows make the unit direction undefined and raise.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    n = np.atleast_2d(np.asarray(n, dtype=np.float64))
    dap = rowwise_distance(a, p)
    dan = rowwise_distance(a, n)
    if np.any(dap == 0.0):
        raise ValueError("analytic_triplet_grads: coincident anchor and positive")
    if np.any(dan == 0.0):
        raise ValueError("analytic_triplet_grads: coincident anchor and negative")
    unit_ap = (a - p) / dap[:, None]
    unit_an = (a - n) / dan[:, None]
    return unit_ap - unit_an, -unit_ap, unit_an
