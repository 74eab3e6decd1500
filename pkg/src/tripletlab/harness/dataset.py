"""Synthetic clustered dataset: well-separated class prototypes in the
unit box with Gaussian samples around them, split into disjoint train and
eval halves. Everything is a pure function of the seed."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..robustness import EvalCorpus

PROTOTYPE_LO = 0.2
PROTOTYPE_HI = 0.8
PROTOTYPE_MIN_GAP = 0.5


@dataclass
class SyntheticDataset:
    prototypes: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray
    sigma: float
    seed: int

    @property
    def classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def eval_corpus(self) -> EvalCorpus:
        """Split the eval rows of each class alternately into gallery and
        query halves (disjoint, deterministic)."""
        gallery, query = [], []
        for c in range(self.classes):
            rows = np.where(self.eval_y == c)[0]
            gallery.append(rows[0::2])
            query.append(rows[1::2])
        gal = np.concatenate(gallery)
        qry = np.concatenate(query)
        return EvalCorpus(self.eval_x[gal], self.eval_y[gal],
                          self.eval_x[qry], self.eval_y[qry])

    def save(self, path: str):
        doc = {
            "sigma": self.sigma,
            "seed": self.seed,
            "prototypes": self.prototypes.tolist(),
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
            "eval_x": self.eval_x.tolist(),
            "eval_y": self.eval_y.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "SyntheticDataset":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            prototypes=np.asarray(doc["prototypes"], dtype=np.float64),
            train_x=np.asarray(doc["train_x"], dtype=np.float64),
            train_y=np.asarray(doc["train_y"], dtype=np.int64),
            eval_x=np.asarray(doc["eval_x"], dtype=np.float64),
            eval_y=np.asarray(doc["eval_y"], dtype=np.int64),
            sigma=float(doc["sigma"]),
            seed=int(doc["seed"]),
        )


def _sample_prototypes(classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    protos: list[np.ndarray] = []
    for _ in range(100 * classes):
        cand = rng.uniform(PROTOTYPE_LO, PROTOTYPE_HI, size=dim)
        if all(np.linalg.norm(cand - p) >= PROTOTYPE_MIN_GAP for p in protos):
            protos.append(cand)
            if len(protos) == classes:
                return np.stack(protos)
    raise RuntimeError(
        f"could not place {classes} prototypes with gap {PROTOTYPE_MIN_GAP} in dim {dim}")


def generate_dataset(classes: int = 8, dim: int = 16, per_class_train: int = 64,
                     per_class_eval: int = 32, sigma: float = 0.05,
                     seed: int = 0) -> SyntheticDataset:
    """Rejection-sample prototypes, then draw per-class Gaussian clouds
    clipped into [0, 1]. Train and eval rows are drawn separately, so the
    splits are disjoint."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    prototypes = _sample_prototypes(classes, dim, rng)

    def draw(count: int) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for c in range(classes):
            noise = (rng.normal(0.0, sigma, size=(count, dim)) if sigma > 0
                     else np.zeros((count, dim)))
            xs.append(np.clip(prototypes[c] + noise, 0.0, 1.0))
            ys.append(np.full(count, c, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    train_x, train_y = draw(per_class_train)
    eval_x, eval_y = draw(per_class_eval)
    return SyntheticDataset(prototypes, train_x, train_y, eval_x, eval_y,
                            sigma=float(sigma), seed=int(seed))
