"""Brute-force oracle for the PGD driver: on 2-input-dimension instances
the whole feasible set can be enumerated at the PGD lattice resolution
(1/255), so the grid optimum bounds what sign-ascent should find."""

import numpy as np

from tripletlab import gradcore as gc
from tripletlab.encoder import Encoder
from tripletlab.pgd import PerturbationBudget, pgd_maximize, project


def pgd_vs_grid_gap(seed: int) -> float:
    """grid_optimum - pgd_value for one random instance (<= 0 when PGD wins)."""
    rng = np.random.default_rng(seed)
    model = Encoder(2, (6,), 3, seed=int(rng.integers(2**31)))
    x = rng.uniform(0.0, 1.0, size=(1, 2))
    target = model.embed_array(rng.uniform(0.0, 1.0, size=(1, 2)))
    budget = PerturbationBudget(eta=32)

    def value(points: np.ndarray) -> np.ndarray:
        emb = model.embed_array(points)
        return np.linalg.norm(emb - target, axis=1)

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(target)))

    r = pgd_maximize(objective, x, budget)
    pgd_value = float(value(x + r)[0])

    steps = np.arange(-8, 9) / 255.0
    g1, g2 = np.meshgrid(steps, steps)
    grid_r = np.stack([g1.ravel(), g2.ravel()], axis=1)
    grid_r = project(grid_r, np.repeat(x, len(grid_r), axis=0), budget)
    grid_value = float(value(x + grid_r).max())

    return grid_value - pgd_value
