"""Projected gradient ascent over an L-infinity perturbation budget.

The driver maximizes any scalar objective of the perturbed inputs with
sign steps, projecting after every step so the perturbation stays inside
the epsilon box and the perturbed input stays inside the data domain.
Perturbations start from zero, which keeps runs deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbationBudget:
    """Feasible set: |r|_inf <= epsilon and X + r inside [domain_lo, domain_hi]."""

    epsilon: float = 8.0 / 255.0
    alpha: float = 1.0 / 255.0
    eta: int = 8
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.epsilon):
            raise ValueError(f"need 0 < alpha <= epsilon, got alpha={self.alpha}, epsilon={self.epsilon}")
        if self.eta < 1:
            raise ValueError(f"need eta >= 1, got {self.eta}")
        if not self.domain_lo < self.domain_hi:
            raise ValueError(f"need domain_lo < domain_hi, got [{self.domain_lo}, {self.domain_hi}]")

    def with_eta(self, eta: int) -> "PerturbationBudget":
        return PerturbationBudget(self.epsilon, self.alpha, eta, self.domain_lo, self.domain_hi)


def project(r: np.ndarray, x: np.ndarray, budget: PerturbationBudget) -> np.ndarray:
    """Clamp r into the epsilon box, then pull x + r back into the domain.

    Entries that already satisfy a constraint pass through bit-unchanged
    (so the operation is exactly idempotent); the domain clamp can only
    shrink an entry, which keeps it inside the epsilon box too.
    """
    if r.shape != x.shape:
        raise ValueError(f"project: perturbation shape {r.shape} != input shape {x.shape}")
    r = np.clip(r, -budget.epsilon, budget.epsilon)
    xr = x + r
    r = np.where(xr > budget.domain_hi, budget.domain_hi - x, r)
    return np.where(xr < budget.domain_lo, budget.domain_lo - x, r)


def _feasible(r: np.ndarray, x: np.ndarray, budget: PerturbationBudget) -> bool:
    tol = 1e-12
    if np.max(np.abs(r), initial=0.0) > budget.epsilon + tol:
        return False
    xr = x + r
    return bool(np.all(xr >= budget.domain_lo - tol) and np.all(xr <= budget.domain_hi + tol))


def pgd_maximize(objective, x: np.ndarray, budget: PerturbationBudget) -> np.ndarray:
    """Run eta sign-ascent steps on objective(tape, perturbed_leaf).

    objective must return a scalar node differentiable w.r.t. its input
    leaf. Rows whose gradient turns non-finite are frozen for the rest of
    the run (the attack is abandoned for that sample); rows with an exactly
    zero gradient take no step, which realizes the clamped-objective
    "optimization stops by itself" behavior.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.zeros_like(x)
    frozen = np.zeros(x.shape[0], dtype=bool)
    first_value = None

    for _ in range(budget.eta):
        tape = gc.Tape()
        leaf = tape.leaf(x + r)
        obj = objective(tape, leaf)
        if first_value is None:
            first_value = float(obj.value)
        gc.backward(obj)
        g = leaf.grad
        frozen |= ~np.isfinite(g).all(axis=tuple(range(1, g.ndim)))
        step = np.sign(np.where(np.isfinite(g), g, 0.0))
        step[frozen] = 0.0
        r = project(r + budget.alpha * step, x, budget)
        assert _feasible(r, x, budget), "PGD produced an infeasible perturbation"

    tape = gc.Tape()
    final_value = float(objective(tape, tape.leaf(x + r)).value)
    if final_value < first_value - 1e-9:
        log.warning("PGD objective decreased: %.6g -> %.6g", first_value, final_value)
    return r
