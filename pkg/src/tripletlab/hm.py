"""Hardness manipulation: perturb a training triplet until its hardness
reaches a per-triplet destination value.

The attack objective is ||max(0, H_dest - H_perturbed)||^2 summed over the
mini-batch; its negative gradient sign equals the sign of the hardness
gradient wherever the destination has not been reached, so PGD on it is a
direct hardness ascent that stops by itself at the destination.

Destination providers range from "the hardness of a second benign triplet
sharing the anchor" to pseudo-hardness schedules driven by the previous
iteration's loss (weak adversary while the loss is large, stronger as it
shrinks).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import gradcore as gc
from .encoder import Encoder
from .pgd import PerturbationBudget, pgd_maximize
from .samplers import STRATEGIES

DEFAULT_XI = 0.1


@dataclass(frozen=True)
class SourceHardness:
    """Destination equal to the source triplet's own benign hardness; the
    residual is zero at r = 0, so training degenerates to the undefended case."""


@dataclass(frozen=True)
class SamplerHardness:
    """Benign hardness of a second triplet (same anchors) mined with `strategy`."""

    strategy: str

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if not -2.0 <= self.value <= 2.0:
            raise ValueError(f"constant destination must lie in [-2, 2], got {self.value}")


@dataclass(frozen=True)
class GradualBoost:
    """Shift a base destination up by xi * (1 - normalized_loss)."""

    base: "Destination"
    xi: float = DEFAULT_XI


@dataclass(frozen=True)
class LGA:
    """Linear schedule -gamma * normalized_loss, always in [-gamma, 0]."""

    gamma: float


@dataclass(frozen=True)
class Poly:
    """Polynomial schedule -gamma * normalized_loss**exponent (exponent 2
    presses harder early in training, 1/2 is more conservative)."""

    exponent: float
    gamma: float

    def __post_init__(self):
        if self.exponent not in (2.0, 0.5):
            raise ValueError(f"polynomial schedule exponent must be 2 or 0.5, got {self.exponent}")


Destination = Union[SourceHardness, SamplerHardness, Constant, GradualBoost, LGA, Poly]


def parse_destination(spec: str, gamma: float, xi: float = DEFAULT_XI) -> Destination:
    """Parse destination spec strings:

    source | sampler:<strategy> | const:<value> | lga | poly:<2|0.5>
    | gboost:<base spec>[:<xi>]
    """
    spec = spec.strip()
    if spec == "source":
        return SourceHardness()
    if spec == "lga":
        return LGA(gamma)
    if spec.startswith("sampler:"):
        return SamplerHardness(spec.split(":", 1)[1])
    if spec.startswith("const:"):
        return Constant(float(spec.split(":", 1)[1]))
    if spec.startswith("poly:"):
        return Poly(float(spec.split(":", 1)[1]), gamma)
    if spec.startswith("gboost:"):
        rest = spec[len("gboost:"):]
        if ":" in rest:
            base_spec, tail = rest.rsplit(":", 1)
            try:
                explicit_xi = float(tail)
            except ValueError:
                explicit_xi = None
            if explicit_xi is not None:
                try:
                    return GradualBoost(parse_destination(base_spec, gamma, xi), explicit_xi)
                except ValueError:
                    pass  # the numeric tail belonged to the base spec (e.g. const:0.3)
        return GradualBoost(parse_destination(rest, gamma, xi), xi)
    raise ValueError(f"cannot parse destination spec {spec!r}")


def partner_strategy(dest: Destination) -> Optional[str]:
    """Sampling strategy of the second benign triplet, if one is needed."""
    if isinstance(dest, SamplerHardness):
        return dest.strategy
    if isinstance(dest, GradualBoost):
        return partner_strategy(dest.base)
    return None


class LossTracker:
    """Tracks the previous iteration's mean adversarial loss and exposes it
    normalized to [0, 1]. Starts at the cap, so the first adversary is the
    weakest one the schedule can produce."""

    def __init__(self, u: float):
        if u <= 0:
            raise ValueError(f"loss normalization constant u must be > 0, got {u}")
        self.u = float(u)
        self.prev_loss = float(u)

    def normalized(self) -> float:
        return min(self.u, self.prev_loss) / self.u

    def update(self, mean_loss: float):
        self.prev_loss = float(mean_loss)


@dataclass
class DestinationContext:
    """Per-batch inputs a destination provider may draw on."""

    normalized_loss: float
    source_hardness: np.ndarray
    partner_hardness: Optional[np.ndarray] = None


def destination_value(dest: Destination, ctx: DestinationContext) -> np.ndarray:
    """Per-triplet destination hardness, clipped into [-2, 2]."""
    t = len(ctx.source_hardness)
    if isinstance(dest, SourceHardness):
        out = np.array(ctx.source_hardness, dtype=np.float64)
    elif isinstance(dest, SamplerHardness):
        if ctx.partner_hardness is None:
            raise ValueError("sampler destination needs a partner triplet in the context")
        out = np.array(ctx.partner_hardness, dtype=np.float64)
    elif isinstance(dest, Constant):
        out = np.full(t, dest.value)
    elif isinstance(dest, GradualBoost):
        out = destination_value(dest.base, ctx) + dest.xi * (1.0 - ctx.normalized_loss)
    elif isinstance(dest, LGA):
        out = np.full(t, -dest.gamma * ctx.normalized_loss)
    elif isinstance(dest, Poly):
        out = np.full(t, -dest.gamma * ctx.normalized_loss ** dest.exponent)
    else:
        raise ValueError(f"unknown destination {dest!r}")
    return np.clip(out, -2.0, 2.0)


def gather_rows(node: gc.Node, indices: np.ndarray) -> gc.Node:
    """Select rows of a (B,D) node as a (T,D) node, via a 0/1 selection
    matrix so the gradient scatters back through plain matmul."""
    indices = np.asarray(indices, dtype=np.int64)
    sel = np.zeros((len(indices), node.shape[0]))
    sel[np.arange(len(indices)), indices] = 1.0
    return gc.matmul(node.tape.leaf(sel), node)


def hm_objective(h_tilde: gc.Node, h_dest: np.ndarray) -> gc.Node:
    """||max(0, H_dest - H_tilde)||^2 over the batch; zero (with zero
    gradient) exactly where the perturbed hardness has reached the target."""
    target = h_tilde.tape.leaf(np.asarray(h_dest, dtype=np.float64))
    residual = gc.clamp_min(gc.sub(target, h_tilde), 0.0)
    return gc.sum_all(gc.square(residual))


def _stacked_triplet_hardness(model: Encoder, tape: gc.Tape, x: gc.Node, t: int) -> gc.Node:
    """Hardness per triplet for a stacked [anchors; positives; negatives] leaf."""
    emb = model.embed(tape, x)
    a = gather_rows(emb, np.arange(0, t))
    p = gather_rows(emb, np.arange(t, 2 * t))
    n = gather_rows(emb, np.arange(2 * t, 3 * t))
    return gc.sub(gc.euclidean_rowwise(a, p), gc.euclidean_rowwise(a, n))


def _split3(r: np.ndarray, t: int):
    return r[:t], r[t:2 * t], r[2 * t:]


def hm_perturb(model: Encoder, anchors: np.ndarray, positives: np.ndarray,
               negatives: np.ndarray, h_dest: np.ndarray,
               budget: PerturbationBudget):
    """Perturb all three triplet members to push hardness up to h_dest.

    Returns per-member perturbations (r_a, r_p, r_n). The model is treated
    as frozen; h_dest is a fixed target throughout the run.
    """
    t = anchors.shape[0]
    stacked = np.concatenate([anchors, positives, negatives], axis=0)

    def objective(tape, x):
        h = _stacked_triplet_hardness(model, tape, x, t)
        return gc.scale(hm_objective(h, h_dest), -1.0)

    return _split3(pgd_maximize(objective, stacked, budget), t)


def hardness_ascent_perturb(model: Encoder, anchors: np.ndarray, positives: np.ndarray,
                            negatives: np.ndarray, budget: PerturbationBudget):
    """Direct triplet-loss maximization: ascend the summed hardness with no
    destination cap (the min-max inner problem)."""
    t = anchors.shape[0]
    stacked = np.concatenate([anchors, positives, negatives], axis=0)

    def objective(tape, x):
        return gc.sum_all(_stacked_triplet_hardness(model, tape, x, t))

    return _split3(pgd_maximize(objective, stacked, budget), t)
