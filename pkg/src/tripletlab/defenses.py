"""Training losses for the supported defenses, plus collapse detection.

Every defense builds its final loss on a stacked [anchors; positives;
negatives] forward pass (benign training included), so boundary cases
that should coincide with benign training do so bitwise, not just
approximately. All inner attack problems run as a single batched PGD, so
each training iteration costs exactly eta + 1 backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gradcore as gc
from . import hm as hm_mod
from .encoder import Encoder
from .metric import hardness_values
from .pgd import PerturbationBudget, pgd_maximize
from .samplers import LabeledBatch, sample_triplets

DEFENSE_KINDS = ("none", "hm", "hm+ics", "est", "act", "minmax")

COLLAPSE_THRESHOLD = 0.99
COLLAPSE_PATIENCE = 2


@dataclass
class DefenseSpec:
    kind: str = "none"
    source: str = "random"
    destination: Optional[hm_mod.Destination] = None
    lam: float = 0.5
    gamma: float = 0.2
    budget: PerturbationBudget = field(default_factory=PerturbationBudget)

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"ICS weight must be >= 0, got {self.lam}")
        if self.kind in ("hm", "hm+ics") and self.destination is None:
            raise ValueError(f"defense {self.kind!r} needs a destination")

    @property
    def adversarial(self) -> bool:
        return self.kind != "none"

    def backward_passes_per_step(self) -> int:
        return self.budget.eta + 1 if self.adversarial else 1


def _member_rows(batch: LabeledBatch, triplets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = batch.inputs
    return x[triplets.anchors], x[triplets.positives], x[triplets.negatives]


def _blocks(emb: gc.Node, t: int, count: int) -> list[gc.Node]:
    return [hm_mod.gather_rows(emb, np.arange(i * t, (i + 1) * t)) for i in range(count)]


def _mean_loss_node(a: gc.Node, p: gc.Node, n: gc.Node, gamma: float) -> gc.Node:
    h = gc.sub(gc.euclidean_rowwise(a, p), gc.euclidean_rowwise(a, n))
    shifted = gc.add(h, a.tape.leaf(np.full(h.shape, gamma)))
    per_triplet = gc.clamp_min(shifted, 0.0)
    return gc.scale(gc.sum_all(per_triplet), 1.0 / h.shape[0])


def _source_hardness_exact(model: Encoder, a: np.ndarray, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Benign triplet hardness evaluated through the exact attack-side
    arithmetic, so a destination equal to it leaves a residual of exactly
    zero at r = 0."""
    tape = gc.Tape()
    stacked = np.concatenate([a, p, n], axis=0)
    return hm_mod._stacked_triplet_hardness(model, tape, tape.leaf(stacked), len(a)).value


def est_perturb(model: Encoder, rows: np.ndarray, budget: PerturbationBudget) -> np.ndarray:
    """Maximize each row's embedding shift away from its clean position.

    The clean reference is offset by a vanishing constant: at r = 0 the
    shift objective sits at the tip of a cone whose formal gradient is zero
    even though every direction ascends."""
    reference = model.embed_array(rows)
    tie_break = reference - 1e-6 / np.sqrt(reference.shape[1])

    def objective(tape, x):
        emb = model.embed(tape, x)
        return gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(tie_break)))

    return pgd_maximize(objective, rows, budget)


def act_perturb(model: Encoder, positives: np.ndarray, negatives: np.ndarray,
                budget: PerturbationBudget) -> tuple[np.ndarray, np.ndarray]:
    """Jointly pull positive and negative embeddings together; the anchor
    is never part of the attacked stack, so r_a is identically zero."""
    t = len(positives)
    stacked = np.concatenate([positives, negatives], axis=0)

    def objective(tape, x):
        emb = model.embed(tape, x)
        p, n = _blocks(emb, t, 2)
        return gc.scale(gc.sum_all(gc.euclidean_rowwise(p, n)), -1.0)

    r = pgd_maximize(objective, stacked, budget)
    return r[:t], r[t:]


def training_loss(model: Encoder, batch: LabeledBatch, spec: DefenseSpec,
                  rng: np.random.Generator, tracker: hm_mod.LossTracker):
    """Assemble the defense loss for one mini-batch.

    Returns (loss_node, parameter_leaves, diagnostics). The caller owns the
    backward pass and the optimizer step.
    """
    benign_emb = model.embed_array(batch.inputs)
    triplets = sample_triplets(batch, benign_emb, spec.source, spec.gamma, rng)
    a_rows, p_rows, n_rows = _member_rows(batch, triplets)
    h_source = hardness_values(benign_emb[triplets.anchors],
                               benign_emb[triplets.positives],
                               benign_emb[triplets.negatives])
    benign_loss = float(np.mean(np.maximum(0.0, h_source + spec.gamma)))
    t = len(triplets)
    diag = {
        "benign_loss": benign_loss,
        "h_source": float(h_source.mean()),
        "h_tilde": None,
        "h_dest": None,
        "adv_loss": None,
    }

    if spec.kind == "none":
        tape = gc.Tape()
        stacked = np.concatenate([a_rows, p_rows, n_rows], axis=0)
        emb, params = model.embed_with_params(tape, stacked)
        a, p, n = _blocks(emb, t, 3)
        loss = _mean_loss_node(a, p, n, spec.gamma)
        diag["adv_loss"] = float(loss.value)
        return loss, params, diag

    if spec.kind in ("hm", "hm+ics", "minmax"):
        if spec.kind == "minmax":
            h_dest = np.full(t, 2.0)
            r_a, r_p, r_n = hm_mod.hardness_ascent_perturb(model, a_rows, p_rows, n_rows,
                                                           spec.budget)
        else:
            partner = hm_mod.partner_strategy(spec.destination)
            partner_h = None
            if partner is not None:
                second = sample_triplets(batch, benign_emb, partner, spec.gamma, rng)
                partner_h = hardness_values(benign_emb[second.anchors],
                                            benign_emb[second.positives],
                                            benign_emb[second.negatives])
            source_exact = _source_hardness_exact(model, a_rows, p_rows, n_rows)
            ctx = hm_mod.DestinationContext(tracker.normalized(), source_exact, partner_h)
            h_dest = hm_mod.destination_value(spec.destination, ctx)
            r_a, r_p, r_n = hm_mod.hm_perturb(model, a_rows, p_rows, n_rows, h_dest,
                                              spec.budget)
        diag["h_dest"] = float(h_dest.mean())

        tape = gc.Tape()
        if spec.kind == "hm+ics":
            stacked = np.concatenate([a_rows + r_a, p_rows + r_p, n_rows + r_n,
                                      a_rows, p_rows], axis=0)
            emb, params = model.embed_with_params(tape, stacked)
            a_adv, p_adv, n_adv, a_ben, p_ben = _blocks(emb, t, 5)
            main = _mean_loss_node(a_adv, p_adv, n_adv, spec.gamma)
            # zero-margin term keeping the adversarial anchor closer to the
            # benign anchor than the positive is
            ics = gc.scale(_mean_loss_node(a_ben, a_adv, p_ben, 0.0), spec.lam)
            loss = gc.add(main, ics)
            diag["hm_term"] = float(main.value)
            diag["ics_term"] = float(ics.value)
        else:
            stacked = np.concatenate([a_rows + r_a, p_rows + r_p, n_rows + r_n], axis=0)
            emb, params = model.embed_with_params(tape, stacked)
            a_adv, p_adv, n_adv = _blocks(emb, t, 3)
            main = _mean_loss_node(a_adv, p_adv, n_adv, spec.gamma)
            loss = main
        adv_vals = emb.value
        diag["h_tilde"] = float(hardness_values(adv_vals[:t], adv_vals[t:2 * t],
                                                adv_vals[2 * t:3 * t]).mean())
        diag["adv_loss"] = float(main.value)
        return loss, params, diag

    if spec.kind == "est":
        stacked = np.concatenate([a_rows, p_rows, n_rows], axis=0)
        r = est_perturb(model, stacked, spec.budget)
        tape = gc.Tape()
        emb, params = model.embed_with_params(tape, stacked + r)
        a, p, n = _blocks(emb, t, 3)
        loss = _mean_loss_node(a, p, n, spec.gamma)
        vals = emb.value
        diag["h_tilde"] = float(hardness_values(vals[:t], vals[t:2 * t], vals[2 * t:]).mean())
        diag["adv_loss"] = float(loss.value)
        return loss, params, diag

    # act: benign anchor, positive and negative pulled toward each other
    r_p, r_n = act_perturb(model, p_rows, n_rows, spec.budget)
    tape = gc.Tape()
    stacked = np.concatenate([a_rows, p_rows + r_p, n_rows + r_n], axis=0)
    emb, params = model.embed_with_params(tape, stacked)
    a, p, n = _blocks(emb, t, 3)
    loss = _mean_loss_node(a, p, n, spec.gamma)
    vals = emb.value
    diag["h_tilde"] = float(hardness_values(vals[:t], vals[t:2 * t], vals[2 * t:]).mean())
    diag["adv_loss"] = float(loss.value)
    return loss, params, diag


def detect_collapse(embeddings: np.ndarray) -> float:
    """Mean cosine similarity over all unordered pairs of rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] < 2:
        raise ValueError("collapse detection needs at least 2 embeddings")
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("collapse detection: zero-norm embedding")
    unit = emb / norms
    sims = unit @ unit.T
    b = emb.shape[0]
    return float((sims.sum() - np.trace(sims)) / (b * (b - 1)))


class CollapseMonitor:
    """Flags collapse once mean pairwise similarity exceeds the threshold
    for two consecutive epochs."""

    def __init__(self, threshold: float = COLLAPSE_THRESHOLD,
                 patience: int = COLLAPSE_PATIENCE):
        self.threshold = threshold
        self.patience = patience
        self.history: list[float] = []
        self.collapsed = False

    def update(self, similarity: float) -> bool:
        self.history.append(float(similarity))
        if len(self.history) >= self.patience and all(
                s > self.threshold for s in self.history[-self.patience:]):
            self.collapsed = True
        return self.collapsed
