import numpy as np
import pytest

from tripletlab import gradcore as gc
from tripletlab.defenses import (CollapseMonitor, DefenseSpec, act_perturb,
                                 detect_collapse, training_loss)
from tripletlab.encoder import Encoder
from tripletlab.hm import LGA, LossTracker, parse_destination
from tripletlab.pgd import PerturbationBudget
from tripletlab.samplers import LabeledBatch

GAMMA = 0.2


def _batch(rng, classes=3, per_class=4, dim=6):
    labels = np.repeat(np.arange(classes), per_class)
    inputs = rng.uniform(0.1, 0.9, size=(classes * per_class, dim))
    return LabeledBatch(inputs, labels)


def _spec(kind, **kw):
    defaults = dict(source="random", gamma=GAMMA, lam=0.5,
                    budget=PerturbationBudget(eta=3))
    defaults.update(kw)
    if kind in ("hm", "hm+ics") and "destination" not in defaults:
        defaults["destination"] = LGA(GAMMA)
    return DefenseSpec(kind=kind, **defaults)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown defense"):
        DefenseSpec(kind="shield")
    with pytest.raises(ValueError, match="destination"):
        DefenseSpec(kind="hm")
    with pytest.raises(ValueError, match=">= 0"):
        DefenseSpec(kind="none", lam=-1.0)
    assert _spec("hm").backward_passes_per_step() == 4
    assert _spec("none").backward_passes_per_step() == 1


@pytest.mark.parametrize("kind", ["none", "hm", "hm+ics", "est", "act", "minmax"])
def test_every_defense_produces_finite_loss_and_costs_eta_plus_one(kind):
    rng = np.random.default_rng(1)
    model = Encoder(6, (12,), 8, seed=0)
    batch = _batch(rng)
    spec = _spec(kind)
    tracker = LossTracker(GAMMA)
    before = gc.backward_calls()
    loss, params, diag = training_loss(model, batch, spec, np.random.default_rng(2), tracker)
    gc.backward(loss)
    assert gc.backward_calls() - before == spec.backward_passes_per_step()
    assert np.isfinite(loss.value)
    assert len(params) == len(model.parameters())
    assert np.isfinite(diag["benign_loss"])


def test_ics_with_zero_weight_equals_plain_hm_loss():
    rng = np.random.default_rng(3)
    model = Encoder(6, (12,), 8, seed=1)
    batch = _batch(rng)
    tracker = LossTracker(GAMMA)
    loss_hm, _, diag_hm = training_loss(model, batch, _spec("hm"),
                                        np.random.default_rng(7), tracker)
    loss_ics, _, diag_ics = training_loss(model, batch, _spec("hm+ics", lam=0.0),
                                          np.random.default_rng(7), LossTracker(GAMMA))
    assert float(diag_ics["ics_term"]) == 0.0
    assert float(loss_ics.value) == pytest.approx(float(loss_hm.value), abs=1e-15)


def test_ics_diagnostics_sum_exactly_to_total():
    rng = np.random.default_rng(4)
    model = Encoder(6, (12,), 8, seed=2)
    batch = _batch(rng)
    loss, _, diag = training_loss(model, batch, _spec("hm+ics"),
                                  np.random.default_rng(8), LossTracker(GAMMA))
    assert diag["hm_term"] + diag["ics_term"] == float(loss.value)


def test_ics_degenerate_zero_perturbation_contributes_nothing():
    # destination = source hardness -> r_a is exactly zero -> ICS term is
    # max(0, d(a,a) - d(a,p)) = 0
    rng = np.random.default_rng(5)
    model = Encoder(6, (12,), 8, seed=3)
    batch = _batch(rng)
    spec = _spec("hm+ics", destination=parse_destination("source", GAMMA))
    loss, _, diag = training_loss(model, batch, spec, np.random.default_rng(9),
                                  LossTracker(GAMMA))
    assert diag["ics_term"] == 0.0


def test_collapsed_model_loss_is_margin():
    # all embeddings identical -> hardness 0 -> loss = gamma per triplet
    model = Encoder(6, (), 8, seed=4)
    model.weights[0] = np.zeros((6, 8))
    model.weights[0][:, 0] = 0.0
    model.biases[0] = np.zeros(8)
    model.biases[0][0] = 1.0  # constant embedding e1 regardless of input
    rng = np.random.default_rng(6)
    batch = _batch(rng)
    loss, _, diag = training_loss(model, batch, _spec("none"),
                                  np.random.default_rng(10), LossTracker(GAMMA))
    assert float(loss.value) == pytest.approx(GAMMA)


def test_act_never_perturbs_the_anchor():
    rng = np.random.default_rng(7)
    model = Encoder(6, (12,), 8, seed=5)
    batch = _batch(rng)
    spec = _spec("act")
    tracker = LossTracker(GAMMA)
    # structural check: the attacked stack contains only positives and
    # negatives, and the returned perturbations match their shapes
    p_rows = batch.inputs[:4]
    n_rows = batch.inputs[4:8]
    r_p, r_n = act_perturb(model, p_rows, n_rows, spec.budget)
    assert r_p.shape == p_rows.shape and r_n.shape == n_rows.shape
    loss, _, _ = training_loss(model, batch, spec, np.random.default_rng(11), tracker)
    assert np.isfinite(loss.value)


def test_act_pulls_positive_and_negative_together():
    rng = np.random.default_rng(8)
    model = Encoder(6, (12,), 8, seed=6)
    p_rows = rng.uniform(0.1, 0.9, size=(6, 6))
    n_rows = rng.uniform(0.1, 0.9, size=(6, 6))
    budget = PerturbationBudget(eta=8)
    r_p, r_n = act_perturb(model, p_rows, n_rows, budget)
    before = np.linalg.norm(model.embed_array(p_rows) - model.embed_array(n_rows), axis=1)
    after = np.linalg.norm(model.embed_array(p_rows + r_p) - model.embed_array(n_rows + r_n), axis=1)
    assert after.mean() < before.mean()


def test_est_diagnostics_track_perturbed_hardness():
    rng = np.random.default_rng(9)
    model = Encoder(6, (12,), 8, seed=7)
    batch = _batch(rng)
    loss, _, diag = training_loss(model, batch, _spec("est"),
                                  np.random.default_rng(12), LossTracker(GAMMA))
    assert diag["h_tilde"] is not None and np.isfinite(diag["h_tilde"])
    assert diag["h_dest"] is None


def test_detect_collapse_identical_and_orthonormal():
    same = np.tile(np.array([[0.6, 0.8]]), (5, 1))
    assert detect_collapse(same) == pytest.approx(1.0)
    ortho = np.eye(4)
    assert detect_collapse(ortho) == pytest.approx(0.0)
    with pytest.raises(ValueError, match="at least 2"):
        detect_collapse(np.ones((1, 3)))


def test_trained_model_is_not_collapsed(trained_model, desk_dataset):
    emb = trained_model.embed_array(desk_dataset.eval_corpus().gallery_x)
    assert detect_collapse(emb) < 0.9


def test_collapse_monitor_needs_two_consecutive_epochs():
    monitor = CollapseMonitor()
    assert not monitor.update(0.995)
    assert not monitor.update(0.5)
    assert not monitor.update(0.995)
    assert monitor.update(0.999)
    assert monitor.collapsed
