import numpy as np
import pytest

from tripletlab import gradcore as gc
from tripletlab import hm
from tripletlab.defenses import _source_hardness_exact
from tripletlab.encoder import Encoder
from tripletlab.pgd import PerturbationBudget

GAMMA = 0.2


def _ctx(lbar, count=4, source=None, partner=None):
    src = source if source is not None else np.zeros(count)
    return hm.DestinationContext(lbar, src, partner)


def test_objective_single_residual():
    tape = gc.Tape()
    h_tilde = tape.leaf(np.array([-0.2]))
    obj = hm.hm_objective(h_tilde, np.array([0.0]))
    assert float(obj.value) == pytest.approx(0.04)


def test_objective_truncates_when_past_destination():
    tape = gc.Tape()
    h_tilde = tape.leaf(np.array([0.5]))
    obj = hm.hm_objective(h_tilde, np.array([0.0]))
    assert float(obj.value) == 0.0
    gc.backward(obj)
    assert np.array_equal(h_tilde.grad, [0.0])


def test_objective_vector_form_sums_squared_residuals():
    tape = gc.Tape()
    h_tilde = tape.leaf(np.array([0.1, -0.1]))
    obj = hm.hm_objective(h_tilde, np.array([0.2, 0.2]))
    assert float(obj.value) == pytest.approx(0.01 + 0.09)


def test_lga_endpoints():
    dest = hm.LGA(GAMMA)
    assert hm.destination_value(dest, _ctx(1.0))[0] == pytest.approx(-GAMMA)
    assert hm.destination_value(dest, _ctx(0.0))[0] == pytest.approx(0.0)


def test_lga_monotone_non_increasing_in_normalized_loss():
    dest = hm.LGA(GAMMA)
    grid = np.linspace(0.0, 1.0, 21)
    values = [hm.destination_value(dest, _ctx(l))[0] for l in grid]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_gradual_boost_identity_at_full_loss():
    base = hm.Constant(-0.1)
    dest = hm.GradualBoost(base, xi=0.1)
    assert hm.destination_value(dest, _ctx(1.0))[0] == pytest.approx(-0.1)
    assert hm.destination_value(dest, _ctx(0.0))[0] == pytest.approx(0.0)


def test_poly_ordering_brackets_linear():
    grid = np.linspace(0.0, 1.0, 31)
    for lbar in grid:
        ctx = _ctx(float(lbar))
        eager = hm.destination_value(hm.Poly(2.0, GAMMA), ctx)[0]
        linear = hm.destination_value(hm.LGA(GAMMA), ctx)[0]
        conservative = hm.destination_value(hm.Poly(0.5, GAMMA), ctx)[0]
        assert eager >= linear >= conservative  # x^2 <= x <= sqrt(x) scaled by -gamma


def test_poly_and_lga_stay_in_margin_band():
    rng = np.random.default_rng(0)
    for lbar in rng.uniform(0, 1, 50):
        for dest in (hm.LGA(GAMMA), hm.Poly(2.0, GAMMA), hm.Poly(0.5, GAMMA)):
            v = hm.destination_value(dest, _ctx(float(lbar)))[0]
            assert -GAMMA <= v <= 0.0


def test_all_destinations_clipped_into_hardness_range():
    dest = hm.GradualBoost(hm.Constant(2.0), xi=0.5)
    assert hm.destination_value(dest, _ctx(0.0))[0] == 2.0


def test_sampler_destination_returns_partner_hardness():
    partner = np.array([0.1, -0.3])
    dest = hm.SamplerHardness("semihard")
    out = hm.destination_value(dest, _ctx(0.5, count=2, partner=partner))
    assert np.array_equal(out, partner)
    with pytest.raises(ValueError, match="partner"):
        hm.destination_value(dest, _ctx(0.5, count=2))


def test_source_destination_returns_source_hardness():
    src = np.array([-0.4, 0.2])
    out = hm.destination_value(hm.SourceHardness(), _ctx(0.3, source=src))
    assert np.array_equal(out, src)


def test_parse_destination_grammar():
    assert isinstance(hm.parse_destination("source", GAMMA), hm.SourceHardness)
    assert hm.parse_destination("lga", GAMMA) == hm.LGA(GAMMA)
    assert hm.parse_destination("sampler:semihard", GAMMA) == hm.SamplerHardness("semihard")
    assert hm.parse_destination("const:-0.1", GAMMA) == hm.Constant(-0.1)
    assert hm.parse_destination("poly:2", GAMMA) == hm.Poly(2.0, GAMMA)
    assert hm.parse_destination("poly:0.5", GAMMA) == hm.Poly(0.5, GAMMA)
    boosted = hm.parse_destination("gboost:sampler:semihard:0.1", GAMMA)
    assert boosted == hm.GradualBoost(hm.SamplerHardness("semihard"), 0.1)
    default_xi = hm.parse_destination("gboost:lga", GAMMA, xi=0.25)
    assert default_xi == hm.GradualBoost(hm.LGA(GAMMA), 0.25)
    numeric_base = hm.parse_destination("gboost:const:0.3", GAMMA, xi=0.1)
    assert numeric_base == hm.GradualBoost(hm.Constant(0.3), 0.1)


def test_parse_destination_rejects_garbage():
    for bad in ("", "warp", "sampler:fancy", "poly:3", "const:5.0"):
        with pytest.raises(ValueError):
            hm.parse_destination(bad, GAMMA)


def test_partner_strategy_recurses_through_boost():
    dest = hm.GradualBoost(hm.SamplerHardness("distance"), 0.1)
    assert hm.partner_strategy(dest) == "distance"
    assert hm.partner_strategy(hm.LGA(GAMMA)) is None


def test_loss_tracker_normalization_and_start():
    tracker = hm.LossTracker(GAMMA)
    assert tracker.normalized() == 1.0  # weakest adversary first
    tracker.update(0.1)
    assert tracker.normalized() == pytest.approx(0.5)
    tracker.update(5.0)
    assert tracker.normalized() == 1.0  # capped at u
    with pytest.raises(ValueError, match="u"):
        hm.LossTracker(0.0)


def test_gather_rows_selects_and_scatters():
    tape = gc.Tape()
    x = tape.leaf(np.arange(12.0).reshape(4, 3))
    picked = hm.gather_rows(x, np.array([2, 0]))
    assert np.array_equal(picked.value, [[6.0, 7.0, 8.0], [0.0, 1.0, 2.0]])
    gc.backward(gc.sum_all(picked))
    assert np.array_equal(x.grad[:, 0], [1.0, 0.0, 1.0, 0.0])


@pytest.fixture(scope="module")
def tiny_setup():
    rng = np.random.default_rng(0)
    model = Encoder(6, (16,), 8, seed=3)
    a = rng.uniform(0.2, 0.8, size=(5, 6))
    p = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    n = rng.uniform(0.2, 0.8, size=(5, 6))
    return model, a, p, n


def test_source_destination_means_zero_perturbation(tiny_setup):
    model, a, p, n = tiny_setup
    h_src = _source_hardness_exact(model, a, p, n)
    budget = PerturbationBudget(eta=6)
    ra, rp, rn = hm.hm_perturb(model, a, p, n, h_src, budget)
    assert np.all(ra == 0.0) and np.all(rp == 0.0) and np.all(rn == 0.0)


def test_max_destination_matches_direct_hardness_ascent(tiny_setup):
    model, a, p, n = tiny_setup
    budget = PerturbationBudget(eta=6)
    via_hm = hm.hm_perturb(model, a, p, n, np.full(len(a), 2.0), budget)
    direct = hm.hardness_ascent_perturb(model, a, p, n, budget)
    for r_hm, r_direct in zip(via_hm, direct):
        assert np.array_equal(r_hm, r_direct)


def test_sign_equivalence_between_objective_and_hardness(tiny_setup):
    from tripletlab.hm import _stacked_triplet_hardness

    model, a, p, n = tiny_setup
    stacked = np.concatenate([a, p, n], axis=0)
    h_dest = np.full(len(a), 2.0)  # residual active for every triplet

    tape1 = gc.Tape()
    leaf1 = tape1.leaf(stacked)
    gc.backward(gc.scale(hm.hm_objective(
        _stacked_triplet_hardness(model, tape1, leaf1, len(a)), h_dest), -1.0))
    tape2 = gc.Tape()
    leaf2 = tape2.leaf(stacked)
    gc.backward(gc.sum_all(_stacked_triplet_hardness(model, tape2, leaf2, len(a))))

    g_obj, g_hard = leaf1.grad, leaf2.grad
    both = (g_obj != 0.0) & (g_hard != 0.0)
    assert both.sum() > 0.5 * both.size
    assert np.array_equal(np.sign(g_obj[both]), np.sign(g_hard[both]))


def test_perturbed_hardness_never_loses_ground(tiny_setup):
    model, a, p, n = tiny_setup
    h_src = _source_hardness_exact(model, a, p, n)
    h_dest = np.clip(h_src + 0.5, -2.0, 2.0)
    budget = PerturbationBudget(eta=8)
    ra, rp, rn = hm.hm_perturb(model, a, p, n, h_dest, budget)
    h_after = _source_hardness_exact(model, a + ra, p + rp, n + rn)
    assert np.all(h_after >= h_src - 1e-6)
