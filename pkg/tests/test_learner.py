"""Expert bank, Hedge weighting, and the tuning-constant formulas."""

import math

import numpy as np
import pytest

from metaho import (SwitchingCosts, MetaLearner, LearnerBounds, compute_bounds,
                    num_experts, expert_step_sizes, hedge_rate,
                    initial_weights, RateTensor, surrogate_gradient, validate)
from metaho.model import WEIGHT_FLOOR

from conftest import static_net, dynamic_net, assert_feasible


def bounds_for(net, a_max=1.0, b_max=0.2, ceiling=math.exp(5.0)):
    return compute_bounds(net, a_max, b_max, ceiling)


def test_num_experts_grid():
    assert num_experts(1000) == 7
    assert num_experts(1) == 2
    with pytest.raises(ValueError):
        num_experts(0)


def test_bounds_hand_values():
    net = static_net(2, 1, num_cells=3, max_preparations=2)
    b = bounds_for(net)   # ceiling e^5 makes entry_bound = 5 - 1 = 4
    assert b.entry_bound == pytest.approx(4.0)
    assert b.decision_diameter == pytest.approx(2.0 + math.sqrt(2.0))
    assert b.cost_diameter == pytest.approx(2.0 + math.sqrt(0.4))
    assert b.cost_diameter_dual == pytest.approx(2.0 + math.sqrt(10.0))
    assert b.grad_bound == pytest.approx(12.0)
    assert b.grad_cost_bound == pytest.approx(4.0 * math.sqrt(6.6))

    # a low rate ceiling hands the entry bound to the load term
    b = bounds_for(net, ceiling=math.exp(0.5))
    assert b.entry_bound == pytest.approx(math.log(3.0) + 1.0)

    # dynamic mode counts every user on both sides
    dyn = dynamic_net(2, 2)
    b = bounds_for(dyn)
    assert b.decision_diameter == pytest.approx(2.0 + math.sqrt(2.0))
    assert b.grad_bound == pytest.approx(4.0 * math.sqrt(8.0))


def test_bounds_validation():
    net = static_net(1, 1, num_cells=2)
    with pytest.raises(ValueError):
        compute_bounds(net, 0.2, 0.2, 10.0)
    with pytest.raises(ValueError):
        compute_bounds(net, 1.0, 0.2, 0.0)


def test_step_sizes_double_exactly():
    net = static_net(1, 1, num_cells=3, horizon=1000)
    b = bounds_for(net)
    steps = expert_step_sizes(b, 1000)
    assert steps.shape == (7,)
    np.testing.assert_allclose(steps[1:] / steps[:-1], 2.0, rtol=1e-12)
    base = math.sqrt(b.cost_diameter ** 2
                     / (1000 * (b.grad_bound ** 2 + 2 * b.grad_cost_bound)))
    assert steps[0] == pytest.approx(base)

    ablated = expert_step_sizes(b, 1000, ablate_switching_costs=True)
    assert ablated[0] == pytest.approx(
        math.sqrt(b.decision_diameter ** 2 / (1000 * b.grad_bound ** 2)))
    assert ablated[0] > steps[0]   # free switching permits larger steps


def test_hedge_rate_formula():
    net = static_net(1, 1, num_cells=3, horizon=500)
    b = bounds_for(net)
    eta, nu = hedge_rate(b, 500)
    expected_nu = (b.cost_diameter + 0.125) * (
        b.grad_bound * b.decision_diameter + 2 * b.cost_diameter) ** 2
    assert nu == pytest.approx(expected_nu)
    assert eta == pytest.approx(1.0 / math.sqrt(500 * expected_nu))
    eta_a, nu_a = hedge_rate(b, 500, ablate_switching_costs=True)
    assert nu_a == pytest.approx((b.decision_diameter + 0.125) * (
        b.grad_bound * b.decision_diameter + 2 * b.decision_diameter) ** 2)


def test_initial_weights_prior():
    w = initial_weights(7)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(w) < 0)            # small steps start favored
    assert w[0] == pytest.approx((1 + 1 / 7) / 2)


def make_learner(net, ablate=False):
    b = bounds_for(net)
    return MetaLearner(net, b, ablate_switching_costs=ablate)


def run_slots(learner, costs, rng, slots):
    z_prev = learner.anchor
    for t in range(slots):
        prop = learner.propose(rng)
        grad = rng.standard_normal(prop.mixture.shape)
        learner.observe(grad, prop.implemented, z_prev, costs, t)
        z_prev = prop.implemented
    return z_prev


def test_weights_stay_on_simplex():
    net = static_net(2, 2, num_cells=3, horizon=64, max_preparations=2)
    learner = make_learner(net)
    costs = SwitchingCosts.constant(0.5, 0.1, 4, 3)
    run_slots(learner, costs, np.random.default_rng(40), 30)
    assert learner.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(learner.weights >= WEIGHT_FLOOR * 0.5)


def test_experts_stay_feasible():
    for net in (static_net(2, 2, num_cells=3, horizon=32, max_preparations=2),
                dynamic_net(3, 3, horizon=32, max_preparations=2)):
        learner = make_learner(net)
        costs = SwitchingCosts.constant(0.5, 0.1, net.num_users, net.num_cells)
        rng = np.random.default_rng(41)
        z_prev = learner.anchor
        for t in range(10):
            prop = learner.propose(rng)
            assert_feasible(prop.mixture, learner.spec)
            assert_feasible(prop.implemented, learner.spec, binary=True)
            grad = 3.0 * rng.standard_normal(prop.mixture.shape)
            learner.observe(grad, prop.implemented, z_prev, costs, t)
            for k in range(learner.num_experts):
                assert_feasible(learner.experts[k], learner.spec)
            z_prev = prop.implemented


def test_hedge_update_matches_shifted_formula():
    net = static_net(1, 2, num_cells=3, horizon=100, max_preparations=2)
    learner = make_learner(net)
    costs = SwitchingCosts.constant(0.5, 0.1, 3, 3)
    rng = np.random.default_rng(42)
    prop = learner.propose(rng)
    grad = rng.standard_normal(prop.mixture.shape)
    before = learner.weights.copy()
    losses = learner.observe(grad, prop.implemented, learner.anchor, costs, 0)

    def apply(w, ell):
        w = w * np.exp(-learner.eta * (ell - ell.min()))
        w = np.maximum(w / w.sum(), WEIGHT_FLOOR)
        return w / w.sum()

    np.testing.assert_allclose(learner.weights, apply(before, losses),
                               rtol=1e-12)
    # uniform loss shifts cannot move the weights
    np.testing.assert_allclose(apply(before, losses),
                               apply(before, losses + 7.25), rtol=1e-12)


def test_zero_gradient_is_a_fixed_point():
    net = dynamic_net(2, 3, horizon=50, max_preparations=2)
    learner = make_learner(net)
    costs = SwitchingCosts.constant(0.5, 0.1, 2, 3)
    rng = np.random.default_rng(43)
    first = learner.propose(rng)
    second = learner.propose(rng)   # same coupling, same mixture
    np.testing.assert_array_equal(first.implemented, second.implemented)

    w0 = learner.weights.copy()
    e0 = learner.experts.copy()
    learner.observe(np.zeros_like(first.mixture), first.implemented,
                    learner.anchor, costs, 0)
    np.testing.assert_allclose(learner.weights, w0, rtol=1e-12)
    np.testing.assert_allclose(learner.experts, e0, atol=1e-9)
    third = learner.propose(rng)
    np.testing.assert_array_equal(first.implemented, third.implemented)


def test_ablated_losses_drop_movement():
    net = static_net(1, 1, num_cells=3, horizon=100, max_preparations=2)
    costs = SwitchingCosts.constant(0.5, 0.1, 2, 3)
    full = make_learner(net)
    ablated = make_learner(net, ablate=True)
    rng = np.random.default_rng(44)
    g1 = rng.standard_normal((2, 2, 3))
    g2 = rng.standard_normal((2, 2, 3))
    for learner in (full, ablated):
        prop = learner.propose(np.random.default_rng(7))
        learner.observe(g1, prop.implemented, learner.anchor, costs, 0)

    # second round: full losses carry each expert's own movement charge
    for learner, expect_movement in ((full, True), (ablated, False)):
        m = learner.bounds.entry_bound
        lg = np.clip(g2, -m, m)
        prop = learner.propose(np.random.default_rng(7))
        experts = learner.experts.copy()
        prev = learner.prev_experts.copy()
        losses = learner.observe(g2, prop.implemented, prop.implemented,
                                 costs, 1)
        linear = (lg * prop.implemented).sum() - np.einsum(
            "kaij,aij->k", experts, lg)
        if expect_movement:
            w = costs.weights_at(1)
            d = experts - prev
            move = np.sqrt(np.einsum("kaij,aij,kaij->k", d, w, d))
            assert move.max() > 1e-6
            np.testing.assert_allclose(losses, linear + move, rtol=1e-10)
        else:
            np.testing.assert_allclose(losses, linear, rtol=1e-10)


def test_spiked_gradient_snaps_all_experts():
    # preparing the wrong cell: the revealed best cell's soft-max partial
    # explodes, and after one update every expert prepares that cell
    net = static_net(0, 1, num_cells=3, horizon=200, max_preparations=1)
    learner = make_learner(net)
    costs = SwitchingCosts.constant(0.5, 0.1, 1, 3)
    c = np.array([[np.e, 1.5, np.e ** 3]])
    rates = RateTensor(values=c[None], log_lifted=np.log(c)[None])
    z_impl = np.zeros((2, 1, 3))
    z_impl[1, 0, 0] = 1.0          # implemented: prepared cell 0 only
    grad = surrogate_gradient(z_impl, rates, 0, net.alpha)
    assert grad[1, 0, 2] > 1e6     # the spike this test is about
    learner.observe(grad, z_impl, learner.anchor, costs, 0)
    for k in range(learner.num_experts):
        assert np.argmax(learner.experts[k][1, 0]) == 2
        assert learner.experts[k][1, 0, 2] > 0.99


def test_move_rescale_is_per_user_row():
    # one user's oversized gradient row must not shrink another's step
    net = static_net(0, 2, num_cells=2, horizon=100, max_preparations=2)
    a = make_learner(net)
    b = make_learner(net)
    costs = SwitchingCosts.constant(0.5, 0.1, 2, 2)
    z_impl = np.zeros((2, 2, 2))
    z_impl[1, :, 0] = 1.0
    spiked = np.zeros((2, 2, 2))
    spiked[1, 0] = [1e12, 0.0]     # user 0 spikes
    spiked[1, 1] = [0.4, -0.2]     # user 1 sees an ordinary gradient
    calm = spiked.copy()
    calm[1, 0] = 0.0
    a.observe(spiked, z_impl, a.anchor, costs, 0)
    b.observe(calm, z_impl, b.anchor, costs, 0)
    np.testing.assert_allclose(a.experts[:, :, 1, :], b.experts[:, :, 1, :],
                               atol=1e-12)
    assert a.experts[0][1, 0, 0] > b.experts[0][1, 0, 0]
