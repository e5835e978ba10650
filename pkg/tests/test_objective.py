"""Utility surrogate, its gradient, and the exact binary objective."""

import numpy as np
import pytest

from metaho import (Decision, SinrTensor, RateTensor, compute_rates,
                    surrogate_utility, surrogate_gradient,
                    surrogate_value_and_gradient, exact_utility,
                    max_approx_gap_bound, FeasibleSpec)

from conftest import static_net, dynamic_net, interior_feasible, random_binary


def rates_of(values):
    """RateTensor for a single slot of (I, J) rate values."""
    c = np.atleast_2d(np.asarray(values, dtype=float))[None]
    lifted = np.where(c > 0, np.log(np.maximum(c, 1e-300)), 0.0)
    return RateTensor(values=c, log_lifted=lifted)


def zstack(x, y):
    return np.stack([np.atleast_2d(np.asarray(x, dtype=float)),
                     np.atleast_2d(np.asarray(y, dtype=float))])


def test_sinr_tensor_validation():
    good = np.ones((2, 3, 4))
    SinrTensor(good)
    with pytest.raises(ValueError):
        SinrTensor(np.ones((3, 4)))
    with pytest.raises(ValueError):
        SinrTensor(-good)
    bad = good.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        SinrTensor(bad)


def test_compute_rates_lifts_only_dead_cells():
    net = static_net(1, 0, num_cells=2, bandwidth=2.0)
    sinr = SinrTensor(np.array([[[np.e - 1.0, 0.0]]]))
    rates = compute_rates(sinr, net)
    np.testing.assert_allclose(rates.values[0, 0], [2.0, 0.0])
    # live cell keeps its log; dead cell is lifted to zero, not -inf
    np.testing.assert_allclose(rates.log_lifted[0, 0], [np.log(2.0), 0.0])
    assert rates.horizon == 1


def test_tho_unit_rate_example():
    # one traditionally served user, rate e, load 1: utility exactly 1
    rates = rates_of([[np.e]])
    z = zstack([[1.0]], [[0.0]])
    assert surrogate_utility(z, rates, 0, alpha=20.0) == pytest.approx(1.0)
    d = Decision(z[0], z[1], binary=True)
    assert exact_utility(d, rates, 0) == pytest.approx(1.0)


@pytest.mark.parametrize("alpha", [1.0, 10.0, 100.0])
def test_single_preparation_equals_log_rate(alpha):
    rates = rates_of([[np.exp(1.7)]])
    z = zstack([[0.0]], [[1.0]])
    assert surrogate_utility(z, rates, 0, alpha) == pytest.approx(
        1.7, abs=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 10.0, 100.0])
def test_two_equal_preparations_add_log2_over_alpha(alpha):
    c = np.exp(0.9)
    rates = rates_of([[c, c]])
    z = zstack([[0.0, 0.0]], [[1.0, 1.0]])
    # loads (1, 1) carry zero entropy, so the value is the soft-max alone
    assert surrogate_utility(z, rates, 0, alpha) == pytest.approx(
        0.9 + np.log(2.0) / alpha, abs=1e-12)


def test_exact_utility_hand_values():
    # user prepares both cells, rates (e^2, e): the better one serves it
    rates = rates_of([[np.e ** 2, np.e]])
    d = Decision([[0.0, 0.0]], [[1.0, 1.0]], binary=True)
    assert exact_utility(d, rates, 0) == pytest.approx(2.0, abs=1e-12)

    # two users prepare the same cell: per-user rate stays, entropy doubles
    rates = rates_of([[np.e ** 2, 1.0], [np.e, 1.0]])
    d = Decision([[0.0, 0.0], [0.0, 0.0]],
                 [[1.0, 0.0], [1.0, 0.0]], binary=True)
    assert exact_utility(d, rates, 0) == pytest.approx(
        3.0 - 2.0 * np.log(2.0), abs=1e-12)

    # a dead serving cell contributes nothing but still counts as load
    rates = rates_of([[0.0]])
    d = Decision([[1.0]], [[0.0]], binary=True)
    assert exact_utility(d, rates, 0) == pytest.approx(0.0, abs=1e-12)


def test_exact_utility_requires_binary():
    rates = rates_of([[np.e]])
    with pytest.raises(ValueError):
        exact_utility(Decision([[0.5]], [[0.5]]), rates, 0)


def test_surrogate_nonincreasing_in_alpha():
    rates = rates_of([[np.e ** 2, np.e, 2.0]])
    z = zstack([[0.0] * 3], [[1.0, 1.0, 1.0]])
    vals = [surrogate_utility(z, rates, 0, a) for a in (1.0, 5.0, 20.0, 100.0)]
    assert np.all(np.diff(vals) < 0)
    d = Decision(z[0], z[1], binary=True)
    assert vals[-1] >= exact_utility(d, rates, 0)


def test_soft_max_gap_bound_random_binary():
    net = static_net(0, 3, num_cells=4, max_preparations=3)
    spec = FeasibleSpec.from_config(net)
    rng = np.random.default_rng(7)
    for _ in range(30):
        z = random_binary(spec, rng)
        c = rng.uniform(0.5, 40.0, size=(3, 4))
        rates = rates_of(c)
        d = Decision(z[0], z[1], binary=True)
        for alpha in (1.0, 10.0, 100.0):
            gap = (surrogate_utility(z, rates, 0, alpha)
                   - exact_utility(d, rates, 0))
            bound = max_approx_gap_bound(z[1], alpha)
            assert -1e-12 <= gap <= bound + 1e-12
            assert bound <= 3 * np.log(4.0) / alpha + 1e-12


def test_concavity_along_random_segments():
    rng = np.random.default_rng(11)
    for net in (static_net(2, 2, num_cells=3, max_preparations=2),
                dynamic_net(3, 4, max_preparations=2)):
        spec = FeasibleSpec.from_config(net)
        c = rng.uniform(0.5, 30.0, size=(net.num_users, net.num_cells))
        rates = rates_of(c)
        for _ in range(10):
            z1 = interior_feasible(spec, rng)
            z2 = interior_feasible(spec, rng)
            v1 = surrogate_utility(z1, rates, 0, net.alpha)
            v2 = surrogate_utility(z2, rates, 0, net.alpha)
            for lam in (0.3, 0.5, 0.7):
                mid = surrogate_utility(lam * z1 + (1 - lam) * z2,
                                        rates, 0, net.alpha)
                assert mid >= lam * v1 + (1 - lam) * v2 - 1e-9


def fd_gradient(z, rates, slot, alpha, h=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp = z.copy()
        zp[idx] += h
        zm = z.copy()
        zm[idx] -= h
        g[idx] = (surrogate_utility(zp, rates, slot, alpha)
                  - surrogate_utility(zm, rates, slot, alpha)) / (2 * h)
    return g


def test_gradient_matches_finite_differences():
    # interior of the smooth domain: every coordinate strictly positive, so
    # no preparation row sits on the empty-row convention kink
    rng = np.random.default_rng(5)
    for users, cells in ((3, 3), (2, 4)):
        c = rng.uniform(0.5, 30.0, size=(users, cells))
        rates = rates_of(c)
        for alpha in (1.0, 20.0):
            for _ in range(5):
                z = rng.uniform(0.05, 0.95, size=(2, users, cells))
                g = surrogate_gradient(z, rates, 0, alpha)
                fd = fd_gradient(z, rates, 0, alpha)
                err = np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g)))
                assert err < 1e-5


def test_value_and_gradient_agree_with_parts():
    net = dynamic_net(3, 4, max_preparations=3)
    spec = FeasibleSpec.from_config(net)
    rng = np.random.default_rng(9)
    rates = rates_of(rng.uniform(0.5, 30.0, size=(3, 4)))
    z = interior_feasible(spec, rng)
    v, g = surrogate_value_and_gradient(z, rates, 0, net.alpha)
    assert v == pytest.approx(surrogate_utility(z, rates, 0, net.alpha))
    np.testing.assert_allclose(g, surrogate_gradient(z, rates, 0, net.alpha))


def test_gradient_balanced_association_is_stationary():
    # equal rates e and loads 1: x gradient is log(c) - log(load) - 1 = 0
    rates = rates_of([[np.e]])
    z = zstack([[1.0]], [[0.0]])
    g = surrogate_gradient(z, rates, 0, alpha=20.0)
    assert abs(g[0, 0, 0]) < 1e-8
