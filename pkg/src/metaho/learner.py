"""Online meta-learning controller.

A bank of projected-gradient-ascent experts, one per candidate step size on
a doubling grid, each climbs the surrogate utility.  A Hedge meta-learner
re-weights the experts from linearized losses and plays their convex
mixture, which is rounded to an implementable binary decision.  Step sizes
and the Hedge rate come from closed-form bounds on the feasible set's
diameter and the gradient, measured in the switching-cost norm, so the
controller moves cautiously when changing decisions is expensive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .feasible import (FeasibleSpec, anchor_point, draw_coupling, project,
                       round_dynamic, round_static)
from .model import STATIC, WEIGHT_FLOOR

# Largest per-entry magnitude of an expert move; the projection's sweep
# count grows with the input scale, and by 1e4 it can exhaust its budget.
# Any cap well above 1 keeps the snap-to-the-revealed-cell behavior.
MOVE_CAP = 1e2


@dataclass(frozen=True)
class LearnerBounds:
    """Closed-form problem constants that tune the learner.

    Diameters bound how far two feasible decisions can be apart (Euclidean
    and switching-cost norms); gradient bounds cap the surrogate gradient in
    the matching dual pairings; entry_bound caps single gradient entries.
    """

    decision_diameter: float
    cost_diameter: float
    cost_diameter_dual: float
    grad_bound: float
    grad_cost_bound: float
    entry_bound: float


def compute_bounds(config, a_max, b_max, rate_ceiling):
    """Bounds for a given cost ceiling pair and achievable-rate ceiling.

    In static mode the two sums split over the user partition; dynamic mode
    counts every user on both sides, a conservative cover of the larger
    decision space.
    """
    if not 0 < b_max < a_max <= 1.0:
        raise ValueError("need 0 < b_max < a_max <= 1")
    if rate_ceiling <= 0:
        raise ValueError("rate_ceiling must be positive")
    total = config.num_users
    cells = config.num_cells
    if config.mode == STATIC:
        n_tho = len(config.tho_users)
        n_cho = len(config.cho_users)
    else:
        n_tho = n_cho = total

    entry = max(math.log(rate_ceiling) - 1.0, math.log(total) + 1.0)
    d = math.sqrt(2.0 * n_tho) + math.sqrt(n_cho * (cells - 1))
    d_c = math.sqrt(2.0 * n_tho * a_max) + math.sqrt(n_cho * (cells - 1) * b_max)
    d_c_dual = math.sqrt(2.0 * n_tho / a_max) + math.sqrt(n_cho * (cells - 1) / b_max)
    g = entry * math.sqrt((n_tho + n_cho) * cells)
    g_c = entry * math.sqrt((n_tho * a_max + n_cho * b_max) * cells)
    return LearnerBounds(
        decision_diameter=d,
        cost_diameter=d_c,
        cost_diameter_dual=d_c_dual,
        grad_bound=g,
        grad_cost_bound=g_c,
        entry_bound=entry,
    )


def num_experts(horizon):
    """Size of the doubling step grid: ceil(log2 sqrt(1 + 2T)) + 1."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return math.ceil(math.log2(math.sqrt(1.0 + 2.0 * horizon))) + 1


def expert_step_sizes(bounds, horizon, ablate_switching_costs=False):
    """Doubling grid of gradient-ascent step sizes, smallest first."""
    k = num_experts(horizon)
    if ablate_switching_costs:
        base = math.sqrt(bounds.decision_diameter ** 2
                         / (horizon * bounds.grad_bound ** 2))
    else:
        base = math.sqrt(bounds.cost_diameter ** 2
                         / (horizon * (bounds.grad_bound ** 2
                                       + 2.0 * bounds.grad_cost_bound)))
    return base * 2.0 ** np.arange(k)


def hedge_rate(bounds, horizon, ablate_switching_costs=False):
    """Meta-learner rate 1/sqrt(T nu) with its loss-scale constant nu."""
    d = bounds.decision_diameter
    g = bounds.grad_bound
    d_c = d if ablate_switching_costs else bounds.cost_diameter
    nu = (d_c + 0.125) * (g * d + 2.0 * d_c) ** 2
    return 1.0 / math.sqrt(horizon * nu), nu


def initial_weights(k):
    """Prior favoring small step sizes: w_k = (1 + 1/K) / (k (k + 1))."""
    ks = np.arange(1, k + 1, dtype=float)
    return (1.0 + 1.0 / k) / (ks * (ks + 1.0))


@dataclass
class Proposal:
    """One slot's output: the experts' mixture and its rounded realization."""

    mixture: np.ndarray
    rounding: object

    @property
    def implemented(self):
        return self.rounding.z


class MetaLearner:
    """Expert bank plus Hedge mixing; one propose/observe pair per slot.

    With `ablate_switching_costs` the step sizes and Hedge rate are derived
    as if decision changes were free, and expert movement is dropped from
    the losses, so the weights chase utility alignment alone.
    """

    def __init__(self, config, bounds, ablate_switching_costs=False):
        self.config = config
        self.bounds = bounds
        self.ablated = bool(ablate_switching_costs)
        self.spec = FeasibleSpec.from_config(config)
        self.step_sizes = expert_step_sizes(bounds, config.horizon,
                                            self.ablated)
        self.eta, self.nu = hedge_rate(bounds, config.horizon, self.ablated)
        k = self.step_sizes.shape[0]
        self.weights = initial_weights(k)
        self.anchor = anchor_point(self.spec)
        self.experts = np.tile(self.anchor, (k, 1, 1, 1))
        self.prev_experts = self.experts.copy()
        self._coupling = None
        self.slots_seen = 0

    @property
    def num_experts(self):
        return self.experts.shape[0]

    def mixture(self):
        """Convex combination of the expert decisions (feasible by convexity)."""
        return np.einsum("k,kaij->aij", self.weights, self.experts)

    def propose(self, rng):
        """Mix the experts and round the mixture to a binary decision.

        Rounding reuses one set of uniforms drawn at the first slot (common
        random numbers), so the sampled decision only changes where the
        mixture's marginals drift across a threshold.  Per-slot expectations
        are untouched; the coupling merely removes resampling churn between
        consecutive slots.
        """
        z_m = self.mixture()
        if self._coupling is None:
            self._coupling = draw_coupling(self.spec, rng)
        if self.spec.mode == STATIC:
            rounding = round_static(z_m, self.spec, rng,
                                    coupling=self._coupling)
        else:
            rounding = round_dynamic(z_m, self.spec, rng,
                                     coupling=self._coupling)
        return Proposal(mixture=z_m, rounding=rounding)

    def observe(self, grad, z_impl, z_prev, costs, slot):
        """Update weights and experts from the slot-t gradient.

        `grad` is the surrogate gradient at the implemented decision
        `z_impl`; `z_prev` is the previously implemented decision (kept in
        the signature for symmetry with the ledger's bookkeeping).  Returns
        the per-expert losses (for instrumentation).

        Each expert's loss pairs the linearized utility shortfall of its
        proposal with the switching cost of that expert's own last move.
        The movement term is what lets the weights arbitrate the real
        trade-off: an expert that chases every fluctuation books its
        gradient alignment but also its switching bill, while a placid
        expert books neither, and whichever habit nets out better for the
        current regime accumulates weight.  (The loss-range constant behind
        the Hedge rate budgets for exactly these two parts.)  With
        switching costs ablated the movement term is dropped.

        The two update channels read the gradient differently.  The expert
        moves use it raw: its soft-max partials spike by orders of magnitude
        whenever the implemented prepared set misses a clearly better cell,
        and the spike snaps every expert onto the revealed cell at the next
        projection, which is what lets the bank track abrupt rate changes.
        The losses saturate each entry at the bound the Hedge rate was tuned
        for; past that point a spike's magnitude only reflects how far the
        soft-max overshoots, and letting it through would hand the round to
        whichever expert kept dust on the spiked cell instead of measuring
        alignment at the decision scale.  Underflowed weights are restored
        to a tiny floor so no expert is excluded permanently.
        """
        m = self.bounds.entry_bound
        loss_grad = np.clip(grad, -m, m)
        dots = np.einsum("kaij,aij->k", self.experts, loss_grad)
        base = float(np.sum(loss_grad * z_impl))
        if self.ablated:
            movement = 0.0
        else:
            d = self.experts - self.prev_experts
            w = costs.weights_at(slot)
            movement = np.sqrt(np.einsum("kaij,aij,kaij->k", d, w, d))
        losses = base - dots + movement

        shifted = losses - losses.min()
        self.weights = self.weights * np.exp(-self.eta * shifted)
        self.weights = np.maximum(self.weights / self.weights.sum(),
                                  WEIGHT_FLOOR)
        self.weights = self.weights / self.weights.sum()

        self.prev_experts = self.experts.copy()
        for k in range(self.num_experts):
            move = self.step_sizes[k] * grad
            # The projection of z + t*u onto a bounded polyhedron is
            # constant in t once t is large enough, but its running
            # corrections lose the tolerance digits when entries exceed
            # double-precision comfort; rescale oversized rows (direction
            # and within-row ratios intact) to a magnitude the solver can
            # carry.  The rescale is per user row so one user's sharp
            # gradient cannot flatten everyone else's step.
            peak = np.abs(move).max(axis=-1, keepdims=True)
            move *= np.minimum(1.0, MOVE_CAP / np.maximum(peak, MOVE_CAP))
            self.experts[k], _ = project(self.experts[k] + move, self.spec)
        self.slots_seen += 1
        return losses
