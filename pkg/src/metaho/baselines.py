"""Reference policies: event-triggered threshold rules and clairvoyant oracles.

The threshold rules mirror standards-style handover triggers: an
association follows the strongest cell once it has stayed strongest for a
time-to-trigger streak; preparations follow the top-CL cells under the same
streak discipline.  The oracles bound what any policy could have achieved:
a per-slot solver that sees the current slot's rates, and an exact dynamic
program over the whole horizon for tiny instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .feasible import FeasibleSpec, anchor_point, project
from .model import STATIC, switching_cost
from .objective import surrogate_value_and_gradient, surrogate_utility


class ThresholdPolicy:
    """Streak-triggered handover rules.

    kind="tho": each ruled user associates with its strictly strongest cell
    once that cell has been strictly strongest for `ttt` consecutive slots
    (ttt=1 tracks the argmax greedily).  kind="cho": each ruled user
    prepares the current top-`cl` cells once every member of that set has
    held top-`cl` rank for `ttt` consecutive slots; until then the previous
    prepared set persists.  Slot 0 bootstraps both rules to their current
    best cells.

    In static mode the user partition decides which rule serves which user;
    the off-kind users fall back to the matching single-cell rule with the
    same ttt.  In dynamic mode the kind applies to everyone.
    """

    def __init__(self, config, kind, ttt, cl=1):
        if kind not in ("tho", "cho"):
            raise ValueError(f"unknown kind {kind!r}")
        if ttt < 1:
            raise ValueError("ttt must be >= 1")
        self.config = config
        self.kind = kind
        self.ttt = int(ttt)
        self.cl = int(cl)
        I = config.num_users
        if config.mode == STATIC:
            self.assoc_users = np.nonzero(config.tho_mask)[0]
            self.prep_users = np.nonzero(config.cho_mask)[0]
        elif kind == "tho":
            self.assoc_users = np.arange(I)
            self.prep_users = np.arange(0)
        else:
            self.assoc_users = np.arange(0)
            self.prep_users = np.arange(I)
        self.prep_width = self.cl if kind == "cho" else 1
        if self.prep_users.size:
            cap = int(config.max_preparations[self.prep_users].min())
            if not 1 <= self.prep_width <= cap:
                raise ValueError(f"cl={self.prep_width} exceeds the "
                                 f"preparation cap {cap}")
        self._slot = 0
        self._current = np.zeros(self.assoc_users.size, dtype=int)
        self._cand = np.full(self.assoc_users.size, -1, dtype=int)
        self._streak = np.zeros(self.assoc_users.size, dtype=int)
        self._prepared = np.zeros((self.prep_users.size, config.num_cells),
                                  dtype=bool)
        self._rank_streak = np.zeros_like(self._prepared, dtype=int)

    def decide(self, sinr_slice):
        """Binary decision for the current slot given its (I, J) SINR."""
        cfg = self.config
        z = np.zeros((2, cfg.num_users, cfg.num_cells))

        if self.assoc_users.size:
            rows = sinr_slice[self.assoc_users]
            best = np.argmax(rows, axis=1)
            top = rows[np.arange(rows.shape[0]), best]
            tied = (rows >= top[:, None]).sum(axis=1) > 1
            if self._slot == 0:
                self._current = best.copy()
                self._cand = np.where(tied, -1, best)
                self._streak = np.where(tied, 0, 1)
            else:
                same = (best == self._cand) & ~tied
                self._streak = np.where(same, self._streak + 1,
                                        np.where(tied, 0, 1))
                self._cand = np.where(tied, -1, best)
                fire = (self._cand >= 0) & (self._cand != self._current) \
                    & (self._streak >= self.ttt)
                self._current = np.where(fire, self._cand, self._current)
            z[0, self.assoc_users, self._current] = 1.0

        if self.prep_users.size:
            rows = sinr_slice[self.prep_users]
            order = np.argsort(-rows, axis=1, kind="stable")
            in_top = np.zeros_like(self._prepared)
            np.put_along_axis(in_top, order[:, :self.prep_width], True, axis=1)
            self._rank_streak = np.where(in_top, self._rank_streak + 1, 0)
            if self._slot == 0:
                self._prepared = in_top.copy()
            else:
                ready = np.all(
                    np.where(in_top, self._rank_streak, self.ttt)
                    >= self.ttt, axis=1)
                changed = np.any(in_top != self._prepared, axis=1)
                swap = ready & changed
                self._prepared[swap] = in_top[swap]
            z[1, self.prep_users, :] = self._prepared

        self._slot += 1
        return z


def _estimate_curvature(value_grad, z0, g0):
    """Local Lipschitz estimate of the gradient via difference quotients.

    Power-iteration style: the probe direction follows the largest
    gradient change.  Can legitimately be enormous (or non-finite) near
    vertices where the soft-max partials blow up; callers must guard.
    """
    d = np.ones_like(z0)
    d /= np.linalg.norm(d.ravel())
    lip = 1.0
    h = 1e-4
    for _ in range(3):
        _, g1 = value_grad(z0 + h * d)
        diff = (g1 - g0) / h
        norm = np.linalg.norm(diff.ravel())
        if not np.isfinite(norm) or norm <= 1e-12:
            break
        lip = norm
        d = diff / norm
    return max(lip, 1e-6)


def maximize_slot_objective(rates, costs, slot, alpha, spec, z_prev,
                            z_start=None, tol=1e-5, max_iters=5000):
    """Maximize surrogate utility minus switching cost for one slot.

    Projected ascent along the normalized gradient with a backtracked
    move length (factor 0.5, doubling after clean successes).  The
    initial length is the classical 1/L step expressed as a distance,
    ||grad||/L, from a difference-quotient curvature estimate; working
    with lengths keeps the iteration scale-free when the soft-max
    partials spike by many orders of magnitude at boundary points.  The
    switching norm is smoothed with a vanishing epsilon so the kink at
    z_prev has a well-defined gradient.  Returns (z, value, iterations).
    """
    w = costs.weights_at(slot)
    eps = 1e-18

    def value_grad(z):
        util, grad = surrogate_value_and_gradient(z, rates, slot, alpha)
        d = z - z_prev
        pen = math.sqrt(float(np.sum(w * d * d)) + eps)
        return util - pen, grad - w * d / pen

    z = z_prev.copy() if z_start is None else z_start.copy()
    z, _ = project(z, spec)
    fz, g = value_grad(z)
    gnorm = float(np.linalg.norm(g.ravel()))
    lip = _estimate_curvature(value_grad, z, g)
    length = gnorm / lip if np.isfinite(gnorm / lip) and gnorm > 0 else 1.0
    length = min(max(length, 1e-8), 1e3)

    stalls = 0
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = float(np.linalg.norm(g.ravel()))
        if gnorm <= 1e-15:
            break
        u = g / gnorm
        cand, _ = project(z + length * u, spec)
        fc, gc = value_grad(cand)
        halvings = 0
        while fc < fz and halvings < 60:
            length *= 0.5
            halvings += 1
            cand, _ = project(z + length * u, spec)
            fc, gc = value_grad(cand)
        if fc < fz:
            break
        gain = fc - fz
        z, fz, g = cand, fc, gc
        if halvings == 0:
            length = min(length * 2.0, 1e3)
        stalls = stalls + 1 if gain < tol * 1e-3 else 0
        if stalls >= 5:
            break
    return z, fz, it


class PerSlotOracle:
    """Clairvoyant benchmark: best single-slot move from its own trajectory.

    Sees the current slot's rates and costs, pays switching from its own
    previous (continuous) decision, and warm-starts there.
    """

    def __init__(self, config, tol=1e-5):
        self.config = config
        self.spec = FeasibleSpec.from_config(config)
        self.anchor = anchor_point(self.spec)
        self.prev = self.anchor.copy()
        self.tol = tol

    def decide(self, rates, costs, slot):
        z, _, _ = maximize_slot_objective(
            rates, costs, slot, self.config.alpha, self.spec, self.prev,
            z_start=self.prev, tol=self.tol)
        self.prev = z
        return z


MAX_DP_STATES = 10_000
MAX_DP_HORIZON = 50


def enumerate_feasible_binary(spec):
    """All binary decisions in the feasible set, shape (S, 2, I, J).

    Guarded: refuses instances whose per-user option product exceeds
    MAX_DP_STATES before capacity filtering.
    """
    I, J = spec.num_users, spec.num_cells
    per_user = []
    for i in range(I):
        opts = []
        cap = int(spec.prep_cap[i])
        is_tho = spec.mode == STATIC and spec.tho_mask[i]
        is_cho = spec.mode == STATIC and not spec.tho_mask[i]
        if is_tho or spec.mode != STATIC:
            for j in range(J):
                x = np.zeros((2, J))
                x[0, j] = 1.0
                opts.append(x)
        if is_cho or spec.mode != STATIC:
            for size in range(1, cap + 1):
                for combo in itertools.combinations(range(J), size):
                    y = np.zeros((2, J))
                    y[1, list(combo)] = 1.0
                    opts.append(y)
        per_user.append(opts)

    total = math.prod(len(o) for o in per_user)
    if total > MAX_DP_STATES:
        raise ValueError(f"{total} candidate decisions exceed the "
                         f"{MAX_DP_STATES} enumeration guard")
    states = []
    for combo in itertools.product(*per_user):
        z = np.stack(combo, axis=1)  # (2, I, J)
        loads = z[0].sum(axis=0) + z[1].sum(axis=0)
        if np.all(loads <= spec.cell_cap + 1e-9):
            states.append(z)
    if not states:
        raise ValueError("no feasible binary decision exists")
    return np.array(states)


def _pair_costs(states, weights):
    """Pairwise switching costs ||z_s - z_s'|| under per-entry weights."""
    flat = states.reshape(states.shape[0], -1)
    wf = weights.ravel()
    q = np.sum(flat * flat * wf, axis=1)
    gram = (flat * wf) @ flat.T
    d2 = np.maximum(q[:, None] + q[None, :] - 2.0 * gram, 0.0)
    return np.sqrt(d2)


def dp_exact_oracle(rates, costs, spec, alpha, horizon=None):
    """Exact best binary trajectory by dynamic programming.

    Maximizes the summed surrogate utility minus switching costs (from the
    shared zero-projection anchor) over all feasible binary sequences.
    Only for tiny instances; see the state and horizon guards.  Returns
    (trajectory (T, 2, I, J), total objective).
    """
    T = rates.horizon if horizon is None else int(horizon)
    if T > MAX_DP_HORIZON:
        raise ValueError(f"horizon {T} exceeds the DP guard {MAX_DP_HORIZON}")
    states = enumerate_feasible_binary(spec)
    S = states.shape[0]
    anchor = anchor_point(spec)

    utils = np.empty((T, S))
    for t in range(T):
        log_c = rates.log_lifted[t]
        utils[t] = _surrogate_batch(states, log_c, alpha)

    const_costs = costs.num_slots == 1
    pair = _pair_costs(states, costs.weights_at(0)) if const_costs else None
    d0 = states - anchor[None]
    w0 = costs.weights_at(0)
    from_anchor = np.sqrt(np.sum(w0[None] * d0 * d0, axis=(1, 2, 3)))

    value = utils[0] - from_anchor
    parents = np.zeros((T, S), dtype=int)
    for t in range(1, T):
        w = pair if const_costs else _pair_costs(states, costs.weights_at(t))
        scores = value[:, None] - w
        parents[t] = np.argmax(scores, axis=0)
        value = utils[t] + scores[parents[t], np.arange(S)]

    best = int(np.argmax(value))
    idx = np.empty(T, dtype=int)
    idx[T - 1] = best
    for t in range(T - 1, 0, -1):
        idx[t - 1] = parents[t, idx[t]]
    return states[idx], float(value[best])


def _surrogate_batch(states, log_c, alpha):
    """Surrogate utility of a batch of binary decisions (no python loop)."""
    from scipy.special import xlogy

    x = states[:, 0]
    y = states[:, 1]
    tho = np.sum(x * log_c[None], axis=(1, 2))
    a = alpha * log_c
    active = y.sum(axis=2) > 0
    # shift by the prepared-cell max per (state, user), as the scalar path
    # does, so the two evaluations agree bit-for-bit at any alpha
    m = np.max(np.where(y > 0, a[None], -np.inf), axis=2, initial=-np.inf)
    m = np.where(active, m, 0.0)
    inner = np.sum(y * np.exp(np.minimum(a[None] - m[:, :, None], 700.0)),
                   axis=2)
    cho = np.where(active, (m + np.log(np.maximum(inner, 1e-300))) / alpha,
                   0.0).sum(axis=1)
    loads = x.sum(axis=1) + y.sum(axis=1)
    return tho + cho - xlogy(loads, loads).sum(axis=1)
