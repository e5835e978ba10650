"""Feasible decision sets: validation, projection, and randomized rounding.

Static mode fixes which users are served by traditional handover (x rows on
a simplex) and which hold prepared cells (y rows with 1..b_i entries).
Dynamic mode lets the controller split each user's mass between the two,
with preparations only allowed on mass the association does not use.  Both
modes share per-cell capacity limits.

Rounding draws an implemented binary decision whose per-entry expectation
equals the continuous input; a repair pass then restores any constraint a
random draw broke (and is counted, so callers can verify it stayed idle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Decision, NetworkConfig, STATIC, DYNAMIC
from . import kernels


class FeasibilityError(ValueError):
    """A decision (or marginal) violates the feasible set."""


@dataclass(frozen=True)
class FeasibleSpec:
    """Geometry of one problem's feasible set plus numeric tolerances."""

    mode: str
    tho_mask: np.ndarray        # (I,) bool; all False in dynamic mode
    prep_cap: np.ndarray        # (I,) float copies of max_preparations
    cell_cap: np.ndarray        # (J,) float
    proj_tol: float = 1e-7
    max_sweeps: int = 10_000
    feas_tol: float = 1e-6

    @classmethod
    def from_config(cls, config: NetworkConfig):
        return cls(
            mode=config.mode,
            tho_mask=config.tho_mask.copy(),
            prep_cap=config.max_preparations.astype(float),
            cell_cap=config.capacity.astype(float),
        )

    @property
    def num_users(self):
        return self.tho_mask.shape[0]

    @property
    def num_cells(self):
        return self.cell_cap.shape[0]


@dataclass
class FeasibilityReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, name, index, amount):
        self.violations.append((name, index, float(amount)))

    def raise_if_bad(self):
        if self.violations:
            worst = max(self.violations, key=lambda v: v[2])
            raise FeasibilityError(
                f"{len(self.violations)} constraint violations, worst "
                f"{worst[0]} at {worst[1]} by {worst[2]:.3g}")


def validate(z, spec, binary=False, tol=None):
    """Check a (2, I, J) decision array against the feasible set.

    Returns a FeasibilityReport listing (constraint, index, amount) for
    every violation beyond `tol` (default: spec.feas_tol).
    """
    if isinstance(z, Decision):
        binary = binary or z.binary
        z = z.stacked()
    z = np.asarray(z, dtype=float)
    tol = spec.feas_tol if tol is None else tol
    rep = FeasibilityReport()
    I, J = spec.num_users, spec.num_cells
    if z.shape != (2, I, J):
        rep.add("shape", z.shape, np.inf)
        return rep

    if binary:
        off = np.minimum(np.abs(z), np.abs(z - 1.0))
        for a, i, j in zip(*np.nonzero(off > tol)):
            rep.add("binary", (("x", "y")[a], i, j), off[a, i, j])
    else:
        for a, i, j in zip(*np.nonzero((z < -tol) | (z > 1 + tol))):
            amt = max(-z[a, i, j], z[a, i, j] - 1.0)
            rep.add("box", (("x", "y")[a], i, j), amt)

    row_x = z[0].sum(axis=1)
    row_y = z[1].sum(axis=1)
    if spec.mode == STATIC:
        for i in range(I):
            if spec.tho_mask[i]:
                if abs(row_x[i] - 1.0) > tol:
                    rep.add("association-simplex", i, abs(row_x[i] - 1.0))
                if row_y[i] > tol:
                    rep.add("pinned-zero-y", i, row_y[i])
            else:
                if row_x[i] > tol:
                    rep.add("pinned-zero-x", i, row_x[i])
                if row_y[i] < 1.0 - tol:
                    rep.add("min-preparations", i, 1.0 - row_y[i])
                if row_y[i] > spec.prep_cap[i] + tol:
                    rep.add("max-preparations", i, row_y[i] - spec.prep_cap[i])
    else:
        for i in range(I):
            if row_x[i] > 1.0 + tol:
                rep.add("association-mass", i, row_x[i] - 1.0)
            spare = 1.0 - row_x[i]
            worst_k = int(np.argmax(z[1, i]))
            if z[1, i, worst_k] > spare + tol:
                rep.add("preparation-vs-association", (i, worst_k),
                        z[1, i, worst_k] - spare)
            if row_y[i] > spec.prep_cap[i] + tol:
                rep.add("max-preparations", i, row_y[i] - spec.prep_cap[i])
            if row_x[i] + row_y[i] < 1.0 - tol:
                rep.add("serve-somehow", i, 1.0 - row_x[i] - row_y[i])

    loads = z[0].sum(axis=0) + z[1].sum(axis=0)
    for j in range(J):
        if loads[j] > spec.cell_cap[j] + tol:
            rep.add("capacity", j, loads[j] - spec.cell_cap[j])
    return rep


def project(z, spec):
    """Euclidean projection of a (2, I, J) point onto the feasible set.

    Returns (projected array, sweeps used).  Raises if the sweep budget is
    exhausted, which in practice only happens with contradictory specs.
    """
    out = np.array(z, dtype=float, order="C", copy=True)
    if out.shape != (2, spec.num_users, spec.num_cells):
        raise ValueError(f"bad decision shape {out.shape}")
    if spec.mode == STATIC:
        sweeps = kernels.project_static_kernel(
            out, spec.tho_mask, spec.prep_cap, spec.cell_cap,
            spec.proj_tol, spec.max_sweeps)
    else:
        sweeps = kernels.project_dynamic_kernel(
            out, spec.prep_cap, spec.cell_cap,
            spec.proj_tol, spec.max_sweeps)
    if sweeps < 0:
        raise RuntimeError(
            f"projection did not converge in {spec.max_sweeps} sweeps")
    return out, int(sweeps)


def anchor_point(spec):
    """Projection of the all-zero decision; the shared slot-0 reference."""
    zero = np.zeros((2, spec.num_users, spec.num_cells))
    out, _ = project(zero, spec)
    return out


@dataclass
class RoundResult:
    """Rounded decision(s) plus bookkeeping.

    `z` is (2, I, J) for a single draw or (size, 2, I, J) for a batch;
    `raw` holds the same draws before repair.  `repairs` counts forced,
    trimmed, evicted, or reassigned rows/entries across the batch; `clamps`
    counts conditional probabilities that had to be clipped into [0, 1].
    """

    z: np.ndarray
    raw: np.ndarray
    repairs: int = 0
    clamps: int = 0

    @property
    def decision(self):
        if self.z.ndim != 3:
            raise ValueError("decision is only defined for single draws")
        return Decision.from_stacked(self.z, binary=True)


@dataclass(frozen=True)
class RoundCoupling:
    """Persistent uniforms for common-random-number rounding.

    A caller that rounds a drifting marginal every slot can draw one
    coupling up front and pass it to every call: per-slot distributions are
    unchanged (each uniform is used against the current marginals), but the
    sampled decision then only flips where a marginal crosses its retained
    threshold, instead of being resampled from scratch.
    """

    mode_u: np.ndarray      # (I,)   dynamic-mode handover-type draw
    cat_u: np.ndarray       # (I,)   categorical inverse-CDF position
    bern_u: np.ndarray      # (I, J) preparation Bernoulli thresholds


def draw_coupling(spec, rng):
    """One set of rounding uniforms for the spec's user/cell sizes."""
    I, J = spec.num_users, spec.num_cells
    return RoundCoupling(mode_u=rng.random(I), cat_u=rng.random(I),
                         bern_u=rng.random((I, J)))


def _categorical_rows(probs, u):
    """Index per (sample, row) from per-row probabilities and uniforms."""
    cum = np.cumsum(probs, axis=-1)
    cum = cum / cum[..., -1:]
    return (u > cum[None]).sum(axis=-1)


def _repair_batch(zb, z_m, spec):
    """Restore feasibility of batched binary draws; returns event count.

    Users who must hold preparations but drew none are forced onto their
    highest-marginal cell; rows over their preparation cap keep the cap
    highest-marginal prepared cells; over-capacity cells evict their
    lowest-marginal preparations (re-forcing any emptied user toward slack)
    and, if still over, move their lowest-marginal associations to the best
    cell with room.
    """
    n, _, I, J = zb.shape
    prep_cap = spec.prep_cap.astype(int)
    repairs = 0

    y_sum = zb[:, 1].sum(axis=2)
    x_sum = zb[:, 0].sum(axis=2)
    force_j = np.argmax(z_m[1] + 1e-12 * z_m[0], axis=1)

    # forced preparation: users with no association must hold >= 1 cell
    need = (y_sum == 0) & (x_sum == 0) if spec.mode == DYNAMIC else \
        (y_sum == 0) & ~spec.tho_mask[None, :]
    for s, i in zip(*np.nonzero(need)):
        zb[s, 1, i, force_j[i]] = 1.0
        repairs += 1

    # preparation caps
    y_sum = zb[:, 1].sum(axis=2)
    order = np.argsort(-z_m[1], axis=1, kind="stable")
    for s, i in zip(*np.nonzero(y_sum > prep_cap[None, :])):
        keep = 0
        for j in order[i]:
            if zb[s, 1, i, j] == 1.0:
                keep += 1
                if keep > prep_cap[i]:
                    zb[s, 1, i, j] = 0.0
        repairs += 1

    # per-cell capacity
    loads = zb.sum(axis=1).sum(axis=1)  # (n, J): x col sums + y col sums
    for s in np.nonzero((loads > spec.cell_cap[None, :]).any(axis=1))[0]:
        repairs += _repair_capacity_one(zb[s], z_m, spec)
    return repairs


def _repair_capacity_one(z1, z_m, spec):
    """Capacity repair of a single binary decision (in place)."""
    I, J = z1.shape[1], z1.shape[2]
    cap = spec.cell_cap
    events = 0
    for _ in range(4 * I * J):
        loads = z1[0].sum(axis=0) + z1[1].sum(axis=0)
        over = np.nonzero(loads > cap)[0]
        if over.size == 0:
            return events
        j = int(over[0])
        slack = np.nonzero(loads + 1.0 <= cap)[0]
        prep_users = np.nonzero(z1[1, :, j] == 1.0)[0]
        if prep_users.size:
            # evict the preparation the marginals cared least about;
            # prefer users who keep another cell prepared
            multi = prep_users[z1[1, prep_users].sum(axis=1) > 1.0]
            pool = multi if multi.size else prep_users
            i = int(pool[np.argmin(z_m[1, pool, j])])
            z1[1, i, j] = 0.0
            events += 1
            if z1[1, i].sum() == 0.0 and z1[0, i].sum() == 0.0:
                if slack.size == 0:
                    raise FeasibilityError("no cell with spare capacity "
                                           "to re-prepare an emptied user")
                tgt = int(slack[np.argmax(z_m[1, i, slack])])
                z1[1, i, tgt] = 1.0
            continue
        assoc_users = np.nonzero(z1[0, :, j] == 1.0)[0]
        if assoc_users.size == 0 or slack.size == 0:
            raise FeasibilityError(f"cannot repair capacity of cell {j}")
        i = int(assoc_users[np.argmin(z_m[0, assoc_users, j])])
        tgt = int(slack[np.argmax(z_m[0, i, slack])])
        z1[0, i, j] = 0.0
        z1[0, i, tgt] = 1.0
        events += 1
    raise FeasibilityError("capacity repair did not terminate")


def round_static(z, spec, rng, size=None, coupling=None):
    """Sample implemented decisions from static-mode marginals.

    Association rows are drawn categorically from their simplex weights;
    preparation entries are independent Bernoulli draws.  Pass `size` for a
    batch; expectations match `z` before repair.  A `coupling` (single
    draws only) substitutes its retained uniforms for fresh ones.
    """
    if spec.mode != STATIC:
        raise ValueError("round_static needs a static-mode spec")
    if coupling is not None and size is not None:
        raise ValueError("coupling applies to single draws only")
    validate(z, spec).raise_if_bad()
    n = 1 if size is None else int(size)
    I, J = spec.num_users, spec.num_cells
    tho_idx = np.nonzero(spec.tho_mask)[0]
    cho_idx = np.nonzero(~spec.tho_mask)[0]

    out = np.zeros((n, 2, I, J))
    if tho_idx.size:
        u = (coupling.cat_u[tho_idx][None, :, None] if coupling is not None
             else rng.random((n, tho_idx.size, 1)))
        picks = _categorical_rows(z[0][tho_idx], u)
        s_ix, u_ix = np.meshgrid(np.arange(n), tho_idx, indexing="ij")
        out[s_ix, 0, u_ix, picks] = 1.0
    if cho_idx.size:
        u = (coupling.bern_u[cho_idx][None] if coupling is not None
             else rng.random((n, cho_idx.size, J)))
        draws = u < z[1][cho_idx][None]
        out[:, 1, cho_idx, :] = draws

    raw = out.copy()
    repairs = _repair_batch(out, z, spec)
    if size is None:
        return RoundResult(z=out[0], raw=raw[0], repairs=repairs)
    return RoundResult(z=out, raw=raw, repairs=repairs)


def round_dynamic(z, spec, rng, size=None, coupling=None):
    """Sample implemented decisions from dynamic-mode marginals.

    Each user first draws its handover type (associate with probability
    sum_j x_ij, else prepare); the chosen branch then samples from the
    matching conditional marginals.  Conditional preparation probabilities
    are clipped into [0, 1] and the clips counted.  A `coupling` (single
    draws only) substitutes its retained uniforms for fresh ones.
    """
    if spec.mode != DYNAMIC:
        raise ValueError("round_dynamic needs a dynamic-mode spec")
    if coupling is not None and size is not None:
        raise ValueError("coupling applies to single draws only")
    validate(z, spec).raise_if_bad()
    n = 1 if size is None else int(size)
    I, J = spec.num_users, spec.num_cells

    pi = np.clip(z[0].sum(axis=1), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cond = np.where(pi[:, None] > 0, z[0] / np.maximum(pi, 1e-300)[:, None],
                          1.0 / J)
        y_cond = z[1] / np.maximum(1.0 - pi, 1e-300)[:, None]
    clamps = int(np.count_nonzero((y_cond > 1.0 + 1e-12) & (pi[:, None] < 1.0)))
    y_cond = np.clip(y_cond, 0.0, 1.0)

    if coupling is not None:
        u_mode, u_cat, u_bern = (coupling.mode_u[None], coupling.cat_u[None, :, None],
                                 coupling.bern_u[None])
    else:
        u_mode, u_cat, u_bern = (rng.random((n, I)), rng.random((n, I, 1)),
                                 rng.random((n, I, J)))
    assoc = u_mode < pi[None, :]
    picks = _categorical_rows(x_cond, u_cat)
    prep_draws = u_bern < y_cond[None]

    out = np.zeros((n, 2, I, J))
    s_ix, u_ix = np.meshgrid(np.arange(n), np.arange(I), indexing="ij")
    out[s_ix, 0, u_ix, picks] = 1.0
    out[:, 0] *= assoc[:, :, None]
    out[:, 1] = prep_draws & ~assoc[:, :, None]

    raw = out.copy()
    repairs = _repair_batch(out, z, spec)
    if size is None:
        return RoundResult(z=out[0], raw=raw[0], repairs=repairs, clamps=clamps)
    return RoundResult(z=out, raw=raw, repairs=repairs, clamps=clamps)


def round_greedy(z, spec):
    """Deterministic rounding: argmax association, top-marginal preparations.

    Used by per-slot oracle baselines where reproducible decisions matter
    more than unbiasedness.
    """
    validate(z, spec).raise_if_bad()
    I, J = spec.num_users, spec.num_cells
    out = np.zeros((1, 2, I, J))
    if spec.mode == STATIC:
        cho = ~spec.tho_mask
        tho = spec.tho_mask
    else:
        pi = z[0].sum(axis=1)
        tho = pi >= 0.5
        cho = ~tho
    for i in np.nonzero(tho)[0]:
        out[0, 0, i, np.argmax(z[0, i])] = 1.0
    for i in np.nonzero(cho)[0]:
        mass = z[1, i].sum()
        scale = 1.0
        if spec.mode == DYNAMIC:
            spare = max(1.0 - z[0, i].sum(), 1e-12)
            scale = 1.0 / spare
        m = int(np.clip(np.round(mass * scale), 1, spec.prep_cap[i]))
        keep = np.argsort(-z[1, i], kind="stable")[:m]
        out[0, 1, i, keep] = 1.0
    repairs = _repair_batch(out, z, spec)
    return RoundResult(z=out[0], raw=out[0].copy(), repairs=repairs)
