"""Core network model: problem sizes, decision variables, switching-cost norms.

A decision assigns each user a serving cell (traditional handover, the x
matrix) and/or a set of prepared cells it may fall onto (conditional
handover, the y matrix).  Changing either part between slots is priced by a
weighted Euclidean norm whose per-entry weights come from `SwitchingCosts`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATIC = "static"
DYNAMIC = "dynamic"

# switching-cost weights are clamped here so the dual norm stays finite
WEIGHT_FLOOR = 1e-9


def _as_vector(value, length, dtype=float):
    out = np.asarray(value, dtype=dtype)
    if out.ndim == 0:
        out = np.full(length, out)
    if out.shape != (length,):
        raise ValueError(f"expected shape ({length},), got {out.shape}")
    return out


@dataclass(frozen=True)
class NetworkConfig:
    """Problem sizes and static structure shared by every module.

    In static mode each user is pinned to one handover type via
    `tho_users` / `cho_users`; in dynamic mode the controller chooses the
    type per user and per slot, and the partition must be empty.
    """

    num_users: int
    num_cells: int
    horizon: int
    mode: str = DYNAMIC
    tho_users: tuple = ()        # static mode: users handled by traditional HO
    cho_users: tuple = ()        # static mode: users holding prepared cells
    max_preparations: object = None   # per-user cap on simultaneous preparations
    capacity: object = None          # per-cell load cap
    bandwidth: object = 1.0          # per-cell bandwidth (rate units)
    alpha: float = 20.0              # sharpness of the soft-max preparation utility

    def __post_init__(self):
        if self.num_users < 1 or self.num_cells < 1:
            raise ValueError("need at least one user and one cell")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.mode not in (STATIC, DYNAMIC):
            raise ValueError(f"unknown mode {self.mode!r}")

        prep = self.max_preparations
        prep = np.full(self.num_users, self.num_cells) if prep is None else prep
        prep = _as_vector(prep, self.num_users, dtype=int)
        if np.any(prep < 1) or np.any(prep > self.num_cells):
            raise ValueError("max_preparations must lie in [1, num_cells]")
        object.__setattr__(self, "max_preparations", prep)

        cap = self.capacity
        cap = np.full(self.num_cells, float(self.num_users)) if cap is None else cap
        cap = _as_vector(cap, self.num_cells)
        if np.any(cap < 1):
            raise ValueError("capacity must be >= 1 per cell")
        object.__setattr__(self, "capacity", cap)

        bw = _as_vector(self.bandwidth, self.num_cells)
        if np.any(bw <= 0):
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "bandwidth", bw)

        tho = tuple(sorted(int(i) for i in self.tho_users))
        cho = tuple(sorted(int(i) for i in self.cho_users))
        object.__setattr__(self, "tho_users", tho)
        object.__setattr__(self, "cho_users", cho)
        if self.mode == STATIC:
            if sorted(tho + cho) != list(range(self.num_users)):
                raise ValueError("static mode: tho_users and cho_users must "
                                 "partition range(num_users)")
        elif tho or cho:
            raise ValueError("dynamic mode takes no user partition")

    @property
    def tho_mask(self):
        mask = np.zeros(self.num_users, dtype=bool)
        mask[list(self.tho_users)] = True
        return mask

    @property
    def cho_mask(self):
        mask = np.zeros(self.num_users, dtype=bool)
        mask[list(self.cho_users)] = True
        return mask


@dataclass(frozen=True)
class Decision:
    """One slot's control output: x = cell association, y = prepared cells.

    Entries live in [0, 1].  `binary` marks implemented (rounded) decisions;
    continuous decisions are the relaxed points the learner works with.
    """

    x: np.ndarray
    y: np.ndarray
    binary: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 2:
            raise ValueError("x and y must be matching (num_users, num_cells) matrices")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def stacked(self):
        """Return the (2, I, J) array view used by the numeric internals."""
        return np.stack([self.x, self.y])

    @classmethod
    def from_stacked(cls, z, binary=False):
        return cls(x=z[0].copy(), y=z[1].copy(), binary=binary)


@dataclass(frozen=True)
class SwitchingCosts:
    """Per-entry prices of changing associations (tho) and preparations (cho).

    Arrays are (S, I, J) with S either 1 (constant in time) or the horizon.
    Every association price must exceed every preparation price, and both
    must respect their declared ceilings, which feed the learner's tuning.
    """

    tho: np.ndarray
    cho: np.ndarray
    a_max: float = 1.0
    b_max: float = 1.0

    def __post_init__(self):
        tho = np.maximum(np.asarray(self.tho, dtype=float), WEIGHT_FLOOR)
        cho = np.maximum(np.asarray(self.cho, dtype=float), WEIGHT_FLOOR)
        if tho.ndim != 3 or cho.ndim != 3 or tho.shape != cho.shape:
            raise ValueError("cost arrays must be matching (slots, users, cells)")
        object.__setattr__(self, "tho", tho)
        object.__setattr__(self, "cho", cho)
        if not (0 < self.b_max < self.a_max <= 1.0):
            raise ValueError("need 0 < b_max < a_max <= 1")
        if tho.max() > self.a_max + 1e-12 or cho.max() > self.b_max + 1e-12:
            raise ValueError("cost entries exceed their declared ceilings")
        if tho.min() <= cho.max():
            raise ValueError("every association price must exceed every "
                             "preparation price")

    @property
    def num_slots(self):
        return self.tho.shape[0]

    def weights_at(self, t):
        """Slot-t weights as one (2, I, J) array (x weights first)."""
        s = 0 if self.num_slots == 1 else t
        return np.stack([self.tho[s], self.cho[s]])

    @classmethod
    def constant(cls, tho, cho, num_users, num_cells, a_max=None, b_max=None):
        """Build time-constant costs from scalars or (I, J) matrices."""
        tho = np.broadcast_to(np.asarray(tho, dtype=float),
                              (num_users, num_cells))[None]
        cho = np.broadcast_to(np.asarray(cho, dtype=float),
                              (num_users, num_cells))[None]
        a_max = float(tho.max()) if a_max is None else a_max
        b_max = float(cho.max()) if b_max is None else b_max
        return cls(tho=tho.copy(), cho=cho.copy(), a_max=a_max, b_max=b_max)


def weighted_norm(dz, costs, t):
    """Switching-cost norm sqrt(sum_n w_n dz_n^2) of a decision difference.

    `dz` is a (2, I, J) array (x difference stacked on y difference).
    """
    w = costs.weights_at(t)
    return float(np.sqrt(np.sum(w * dz * dz)))


def dual_weighted_norm(v, costs, t):
    """Dual norm sqrt(sum_n v_n^2 / w_n); weights are floored so this is finite."""
    w = costs.weights_at(t)
    return float(np.sqrt(np.sum(v * v / w)))


def switching_cost(z_new, z_prev, costs, t):
    """Price of moving from z_prev to z_new at slot t (unsquared norm)."""
    return weighted_norm(z_new - z_prev, costs, t)
