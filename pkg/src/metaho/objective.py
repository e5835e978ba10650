"""Throughput model and the concave utility the controller climbs.

The exact per-slot utility is proportionally-fair log throughput minus a
load-entropy term: associated users contribute the log rate of their cell,
users with prepared cells contribute the log rate of the best prepared
cell, and every unit of load on a cell j subtracts log(load_j).  The best-
of-prepared max is non-concave in y, so the learner climbs a soft-max
surrogate whose per-user gap to the max is at most log(#prepared)/alpha.

Dead links (zero rate) are treated as rate 1 inside all logarithms, which
keeps every term finite and makes a dead selected cell contribute exactly
zero throughput.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .model import Decision

# load entropy is differentiated at loads + LOAD_EPS to stay finite at zero load
LOAD_EPS = 1e-9


@dataclass(frozen=True)
class SinrTensor:
    """Per-slot linear SINR, shape (horizon, num_users, num_cells)."""

    values: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ValueError("SINR tensor must be (slots, users, cells)")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("SINR must be finite and non-negative")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class RateTensor:
    """Achievable rates bandwidth * log(1 + sinr) plus their lifted logs.

    `log_lifted[t, i, j]` is log(rate) with zero rates lifted to rate 1, the
    form every utility term consumes.
    """

    values: np.ndarray
    log_lifted: np.ndarray

    @property
    def horizon(self):
        return self.values.shape[0]


def compute_rates(sinr, config):
    """Turn a SinrTensor into a RateTensor using per-cell bandwidths."""
    s = sinr.values if isinstance(sinr, SinrTensor) else np.asarray(sinr, dtype=float)
    rates = config.bandwidth[None, None, :] * np.log1p(s)
    log_lifted = np.where(rates > 0, np.log(np.maximum(rates, 1e-300)), 0.0)
    return RateTensor(values=rates, log_lifted=log_lifted)


def cell_loads(z):
    """Per-cell load: column sums of associations plus preparations."""
    return z[0].sum(axis=0) + z[1].sum(axis=0)


def _load_entropy(loads):
    return float(np.sum(xlogy(loads, loads)))


def _cho_soft_terms(y, log_c, alpha):
    """Per-user soft-max term (1/alpha) log sum_j y_ij rate_ij^alpha.

    Computed in the log domain, so any alpha is safe.  Users with an empty
    y row contribute nothing (no prepared cells, no term).  Returns the
    per-user terms, the active-row mask, and log sum_j y_ij e^(a_ij - m_i)
    with its shift m_i, which the gradient reuses.
    """
    a = alpha * log_c
    mass = y.sum(axis=1)
    active = mass > 0.0
    m = np.max(np.where(y > 0, a, -np.inf), axis=1, initial=-np.inf)
    m = np.where(active, m, 0.0)
    # exponents of entries with y == 0 are irrelevant; clip them so the
    # product with y stays 0 instead of 0 * inf
    inner = np.sum(y * np.exp(np.minimum(a - m[:, None], 700.0)), axis=1)
    log_inner = np.where(active, np.log(np.maximum(inner, 1e-300)), 0.0)
    terms = np.where(active, (m + log_inner) / alpha, 0.0)
    return terms, active, m, log_inner


def surrogate_utility(z, rates, slot, alpha):
    """Concave stand-in for the exact utility at decision z (continuous ok)."""
    log_c = rates.log_lifted[slot]
    tho = float(np.sum(z[0] * log_c))
    cho_terms, _, _, _ = _cho_soft_terms(z[1], log_c, alpha)
    return tho + float(cho_terms.sum()) - _load_entropy(cell_loads(z))


def surrogate_gradient(z, rates, slot, alpha):
    """Gradient of `surrogate_utility` in z, shape (2, I, J).

    The load-entropy part is differentiated at loads + LOAD_EPS so cells
    with zero load stay finite; rows with no preparation mass get only the
    load part in their y gradient.
    """
    log_c = rates.log_lifted[slot]
    loads = cell_loads(z)
    load_part = np.log(loads + LOAD_EPS) + 1.0

    gx = log_c - load_part[None, :]

    _, active, m, log_inner = _cho_soft_terms(z[1], log_c, alpha)
    a = alpha * log_c
    share = np.exp(np.minimum(a - (m + log_inner)[:, None], 700.0)) / alpha
    gy = np.where(active[:, None], share, 0.0) - load_part[None, :]
    return np.stack([gx, gy])


def surrogate_value_and_gradient(z, rates, slot, alpha):
    """Fused value+gradient used by the hot loops (oracle, learner)."""
    log_c = rates.log_lifted[slot]
    loads = cell_loads(z)
    load_part = np.log(loads + LOAD_EPS) + 1.0

    cho_terms, active, m, log_inner = _cho_soft_terms(z[1], log_c, alpha)
    value = float(np.sum(z[0] * log_c)) + float(cho_terms.sum()) \
        - _load_entropy(loads)

    a = alpha * log_c
    share = np.exp(np.minimum(a - (m + log_inner)[:, None], 700.0)) / alpha
    gy = np.where(active[:, None], share, 0.0) - load_part[None, :]
    gx = log_c - load_part[None, :]
    return value, np.stack([gx, gy])


def exact_utility(decision, rates, slot):
    """Exact per-slot utility of an implemented (binary) decision.

    Associated users earn log rate of their cell; users with preparations
    earn the log rate of their best prepared cell (ties to the lowest cell
    index); every load unit on cell j costs log(load_j).  Dead cells count
    as rate 1 inside the logs, so selecting one earns zero throughput but
    still carries load.
    """
    if not isinstance(decision, Decision):
        raise TypeError("exact_utility expects a Decision")
    z = decision.stacked()
    if not decision.binary or np.any((z != 0.0) & (z != 1.0)):
        raise ValueError("exact_utility is defined for binary decisions")

    log_c = rates.log_lifted[slot]
    tho = float(np.sum(z[0] * log_c))
    best = np.max(np.where(z[1] > 0, log_c, -np.inf), axis=1, initial=-np.inf)
    cho = float(np.sum(best[z[1].sum(axis=1) > 0]))
    return tho + cho - _load_entropy(cell_loads(z))


def max_approx_gap_bound(y, alpha):
    """Upper bound on surrogate minus exact preparation utility (binary y)."""
    counts = np.asarray(y).sum(axis=1)
    return float(np.sum(np.log(np.maximum(counts, 1.0)))) / alpha
