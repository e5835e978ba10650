"""Trajectory evaluation: objectives, regret, switching counts, run ledgers.

Everything here works on stacked decision trajectories of shape
(T, 2, I, J); slot 0 pays switching against the shared anchor point (the
projection of the all-zeros decision), matching the learner and both
oracles, so objective values are comparable across policies.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .model import Decision, switching_cost
from .objective import exact_utility, surrogate_utility


def objective_series(traj, rates, costs, alpha, anchor):
    """Per-slot surrogate utilities and switching costs.

    Returns (utils, switch), both shape (T,); switch[0] is the cost of the
    move from the anchor.
    """
    T = traj.shape[0]
    utils = np.empty(T)
    switch = np.empty(T)
    prev = anchor
    for t in range(T):
        utils[t] = surrogate_utility(traj[t], rates, t, alpha)
        switch[t] = switching_cost(traj[t], prev, costs, t)
        prev = traj[t]
    return utils, switch


def trajectory_objective(traj, rates, costs, alpha, anchor):
    """Total surrogate utility minus total switching cost."""
    utils, switch = objective_series(traj, rates, costs, alpha, anchor)
    return float(utils.sum() - switch.sum())


def dynamic_regret(alg_series, bench_series):
    """Cumulative benchmark-minus-algorithm objective, shape (T,).

    Both arguments are (utils, switch) pairs as returned by
    objective_series.
    """
    alg = alg_series[0] - alg_series[1]
    bench = bench_series[0] - bench_series[1]
    return np.cumsum(bench - alg)


def path_length(traj, costs, anchor):
    """Total weighted distance travelled, including the step off the anchor."""
    total = switching_cost(traj[0], anchor, costs, 0)
    for t in range(1, traj.shape[0]):
        total += switching_cost(traj[t], traj[t - 1], costs, t)
    return float(total)


def count_switches(traj, tol=1e-9):
    """Association and preparation churn of a binary trajectory.

    Returns (assoc, prep), both (T,) integer arrays.  assoc[t] counts users
    whose associated cell (or lack of one) differs from slot t-1; prep[t]
    counts preparation entries toggled since slot t-1.  Slot 0 is zero by
    convention.
    """
    T = traj.shape[0]
    x = traj[:, 0] > 0.5
    y = traj[:, 1] > 0.5
    cell = np.where(x.any(axis=2), np.argmax(x, axis=2), -1)  # (T, I)
    assoc = np.zeros(T, dtype=int)
    prep = np.zeros(T, dtype=int)
    if T > 1:
        assoc[1:] = (cell[1:] != cell[:-1]).sum(axis=1)
        prep[1:] = (y[1:] != y[:-1]).sum(axis=(1, 2))
    return assoc, prep


def exact_utility_series(traj, rates):
    """Per-slot exact utility of a binary trajectory, shape (T,)."""
    T = traj.shape[0]
    out = np.empty(T)
    for t in range(T):
        dec = Decision(traj[t, 0], traj[t, 1], binary=True)
        out[t] = exact_utility(dec, rates, t)
    return out


def mean_stderr(values):
    """Mean and standard error across replications."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


_FIELDS = ("slot", "surrogate_utility", "exact_utility", "switching_cost",
           "slot_objective", "cum_objective", "assoc_changes", "prep_changes",
           "repairs", "clamps", "bench_objective", "cum_regret")


class RunLedger:
    """Per-slot records of a single (policy, seed) run.

    Collects one row per slot and serializes to CSV plus a JSON summary.
    Regret columns stay blank unless a benchmark series is attached.
    """

    def __init__(self, policy_name, seed, scenario_hash):
        self.policy_name = policy_name
        self.seed = int(seed)
        self.scenario_hash = scenario_hash
        self.rows = []
        self.extra = {}          # additional deterministic summary fields
        self._cum_objective = 0.0
        self._cum_regret = 0.0
        self._slot_seconds = []

    def record(self, slot, surrogate, switching, exact=None, assoc=0,
               prep=0, repairs=0, clamps=0, bench=None, elapsed=None):
        obj = surrogate - switching
        self._cum_objective += obj
        row = {
            "slot": int(slot),
            "surrogate_utility": surrogate,
            "exact_utility": exact,
            "switching_cost": switching,
            "slot_objective": obj,
            "cum_objective": self._cum_objective,
            "assoc_changes": int(assoc),
            "prep_changes": int(prep),
            "repairs": int(repairs),
            "clamps": int(clamps),
            "bench_objective": bench,
            "cum_regret": None,
        }
        if bench is not None:
            self._cum_regret += bench - obj
            row["cum_regret"] = self._cum_regret
        if elapsed is not None:
            self._slot_seconds.append(elapsed)
        self.rows.append(row)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_FIELDS)
            for row in self.rows:
                writer.writerow(["" if row[f] is None
                                 else repr(row[f]) if isinstance(row[f], float)
                                 else row[f] for f in _FIELDS])

    def summary(self):
        T = len(self.rows)
        out = {
            "policy": self.policy_name,
            "seed": self.seed,
            "scenario_hash": self.scenario_hash,
            "slots": T,
            "total_objective": self._cum_objective,
            "total_surrogate_utility":
                sum(r["surrogate_utility"] for r in self.rows),
            "total_switching_cost":
                sum(r["switching_cost"] for r in self.rows),
            # the summed slot costs are exactly the weighted path length
            "path_length": sum(r["switching_cost"] for r in self.rows),
            "assoc_changes": sum(r["assoc_changes"] for r in self.rows),
            "prep_changes": sum(r["prep_changes"] for r in self.rows),
            "repairs": sum(r["repairs"] for r in self.rows),
            "clamps": sum(r["clamps"] for r in self.rows),
        }
        exacts = [r["exact_utility"] for r in self.rows
                  if r["exact_utility"] is not None]
        out["total_exact_utility"] = sum(exacts) if exacts else None
        if self.rows and self.rows[-1]["cum_regret"] is not None:
            out["final_avg_regret"] = self._cum_regret / max(T, 1)
        if self._slot_seconds:
            out["mean_slot_seconds"] = float(np.mean(self._slot_seconds))
        out.update(self.extra)
        return out

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
