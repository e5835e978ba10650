"""Experiment runner: JSON configs to per-policy, per-seed artifacts.

A run config names one network, one scenario, one cost model, and a list
of policies.  Every policy under the same seed sees the same realized
rates and costs; each gets an independent decision RNG.  Artifacts per
(policy, seed): a per-slot CSV ledger and a summary JSON, both stamped
with a scenario hash (digest of the shared scenario inputs plus the seed)
so comparisons refuse apples-to-oranges inputs.

Config parsing is fail-closed: unknown keys anywhere are errors, reported
with their path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter

import numpy as np

from .baselines import PerSlotOracle, ThresholdPolicy
from .feasible import FeasibleSpec, anchor_point
from .learner import MetaLearner, compute_bounds
from .metrics import RunLedger
from .model import DYNAMIC, STATIC, Decision, NetworkConfig, switching_cost
from .objective import (compute_rates, exact_utility, surrogate_utility,
                        surrogate_value_and_gradient)
from .scenario import (HeterogeneousCosts, StationaryScenario, TraceScenario,
                       UniformCosts, VolatileScenario, declared_rate_ceiling,
                       gen_costs, realize)

CONFIG_VERSION = 1

_SCENARIO_KINDS = {"volatile": VolatileScenario,
                   "stationary": StationaryScenario,
                   "trace": TraceScenario}
_COST_KINDS = {"uniform": UniformCosts, "heterogeneous": HeterogeneousCosts}
_KIND_BY_TYPE = {cls: kind
                 for kind, cls in {**_SCENARIO_KINDS, **_COST_KINDS}.items()}


class ConfigError(Exception):
    """A run config that fails schema or consistency checks."""


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    name: str
    ttt: int = 1
    cl: int = 1
    mode: str = ""              # contra only; empty inherits the network mode
    tho_users: tuple = ()
    cho_users: tuple = ()
    ablate_switching_costs: bool = False


@dataclass(frozen=True)
class RunPlan:
    network: NetworkConfig
    scenario: object
    costs_cfg: object
    policies: tuple
    benchmark: object           # "oracle" or None
    seeds: tuple
    output_dir: str


def _expect_keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must be an object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {path}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError(f"missing key(s) {missing} in {path}")


def _build(cls, kwargs, path):
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_plan(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_plan(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_plan(raw, base_dir="."):
    _expect_keys(raw, "top level",
                 required=("version", "network", "scenario", "costs",
                           "policies", "seeds", "output_dir"),
                 optional=("benchmark",))
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw['version']!r}; "
                          f"this build reads version {CONFIG_VERSION}")

    network = _parse_network(raw["network"])
    scenario = _parse_scenario(raw["scenario"], base_dir)
    costs_cfg = _parse_costs(raw["costs"])

    if not isinstance(raw["policies"], list) or not raw["policies"]:
        raise ConfigError("policies must be a non-empty list")
    policies = tuple(_parse_policy(p, i, network)
                     for i, p in enumerate(raw["policies"]))
    names = [p.name for p in policies]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate policy name(s) {dupes}; "
                          f"set distinct 'name' fields")

    benchmark = raw.get("benchmark")
    if benchmark not in (None, "oracle"):
        raise ConfigError(f"benchmark must be \"oracle\" or omitted, "
                          f"got {benchmark!r}")

    seeds = raw["seeds"]
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and s >= 0 for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of ints >= 0")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")

    if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
        raise ConfigError("output_dir must be a non-empty string")

    return RunPlan(network=network, scenario=scenario, costs_cfg=costs_cfg,
                   policies=policies, benchmark=benchmark,
                   seeds=tuple(seeds), output_dir=raw["output_dir"])


def _parse_network(obj):
    _expect_keys(obj, "network",
                 required=("num_users", "num_cells", "horizon"),
                 optional=("mode", "tho_users", "cho_users",
                           "max_preparations", "capacity", "bandwidth",
                           "alpha"))
    kwargs = dict(obj)
    kwargs["tho_users"] = tuple(obj.get("tho_users", ()))
    kwargs["cho_users"] = tuple(obj.get("cho_users", ()))
    return _build(NetworkConfig, kwargs, "network")


def _parse_scenario(obj, base_dir):
    _expect_keys(obj, "scenario", required=("kind",),
                 optional=("period", "db_range", "path", "speed_range",
                           "noise_variance", "randomness", "slot_seconds"))
    kind = obj["kind"]
    if kind not in _SCENARIO_KINDS:
        raise ConfigError(f"scenario.kind must be one of "
                          f"{sorted(_SCENARIO_KINDS)}, got {kind!r}")
    kwargs = {k: v for k, v in obj.items() if k != "kind"}
    if kind in ("volatile", "stationary"):
        bad = set(kwargs) - {"period", "db_range"}
        if bad:
            raise ConfigError(f"key(s) {sorted(bad)} do not apply to "
                              f"scenario.kind={kind!r}")
        if "db_range" in kwargs:
            kwargs["db_range"] = _as_range(kwargs["db_range"],
                                           "scenario.db_range")
        if "period" in kwargs and (not isinstance(kwargs["period"], int)
                                   or kwargs["period"] < 1):
            raise ConfigError("scenario.period must be an int >= 1")
    else:
        if "path" not in kwargs:
            raise ConfigError("scenario.kind=\"trace\" requires 'path'")
        bad = set(kwargs) - {"path", "speed_range", "noise_variance",
                             "randomness", "slot_seconds"}
        if bad:
            raise ConfigError(f"key(s) {sorted(bad)} do not apply to "
                              f"scenario.kind='trace'")
        kwargs["path"] = os.path.normpath(
            os.path.join(base_dir, kwargs["path"]))
        if not os.path.isfile(kwargs["path"]):
            raise ConfigError(
                f"scenario.path does not exist: {kwargs['path']}")
        if "speed_range" in kwargs:
            kwargs["speed_range"] = _as_range(kwargs["speed_range"],
                                              "scenario.speed_range")
    return _build(_SCENARIO_KINDS[kind], kwargs, "scenario")


def _as_range(value, path):
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)
            or value[0] > value[1]):
        raise ConfigError(f"{path} must be a [low, high] number pair")
    return (float(value[0]), float(value[1]))


def _parse_costs(obj):
    _expect_keys(obj, "costs", required=("kind",),
                 optional=("tho", "cho", "a_max", "b_max"))
    kind = obj.get("kind")
    if kind not in _COST_KINDS:
        raise ConfigError(f"costs.kind must be one of {sorted(_COST_KINDS)}, "
                          f"got {kind!r}")
    kwargs = {k: v for k, v in obj.items() if k != "kind"}
    allowed = {"tho", "cho"} if kind == "uniform" else {"a_max", "b_max"}
    bad = set(kwargs) - allowed
    if bad:
        raise ConfigError(f"key(s) {sorted(bad)} do not apply to "
                          f"costs.kind={kind!r}")
    cfg = _build(_COST_KINDS[kind], kwargs, "costs")
    hi, lo = ((cfg.tho, cfg.cho) if kind == "uniform"
              else (cfg.a_max, cfg.b_max))
    if not 0.0 < lo < hi <= 1.0:
        raise ConfigError("costs must satisfy 0 < cho-level < tho-level <= 1")
    return cfg


_POLICY_KINDS = ("contra", "tho", "cho", "oracle")


def _parse_policy(obj, index, network):
    path = f"policies[{index}]"
    _expect_keys(obj, path, required=("kind",),
                 optional=("name", "ttt", "cl", "mode", "tho_users",
                           "cho_users", "ablate_switching_costs"))
    kind = obj["kind"]
    if kind not in _POLICY_KINDS:
        raise ConfigError(f"{path}.kind must be one of {_POLICY_KINDS}, "
                          f"got {kind!r}")
    fields = {"contra": {"name", "mode", "tho_users", "cho_users",
                         "ablate_switching_costs"},
              "tho": {"name", "ttt"},
              "cho": {"name", "cl", "ttt"},
              "oracle": {"name"}}[kind]
    bad = sorted(set(obj) - fields - {"kind"})
    if bad:
        raise ConfigError(f"key(s) {bad} do not apply to {path} "
                          f"(kind={kind!r})")

    ttt = obj.get("ttt", 1)
    cl = obj.get("cl", 1)
    if not isinstance(ttt, int) or ttt < 1:
        raise ConfigError(f"{path}.ttt must be an int >= 1")
    if not isinstance(cl, int) or cl < 1:
        raise ConfigError(f"{path}.cl must be an int >= 1")

    mode = obj.get("mode", "")
    if mode not in ("", STATIC, DYNAMIC):
        raise ConfigError(f"{path}.mode must be \"static\" or \"dynamic\"")
    tho_users = tuple(obj.get("tho_users", ()))
    cho_users = tuple(obj.get("cho_users", ()))
    if (tho_users or cho_users) and mode != STATIC:
        raise ConfigError(f"{path}: a user partition requires mode=\"static\"")

    default = {"contra": "contra", "tho": f"tho_ttt{ttt}",
               "cho": f"cho_cl{cl}_ttt{ttt}", "oracle": "oracle"}[kind]
    name = obj.get("name", default)
    if not isinstance(name, str) or not name or not all(
            c.isalnum() or c in "_-" for c in name):
        raise ConfigError(f"{path}.name must match [A-Za-z0-9_-]+")

    spec = PolicySpec(kind=kind, name=name, ttt=ttt, cl=cl, mode=mode,
                      tho_users=tho_users, cho_users=cho_users,
                      ablate_switching_costs=bool(
                          obj.get("ablate_switching_costs", False)))
    try:
        cfg = _policy_config(spec, network)   # fail at parse time
        if kind == "cho":
            ruled = (cfg.cho_mask if cfg.mode == STATIC
                     else np.ones(cfg.num_users, dtype=bool))
            cap = int(cfg.max_preparations[ruled].min()) if ruled.any() else 1
            if cl > cap:
                raise ValueError(f"cl={cl} exceeds the preparation "
                                 f"cap {cap} of the ruled users")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec


def _policy_config(pol, base):
    """Network config seen by one policy (mode override applied)."""
    if pol.kind != "contra" or not pol.mode or pol.mode == base.mode:
        if pol.kind == "contra" and pol.mode == STATIC == base.mode \
                and (pol.tho_users or pol.cho_users):
            return dataclasses.replace(base, tho_users=pol.tho_users,
                                       cho_users=pol.cho_users)
        return base
    if pol.mode == DYNAMIC:
        return dataclasses.replace(base, mode=DYNAMIC, tho_users=(),
                                   cho_users=())
    return dataclasses.replace(base, mode=STATIC, tho_users=pol.tho_users,
                               cho_users=pol.cho_users)


def scenario_hash(plan, seed):
    """16-hex digest of everything shared by policies under one seed."""
    net = plan.network
    payload = {
        "num_users": net.num_users,
        "num_cells": net.num_cells,
        "horizon": net.horizon,
        "alpha": net.alpha,
        "bandwidth": net.bandwidth.tolist(),
        "max_preparations": net.max_preparations.tolist(),
        "capacity": net.capacity.tolist(),
        "scenario": {"kind": _KIND_BY_TYPE[type(plan.scenario)],
                     **dataclasses.asdict(plan.scenario)},
        "costs": {"kind": _KIND_BY_TYPE[type(plan.costs_cfg)],
                  **dataclasses.asdict(plan.costs_cfg)},
        "seed": int(seed),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _name_stream(name):
    """Stable RNG stream index for a policy name.

    Name-keyed so adding or reordering policies never shifts the random
    draws of the others.
    """
    return int(hashlib.sha256(name.encode()).hexdigest()[:8], 16)


@dataclass
class PolicyRun:
    """One policy's outputs under one seed."""
    name: str
    seed: int
    ledger: RunLedger
    trajectory: np.ndarray      # (T, 2, I, J) implemented decisions
    mixture: object = None      # contra only: continuous mixtures (T, 2, I, J)
    expert_utilities: object = None  # contra only: (T, K) surrogate utilities
    learner_rows: object = None


def realize_seed(plan, seed):
    """Shared per-seed inputs: SINR, rates, costs, declared rate ceiling."""
    net = plan.network
    sinr = realize(plan.scenario, net, np.random.default_rng([seed, 0]))
    rates = compute_rates(sinr, net)
    costs = gen_costs(plan.costs_cfg, net.num_users, net.num_cells,
                      np.random.default_rng([seed, 1]))
    ceiling = declared_rate_ceiling(plan.scenario, net, rates=rates)
    return sinr, rates, costs, ceiling


def simulate_policy(pol, plan, seed, sinr, rates, costs, ceiling,
                    bench=None, dump_learner=False):
    """Run one policy over the horizon; returns a PolicyRun.

    bench: optional (T,) per-slot benchmark objective attached to the
    ledger's regret columns.
    """
    cfg = _policy_config(pol, plan.network)
    shash = scenario_hash(plan, seed)
    ledger = RunLedger(pol.name, seed, shash)
    T = cfg.horizon
    traj = np.empty((T, 2, cfg.num_users, cfg.num_cells))

    if pol.kind == "contra":
        rng = np.random.default_rng([seed, 2, _name_stream(pol.name)])
        bounds = compute_bounds(cfg, costs.a_max, costs.b_max, ceiling)
        learner = MetaLearner(cfg, bounds,
                              ablate_switching_costs=pol.ablate_switching_costs)
        mixture = np.empty_like(traj)
        expert_utils = np.empty((T, learner.num_experts))
        rows = [] if dump_learner else None
        z_prev = learner.anchor.copy()
        prev_cell = prev_prep = None
        for t in range(T):
            for k in range(learner.num_experts):
                expert_utils[t, k] = surrogate_utility(learner.experts[k],
                                                       rates, t, cfg.alpha)
            tic = perf_counter()
            proposal = learner.propose(rng)
            z_t = proposal.implemented
            util, grad = surrogate_value_and_gradient(z_t, rates, t,
                                                      cfg.alpha)
            losses = learner.observe(grad, z_t, z_prev, costs, t)
            elapsed = perf_counter() - tic
            cell, prep, assoc_n, prep_n = _churn(z_t, prev_cell, prev_prep)
            ledger.record(
                t, util, switching_cost(z_t, z_prev, costs, t),
                exact=exact_utility(Decision(z_t[0], z_t[1], binary=True),
                                    rates, t),
                assoc=assoc_n, prep=prep_n,
                repairs=proposal.rounding.repairs,
                clamps=proposal.rounding.clamps,
                bench=None if bench is None else bench[t], elapsed=elapsed)
            if rows is not None:
                rows.append((t, learner.weights.copy(), losses.copy(),
                             z_t.copy()))
            traj[t] = z_t
            mixture[t] = proposal.mixture
            z_prev, prev_cell, prev_prep = z_t, cell, prep
        return PolicyRun(pol.name, seed, ledger, traj, mixture=mixture,
                         expert_utilities=expert_utils, learner_rows=rows)

    if pol.kind in ("tho", "cho"):
        policy = ThresholdPolicy(cfg, pol.kind, pol.ttt, pol.cl)
        # slot 0 pays from the same rest point as every other policy
        z_prev = anchor_point(FeasibleSpec.from_config(cfg))
        prev_cell = prev_prep = None
        for t in range(T):
            tic = perf_counter()
            z_t = policy.decide(sinr.values[t])
            elapsed = perf_counter() - tic
            sw = switching_cost(z_t, z_prev, costs, t)
            cell, prep, assoc_n, prep_n = _churn(z_t, prev_cell, prev_prep)
            ledger.record(
                t, surrogate_utility(z_t, rates, t, cfg.alpha), sw,
                exact=exact_utility(Decision(z_t[0], z_t[1], binary=True),
                                    rates, t),
                assoc=assoc_n, prep=prep_n,
                bench=None if bench is None else bench[t], elapsed=elapsed)
            traj[t] = z_t
            z_prev, prev_cell, prev_prep = z_t, cell, prep
        return PolicyRun(pol.name, seed, ledger, traj)

    # clairvoyant per-slot benchmark; continuous decisions, no regret column
    oracle = PerSlotOracle(cfg)
    z_prev = oracle.anchor.copy()
    for t in range(T):
        tic = perf_counter()
        z_t = oracle.decide(rates, costs, t)
        elapsed = perf_counter() - tic
        ledger.record(t, surrogate_utility(z_t, rates, t, cfg.alpha),
                      switching_cost(z_t, z_prev, costs, t), elapsed=elapsed)
        traj[t] = z_t
        z_prev = z_t
    return PolicyRun(pol.name, seed, ledger, traj)


def _churn(z_t, prev_cell, prev_prep):
    """Serving cell per user, prepared mask, and change counts vs prior."""
    cell = np.where(z_t[0].any(axis=1), np.argmax(z_t[0], axis=1), -1)
    prep = z_t[1] > 0.5
    assoc_n = 0 if prev_cell is None else int((cell != prev_cell).sum())
    prep_n = 0 if prev_prep is None else int((prep != prev_prep).sum())
    return cell, prep, assoc_n, prep_n


def run_seed(plan, seed, dump_learner=False):
    """All policies under one seed, benchmark shared; returns PolicyRuns.

    The per-slot oracle is computed once when it serves as the benchmark,
    and reused verbatim if it is also a listed policy.
    """
    sinr, rates, costs, ceiling = realize_seed(plan, seed)
    bench = None
    oracle_run = None
    needs_oracle = (plan.benchmark == "oracle"
                    or any(p.kind == "oracle" for p in plan.policies))
    if needs_oracle:
        oracle_pol = next((p for p in plan.policies if p.kind == "oracle"),
                          PolicySpec(kind="oracle", name="oracle"))
        oracle_run = simulate_policy(oracle_pol, plan, seed, sinr, rates,
                                     costs, ceiling)
        if plan.benchmark == "oracle":
            bench = np.array([r["slot_objective"]
                              for r in oracle_run.ledger.rows])

    runs = []
    for pol in plan.policies:
        if pol.kind == "oracle" and oracle_run is not None \
                and pol.name == oracle_run.name:
            runs.append(oracle_run)
            continue
        runs.append(simulate_policy(pol, plan, seed, sinr, rates, costs,
                                    ceiling, bench=bench,
                                    dump_learner=dump_learner))
    return runs


def _write_atomic(path, text):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_artifacts(run, out_dir):
    """CSV ledger + summary JSON (+ learner dump) for one PolicyRun."""
    out = Path(out_dir)
    stem = f"{run.name}__seed{run.seed}"
    csv_path = out / f"{stem}.csv"
    run.ledger.write_csv(csv_path.with_name(csv_path.name + ".tmp"))
    os.replace(csv_path.with_name(csv_path.name + ".tmp"), csv_path)
    _write_atomic(out / f"{stem}__summary.json",
                  json.dumps(run.ledger.summary(), indent=2, sort_keys=True)
                  + "\n")
    if run.learner_rows is not None:
        _write_atomic(out / f"{stem}__learner.csv",
                      _learner_dump_text(run.learner_rows))
    return [str(csv_path), str(out / f"{stem}__summary.json")]


def _learner_dump_text(rows):
    k = rows[0][1].size
    _, n_users, n_cells = rows[0][3].shape
    header = (["slot"] + [f"weight_{i}" for i in range(k)]
              + [f"loss_{i}" for i in range(k)]
              + [f"{part}_{i}_{j}" for part in ("x", "y")
                 for i in range(n_users) for j in range(n_cells)])
    lines = [",".join(header)]
    for slot, weights, losses, z in rows:
        vals = [str(slot)] + [repr(v) for v in weights] \
            + [repr(v) for v in losses] + [repr(v) for v in z.ravel()]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def _seed_job(args):
    plan, seed, out_dir, dump_learner = args
    runs = run_seed(plan, seed, dump_learner=dump_learner)
    summaries = []
    for run in runs:
        write_artifacts(run, out_dir)
        summaries.append(run.ledger.summary())
    return summaries


def run_experiment(plan, out_dir=None, seeds=None, parallel=1,
                   dump_learner=False):
    """Execute the full plan; writes artifacts, returns all summaries."""
    out = Path(out_dir if out_dir is not None else plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(plan.seeds if seeds is None else seeds)
    jobs = [(plan, seed, str(out), dump_learner) for seed in seeds]
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=int(parallel)) as pool:
            per_seed = list(pool.map(_seed_job, jobs))
    else:
        per_seed = [_seed_job(job) for job in jobs]
    return [summary for group in per_seed for summary in group]


_TABLE_FIELDS = ("policy", "seed", "total_objective",
                 "total_surrogate_utility", "total_switching_cost",
                 "assoc_changes", "prep_changes", "final_avg_regret")


def comparison_table(summaries):
    """CSV comparison of summaries; refuses mixed scenarios or horizons."""
    if len(summaries) < 2:
        raise ConfigError("compare needs at least two summaries")
    hashes = sorted({s.get("scenario_hash") for s in summaries})
    if len(hashes) > 1:
        raise ConfigError(f"scenario hashes differ: {hashes}; "
                          f"refusing to compare different scenarios")
    horizons = {s.get("slots") for s in summaries}
    if len(horizons) > 1:
        raise ConfigError(f"horizons differ: {sorted(horizons)}")
    ranked = sorted(summaries, key=lambda s: -s["total_objective"])
    lines = [",".join(_TABLE_FIELDS)]
    for s in ranked:
        row = []
        for f in _TABLE_FIELDS:
            v = s.get(f)
            row.append("" if v is None else
                       repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
