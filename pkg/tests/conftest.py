"""Shared builders for the test suite."""

import numpy as np

from metaho import (NetworkConfig, STATIC, DYNAMIC, FeasibleSpec, project,
                    round_static, round_dynamic, validate)


def static_net(n_tho, n_cho, num_cells, horizon=10, **kw):
    users = n_tho + n_cho
    return NetworkConfig(num_users=users, num_cells=num_cells,
                         horizon=horizon, mode=STATIC,
                         tho_users=tuple(range(n_tho)),
                         cho_users=tuple(range(n_tho, users)), **kw)


def dynamic_net(num_users, num_cells, horizon=10, **kw):
    return NetworkConfig(num_users=num_users, num_cells=num_cells,
                         horizon=horizon, mode=DYNAMIC, **kw)


def center_point(spec):
    """A feasible point with every coordinate strictly positive."""
    I, J = spec.num_users, spec.num_cells
    z = np.zeros((2, I, J))
    if spec.mode == STATIC:
        z[0, spec.tho_mask] = 1.0 / J
        cho = ~spec.tho_mask
        mass = (1.0 + np.minimum(spec.prep_cap, float(J))) / 2.0
        z[1, cho] = (mass[cho] / J)[:, None]
    else:
        if J < 2:
            raise ValueError("dynamic center point needs at least 2 cells")
        z[0] = 0.4 / J
        z[1] = 0.9 / J
    return z


def random_feasible(spec, rng):
    z, _ = project(rng.random((2, spec.num_users, spec.num_cells)), spec)
    return z


def interior_feasible(spec, rng, blend=0.5):
    """Random feasible point pulled toward the positive center."""
    return blend * random_feasible(spec, rng) + (1 - blend) * center_point(spec)


def random_binary(spec, rng):
    z = random_feasible(spec, rng)
    if spec.mode == STATIC:
        return round_static(z, spec, rng).z
    return round_dynamic(z, spec, rng).z


def assert_feasible(z, spec, binary=False):
    report = validate(z, spec, binary=binary)
    assert report.ok, report.violations


def plan_dict(out_dir, **overrides):
    """A minimal valid run-config dict; overrides replace whole sections."""
    base = {
        "version": 1,
        "network": {"num_users": 3, "num_cells": 3, "horizon": 30,
                    "mode": "static", "tho_users": [0], "cho_users": [1, 2]},
        "scenario": {"kind": "volatile", "period": 5},
        "costs": {"kind": "uniform", "tho": 0.5, "cho": 0.1},
        "policies": [{"kind": "contra"}, {"kind": "tho", "ttt": 2}],
        "seeds": [0],
        "output_dir": str(out_dir),
    }
    base.update(overrides)
    return base
