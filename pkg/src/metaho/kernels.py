"""Compiled inner loops for feasible-set projections.

Both modes project with Dykstra's alternating scheme (projection onto each
constraint family plus a correction term), which converges to the exact
Euclidean projection onto the intersection.  Static mode first tries the
closed-form per-row projection and only falls back to the iteration when a
cell capacity binds.  Set NUMBA_DISABLE_JIT=1 to run the same code paths
uncompiled.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def _row_band(v, out, lo, hi):
    """Project v onto {u in [0,1]^J : lo <= sum(u) <= hi}, writing out.

    The active-sum case shifts all entries by a common lambda before
    clipping; lambda is found by bisection (the clipped sum is monotone).
    """
    J = v.shape[0]
    s = 0.0
    for j in range(J):
        u = v[j]
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
        out[j] = u
        s += u
    if lo - 1e-15 <= s <= hi + 1e-15:
        return
    target = lo if s < lo else hi
    lam_lo = v[0]
    lam_hi = v[0]
    for j in range(J):
        if v[j] < lam_lo:
            lam_lo = v[j]
        if v[j] > lam_hi:
            lam_hi = v[j]
    lam_lo -= 1.0  # every entry saturates at 1: sum = J >= target
    for _ in range(64):
        lam = 0.5 * (lam_lo + lam_hi)
        s = 0.0
        for j in range(J):
            u = v[j] - lam
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            s += u
        if s > target:
            lam_lo = lam
        else:
            lam_hi = lam
    lam = 0.5 * (lam_lo + lam_hi)
    for j in range(J):
        u = v[j] - lam
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
        out[j] = u


@njit(cache=True)
def _rows_static(z, tho_mask, prep_cap, buf):
    """Exact projection onto the per-row sets of the static mode."""
    I = z.shape[1]
    J = z.shape[2]
    for i in range(I):
        if tho_mask[i]:
            _row_band(z[0, i], buf, 1.0, 1.0)
            for j in range(J):
                z[0, i, j] = buf[j]
                z[1, i, j] = 0.0
        else:
            _row_band(z[1, i], buf, 1.0, prep_cap[i])
            for j in range(J):
                z[1, i, j] = buf[j]
                z[0, i, j] = 0.0


@njit(cache=True)
def _static_violation(z, tho_mask, prep_cap, cell_cap):
    I = z.shape[1]
    J = z.shape[2]
    worst = 0.0
    for i in range(I):
        sx = 0.0
        sy = 0.0
        for j in range(J):
            for a in range(2):
                if z[a, i, j] < 0.0 and -z[a, i, j] > worst:
                    worst = -z[a, i, j]
                if z[a, i, j] > 1.0 and z[a, i, j] - 1.0 > worst:
                    worst = z[a, i, j] - 1.0
            sx += z[0, i, j]
            sy += z[1, i, j]
        if tho_mask[i]:
            if abs(sx - 1.0) > worst:
                worst = abs(sx - 1.0)
            if sy > worst:
                worst = sy
        else:
            if sx > worst:
                worst = sx
            if 1.0 - sy > worst:
                worst = 1.0 - sy
            if sy - prep_cap[i] > worst:
                worst = sy - prep_cap[i]
    for j in range(J):
        load = 0.0
        for i in range(I):
            if tho_mask[i]:
                load += z[0, i, j]
            else:
                load += z[1, i, j]
        if load - cell_cap[j] > worst:
            worst = load - cell_cap[j]
    return worst


@njit(cache=True)
def project_static_kernel(z, tho_mask, prep_cap, cell_cap, tol, max_sweeps):
    """Project z in place onto the static feasible set; returns sweep count.

    Returns -1 if the sweep budget is exhausted before converging.
    """
    I = z.shape[1]
    J = z.shape[2]
    buf = np.empty(J)

    v0 = z.copy()
    _rows_static(z, tho_mask, prep_cap, buf)
    over = 0.0
    for j in range(J):
        load = 0.0
        for i in range(I):
            if tho_mask[i]:
                load += z[0, i, j]
            else:
                load += z[1, i, j]
        if load - cell_cap[j] > over:
            over = load - cell_cap[j]
    if over <= tol:
        return 1

    # a capacity binds: Dykstra between the row family and the capacity
    # half-spaces, restarted from the original point
    for a in range(2):
        for i in range(I):
            for j in range(J):
                z[a, i, j] = v0[a, i, j]
    e_r = np.zeros((2, I, J))
    e_c = np.zeros((2, I, J))
    u = np.empty((2, I, J))
    prev = np.empty((2, I, J))
    for sweep in range(max_sweeps):
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    prev[a, i, j] = z[a, i, j]
                    u[a, i, j] = z[a, i, j] + e_r[a, i, j]
                    z[a, i, j] = u[a, i, j]
        _rows_static(z, tho_mask, prep_cap, buf)
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    e_r[a, i, j] = u[a, i, j] - z[a, i, j]
                    u[a, i, j] = z[a, i, j] + e_c[a, i, j]
                    z[a, i, j] = u[a, i, j]
        for j in range(J):
            load = 0.0
            for i in range(I):
                if tho_mask[i]:
                    load += z[0, i, j]
                else:
                    load += z[1, i, j]
            if load > cell_cap[j]:
                d = (load - cell_cap[j]) / I
                for i in range(I):
                    if tho_mask[i]:
                        z[0, i, j] -= d
                    else:
                        z[1, i, j] -= d
        delta = 0.0
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    e_c[a, i, j] = u[a, i, j] - z[a, i, j]
                    step = abs(z[a, i, j] - prev[a, i, j])
                    if step > delta:
                        delta = step
        if delta <= tol and _static_violation(z, tho_mask, prep_cap, cell_cap) <= tol:
            return sweep + 2
    return -1


@njit(cache=True)
def _dynamic_violation(z, prep_cap, cell_cap):
    I = z.shape[1]
    J = z.shape[2]
    worst = 0.0
    for i in range(I):
        sx = 0.0
        sy = 0.0
        for j in range(J):
            for a in range(2):
                if z[a, i, j] < 0.0 and -z[a, i, j] > worst:
                    worst = -z[a, i, j]
                if z[a, i, j] > 1.0 and z[a, i, j] - 1.0 > worst:
                    worst = z[a, i, j] - 1.0
            sx += z[0, i, j]
            sy += z[1, i, j]
        for k in range(J):
            v = sx + z[1, i, k] - 1.0
            if v > worst:
                worst = v
        if sy - prep_cap[i] > worst:
            worst = sy - prep_cap[i]
        if 1.0 - sx - sy > worst:
            worst = 1.0 - sx - sy
    for j in range(J):
        load = 0.0
        for i in range(I):
            load += z[0, i, j] + z[1, i, j]
        if load - cell_cap[j] > worst:
            worst = load - cell_cap[j]
    return worst


@njit(cache=True)
def project_dynamic_kernel(z, prep_cap, cell_cap, tol, max_sweeps):
    """Project z in place onto the dynamic feasible set; returns sweep count.

    Families: entry box, the J half-spaces coupling a user's association
    mass to each of its preparation entries, the per-user preparation cap,
    the per-user "serve somehow" lower bound, and the per-cell capacities.
    Returns -1 if the sweep budget is exhausted.
    """
    I = z.shape[1]
    J = z.shape[2]
    nfam = J + 4
    e = np.zeros((nfam, 2, I, J))
    u = np.empty((2, I, J))
    prev = np.empty((2, I, J))
    for sweep in range(max_sweeps):
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    prev[a, i, j] = z[a, i, j]

        f = 0
        # box
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    un = z[a, i, j] + e[f, a, i, j]
                    zn = un
                    if zn < 0.0:
                        zn = 0.0
                    elif zn > 1.0:
                        zn = 1.0
                    z[a, i, j] = zn
                    e[f, a, i, j] = un - zn
        f += 1

        # sum_j x_ij + y_ik <= 1, one family per k
        for k in range(J):
            for i in range(I):
                s = z[1, i, k] + e[f, 1, i, k]
                for j in range(J):
                    u[0, i, j] = z[0, i, j] + e[f, 0, i, j]
                    s += u[0, i, j]
                uy = z[1, i, k] + e[f, 1, i, k]
                if s > 1.0:
                    d = (s - 1.0) / (J + 1.0)
                    for j in range(J):
                        z[0, i, j] = u[0, i, j] - d
                        e[f, 0, i, j] = d
                    z[1, i, k] = uy - d
                    e[f, 1, i, k] = d
                else:
                    for j in range(J):
                        z[0, i, j] = u[0, i, j]
                        e[f, 0, i, j] = 0.0
                    z[1, i, k] = uy
                    e[f, 1, i, k] = 0.0
            f += 1

        # sum_j y_ij <= b_i
        for i in range(I):
            s = 0.0
            for j in range(J):
                u[1, i, j] = z[1, i, j] + e[f, 1, i, j]
                s += u[1, i, j]
            if s > prep_cap[i]:
                d = (s - prep_cap[i]) / J
                for j in range(J):
                    z[1, i, j] = u[1, i, j] - d
                    e[f, 1, i, j] = d
            else:
                for j in range(J):
                    z[1, i, j] = u[1, i, j]
                    e[f, 1, i, j] = 0.0
        f += 1

        # sum_j x_ij + sum_j y_ij >= 1
        for i in range(I):
            s = 0.0
            for j in range(J):
                u[0, i, j] = z[0, i, j] + e[f, 0, i, j]
                u[1, i, j] = z[1, i, j] + e[f, 1, i, j]
                s += u[0, i, j] + u[1, i, j]
            if s < 1.0:
                d = (1.0 - s) / (2.0 * J)
                for j in range(J):
                    z[0, i, j] = u[0, i, j] + d
                    z[1, i, j] = u[1, i, j] + d
                    e[f, 0, i, j] = -d
                    e[f, 1, i, j] = -d
            else:
                for j in range(J):
                    z[0, i, j] = u[0, i, j]
                    z[1, i, j] = u[1, i, j]
                    e[f, 0, i, j] = 0.0
                    e[f, 1, i, j] = 0.0
        f += 1

        # per-cell capacity
        for j in range(J):
            load = 0.0
            for i in range(I):
                u[0, i, j] = z[0, i, j] + e[f, 0, i, j]
                u[1, i, j] = z[1, i, j] + e[f, 1, i, j]
                load += u[0, i, j] + u[1, i, j]
            if load > cell_cap[j]:
                d = (load - cell_cap[j]) / (2.0 * I)
                for i in range(I):
                    z[0, i, j] = u[0, i, j] - d
                    z[1, i, j] = u[1, i, j] - d
                    e[f, 0, i, j] = d
                    e[f, 1, i, j] = d
            else:
                for i in range(I):
                    z[0, i, j] = u[0, i, j]
                    z[1, i, j] = u[1, i, j]
                    e[f, 0, i, j] = 0.0
                    e[f, 1, i, j] = 0.0

        delta = 0.0
        for a in range(2):
            for i in range(I):
                for j in range(J):
                    step = abs(z[a, i, j] - prev[a, i, j])
                    if step > delta:
                        delta = step
        if delta <= tol and _dynamic_violation(z, prep_cap, cell_cap) <= tol:
            return sweep + 1
    return -1
