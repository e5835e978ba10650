"""SINR scenarios and switching-cost generators.

Three scenario families: block-random fields that redraw every `period`
slots (fast redraws model a volatile cell edge, slow ones a quasi-static
one), and measurement-trace scenarios where users move by a Gauss-Markov
mobility model over a map of recorded per-cell SINR samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import SwitchingCosts
from .objective import SinrTensor


@dataclass(frozen=True)
class VolatileScenario:
    """Independent uniform dB redraw per (user, cell) every `period` slots."""

    period: int = 10
    db_range: tuple = (0.0, 30.0)


@dataclass(frozen=True)
class StationaryScenario:
    """Same block-random field, but held for long stretches."""

    period: int = 200
    db_range: tuple = (0.0, 30.0)


@dataclass(frozen=True)
class TraceScenario:
    """Users roam a measured SINR map with Gauss-Markov kinematics."""

    path: str
    speed_range: tuple = (20.0, 28.0)   # m/s, per-user mean speeds
    noise_variance: float = 2.0         # speed/heading noise variance
    randomness: float = 0.9             # memory of the kinematic recurrences
    slot_seconds: float = 0.5


@dataclass(frozen=True)
class UniformCosts:
    """One price for every association change, one for every preparation."""

    tho: float = 0.5
    cho: float = 0.1


@dataclass(frozen=True)
class HeterogeneousCosts:
    """Per-(user, cell) prices: tho in (b_max, a_max], cho in (0, b_max]."""

    a_max: float = 1.0
    b_max: float = 0.2


@dataclass(frozen=True)
class MobilityTrace:
    """Measurement records: planar positions (meters) and per-cell SINR (dB).

    Missing measurements are NaN and mean "no signal" (zero linear SINR).
    """

    positions: np.ndarray   # (N, 2)
    sinr_db: np.ndarray     # (N, J), NaN = missing
    warnings: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        db = np.asarray(self.sinr_db, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or db.ndim != 2 \
                or db.shape[0] != pos.shape[0]:
            raise ValueError("positions must be (N, 2) and sinr_db (N, J)")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sinr_db", db)

    @property
    def num_cells(self):
        return self.sinr_db.shape[1]


def db_to_linear(db):
    """dB to linear power ratio; NaN (missing measurement) maps to 0."""
    db = np.asarray(db, dtype=float)
    return np.where(np.isnan(db), 0.0, np.power(10.0, db / 10.0))


def compute_sinr(tx_power, gain, bandwidth, noise_psd, co_channel=None):
    """Physical SINR: serving power over noise plus co-channel interference.

    tx_power (J,), gain (..., I, J), bandwidth (J,), noise_psd scalar.
    `co_channel[j]` lists the cells whose transmissions interfere at cell j
    (default: all other cells).
    """
    tx_power = np.asarray(tx_power, dtype=float)
    gain = np.asarray(gain, dtype=float)
    bandwidth = np.asarray(bandwidth, dtype=float)
    j_cells = tx_power.shape[0]
    mask = np.ones((j_cells, j_cells)) - np.eye(j_cells)
    if co_channel is not None:
        mask = np.zeros((j_cells, j_cells))
        for j, others in enumerate(co_channel):
            mask[j, list(others)] = 1.0
        if np.any(np.diag(mask)):
            raise ValueError("a cell cannot interfere with itself")
    received = gain * tx_power
    interference = np.einsum("...ik,jk->...ij", received, mask)
    return received / (bandwidth * noise_psd + interference)


def gen_block_sinr(num_users, num_cells, horizon, period, db_range, rng):
    """Block-random SINR field: uniform dB draws held for `period` slots."""
    if period < 1:
        raise ValueError("period must be >= 1")
    lo, hi = db_range
    if hi < lo:
        raise ValueError("empty dB range")
    blocks = -(-horizon // period)
    db = rng.uniform(lo, hi, size=(blocks, num_users, num_cells))
    full = np.repeat(db, period, axis=0)[:horizon]
    return SinrTensor(values=db_to_linear(full), source="block")


def gen_gauss_markov(trace, num_users, horizon, speed_range=(20.0, 28.0),
                     noise_variance=2.0, randomness=0.9, slot_seconds=0.5,
                     rng=None, return_kinematics=False):
    """SINR stream for users roaming a trace map with Gauss-Markov motion.

    Speeds and headings follow v <- beta v + (1-beta) v_mean +
    sqrt(1-beta^2) n with n ~ N(0, noise_variance); positions integrate the
    velocity each slot and read the nearest measurement record.  Per-user
    mean speeds are drawn uniformly from `speed_range`.
    """
    if rng is None:
        raise ValueError("pass an explicit numpy Generator")
    beta = float(randomness)
    if not 0.0 <= beta < 1.0:
        raise ValueError("randomness must lie in [0, 1)")
    if not 0.0 <= noise_variance <= 5.0:
        raise ValueError("noise variance must lie in [0, 5]")
    sigma = math.sqrt(noise_variance)
    n = trace.positions.shape[0]
    if n == 0:
        raise ValueError("trace has no records")

    tree = cKDTree(trace.positions)
    start = rng.integers(0, n, size=num_users)
    pos = trace.positions[start].copy()
    v_mean = rng.uniform(speed_range[0], speed_range[1], size=num_users)
    h_mean = rng.uniform(0.0, 2.0 * math.pi, size=num_users)
    v = v_mean.copy()
    h = h_mean.copy()

    linear = db_to_linear(trace.sinr_db)
    sinr = np.empty((horizon, num_users, trace.num_cells))
    speeds = np.empty((horizon, num_users)) if return_kinematics else None
    positions = np.empty((horizon, num_users, 2)) if return_kinematics else None
    root = math.sqrt(1.0 - beta * beta)
    for t in range(horizon):
        _, idx = tree.query(pos)
        sinr[t] = linear[idx]
        if return_kinematics:
            speeds[t] = v
            positions[t] = pos
        v = beta * v + (1.0 - beta) * v_mean \
            + root * rng.normal(0.0, sigma, size=num_users)
        h = beta * h + (1.0 - beta) * h_mean \
            + root * rng.normal(0.0, sigma, size=num_users)
        pos = pos + (v * slot_seconds)[:, None] \
            * np.stack([np.cos(h), np.sin(h)], axis=1)
    tensor = SinrTensor(values=sinr, source="trace")
    if return_kinematics:
        return tensor, {"speeds": speeds, "positions": positions,
                        "mean_speeds": v_mean}
    return tensor


def gen_costs(cost_cfg, num_users, num_cells, rng=None):
    """Materialize switching costs (constant in time) from a cost config."""
    if isinstance(cost_cfg, UniformCosts):
        tho = np.full((1, num_users, num_cells), float(cost_cfg.tho))
        cho = np.full((1, num_users, num_cells), float(cost_cfg.cho))
        return SwitchingCosts(tho=tho, cho=cho, a_max=float(cost_cfg.tho),
                              b_max=float(cost_cfg.cho))
    if isinstance(cost_cfg, HeterogeneousCosts):
        if rng is None:
            raise ValueError("heterogeneous costs need an rng")
        a_max, b_max = float(cost_cfg.a_max), float(cost_cfg.b_max)
        u = rng.random((1, num_users, num_cells))
        tho = a_max - u * (a_max - b_max)       # in (b_max, a_max]
        w = rng.random((1, num_users, num_cells))
        cho = b_max * (1.0 - w)                 # in (0, b_max]
        return SwitchingCosts(tho=tho, cho=cho, a_max=a_max, b_max=b_max)
    raise TypeError(f"unknown cost config {type(cost_cfg).__name__}")


def realize(scenario, config, rng):
    """SINR tensor for a scenario under a network config."""
    if isinstance(scenario, (VolatileScenario, StationaryScenario)):
        return gen_block_sinr(config.num_users, config.num_cells,
                              config.horizon, scenario.period,
                              scenario.db_range, rng)
    if isinstance(scenario, TraceScenario):
        trace = load_trace(scenario.path)
        if trace.num_cells != config.num_cells:
            raise ValueError(
                f"trace has {trace.num_cells} cells, config expects "
                f"{config.num_cells}")
        return gen_gauss_markov(
            trace, config.num_users, config.horizon,
            speed_range=scenario.speed_range,
            noise_variance=scenario.noise_variance,
            randomness=scenario.randomness,
            slot_seconds=scenario.slot_seconds, rng=rng)
    raise TypeError(f"unknown scenario {type(scenario).__name__}")


CALIBRATION_SLOTS = 100


def declared_rate_ceiling(scenario, config, rates=None):
    """Rate ceiling the learner's bounds are computed against.

    Block scenarios declare it in closed form from their dB range; trace
    scenarios freeze the maximum rate observed in a calibration prefix.
    """
    if isinstance(scenario, (VolatileScenario, StationaryScenario)):
        top = db_to_linear(scenario.db_range[1])
        return float(np.max(config.bandwidth) * np.log1p(top))
    if isinstance(scenario, TraceScenario):
        if rates is None:
            raise ValueError("trace scenarios calibrate from realized rates")
        prefix = rates.values[:CALIBRATION_SLOTS]
        ceiling = float(prefix.max())
        if ceiling <= 0:
            raise ValueError("calibration prefix saw no live link")
        return ceiling
    raise TypeError(f"unknown scenario {type(scenario).__name__}")


def trace_header(num_cells):
    return ["lat_m", "lon_m"] + [f"sinr_db_cell_{j}" for j in range(num_cells)]


def load_trace(path):
    """Read a mobility trace CSV; see `trace_header` for the layout.

    Blank SINR fields are missing measurements (NaN).  Rows with too few
    fields are padded with NaN and counted in `warnings`; non-numeric
    fields or a bad header raise with the offending line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["lat_m", "lon_m"] or len(header) < 3:
            raise ValueError(f"{path}:1: bad header {header[:3]}...")
        num_cells = len(header) - 2
        if header != trace_header(num_cells):
            raise ValueError(f"{path}:1: bad SINR column names")

        positions, sinr, warnings = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) > len(header):
                raise ValueError(f"{path}:{lineno}: too many fields")
            if len(row) < len(header):
                warnings += 1
                row = row + [""] * (len(header) - len(row))
            try:
                pos = [float(row[0]), float(row[1])]
                db = [float(f) if f.strip() else math.nan for f in row[2:]]
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric field") from None
            positions.append(pos)
            sinr.append(db)
    if not positions:
        raise ValueError(f"{path}: no records")
    return MobilityTrace(positions=np.array(positions),
                         sinr_db=np.array(sinr), warnings=warnings)


def save_trace(trace, path):
    """Write a mobility trace CSV (NaN SINR becomes a blank field)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_header(trace.num_cells))
        for pos, db in zip(trace.positions, trace.sinr_db):
            row = [repr(float(pos[0])), repr(float(pos[1]))]
            row += ["" if math.isnan(v) else repr(float(v)) for v in db]
            writer.writerow(row)


def gen_synthetic_trace(num_cells, num_records, area_m=2000.0, rng=None,
                        tx_power=1.0, noise_psd=1e-12, pathloss_exp=3.5,
                        shadow_db=6.0):
    """Synthetic measurement map: grid of cells, log-distance pathloss.

    Cells sit on a square grid over the area; each record is a uniform
    location whose per-cell SINR comes from `compute_sinr` with log-normal
    shadowing.  Good enough to exercise the trace pipeline end to end.
    """
    if rng is None:
        raise ValueError("pass an explicit numpy Generator")
    side = math.ceil(math.sqrt(num_cells))
    pitch = area_m / side
    sites = np.array([[(j % side + 0.5) * pitch, (j // side + 0.5) * pitch]
                      for j in range(num_cells)])
    points = rng.uniform(0.0, area_m, size=(num_records, 2))
    d = np.linalg.norm(points[:, None, :] - sites[None, :, :], axis=2)
    d = np.maximum(d, 10.0)
    shadow = rng.normal(0.0, shadow_db, size=d.shape)
    gain = d ** (-pathloss_exp) * np.power(10.0, shadow / 10.0)
    power = np.full(num_cells, float(tx_power))
    bandwidth = np.ones(num_cells)
    sinr = compute_sinr(power, gain, bandwidth, noise_psd)
    sinr_db = 10.0 * np.log10(np.maximum(sinr, 1e-30))
    return MobilityTrace(positions=points, sinr_db=sinr_db)
