"""Scenario generation: SINR fields, costs, and mobility traces."""

import numpy as np
import pytest

from metaho import (VolatileScenario, StationaryScenario, TraceScenario,
                    UniformCosts, HeterogeneousCosts, MobilityTrace,
                    realize, gen_costs, gen_block_sinr, gen_gauss_markov,
                    compute_sinr, declared_rate_ceiling, load_trace,
                    save_trace, gen_synthetic_trace, RateTensor)
from metaho.scenario import db_to_linear, trace_header

from conftest import static_net


def test_db_to_linear():
    np.testing.assert_allclose(db_to_linear([0.0, 10.0, 30.0]),
                               [1.0, 10.0, 1000.0])
    assert db_to_linear(np.nan) == 0.0


def test_compute_sinr_hand_value():
    tx = np.array([2.0, 1.0])
    gain = np.array([[0.5, 1.0]])
    bw = np.ones(2)
    sinr = compute_sinr(tx, gain, bw, noise_psd=0.1)
    # received power is (1, 1); each cell sees the other as interference
    np.testing.assert_allclose(sinr[0], [1.0 / 1.1, 1.0 / 1.1])

    quiet = compute_sinr(tx, gain, bw, noise_psd=0.1, co_channel=[[], []])
    np.testing.assert_allclose(quiet[0], [10.0, 10.0])

    with pytest.raises(ValueError):
        compute_sinr(tx, gain, bw, 0.1, co_channel=[[0], []])


def test_block_sinr_structure():
    rng = np.random.default_rng(50)
    sinr = gen_block_sinr(2, 3, horizon=25, period=10, db_range=(0.0, 30.0),
                          rng=rng)
    v = sinr.values
    assert v.shape == (25, 2, 3)
    np.testing.assert_array_equal(v[0], v[9])      # inside one block
    np.testing.assert_array_equal(v[10], v[19])
    assert np.any(v[9] != v[10])                   # redraw at the boundary
    assert v.min() >= 1.0 and v.max() <= 1000.0    # the dB range, linear

    again = gen_block_sinr(2, 3, 25, 10, (0.0, 30.0),
                           np.random.default_rng(50))
    np.testing.assert_array_equal(v, again.values)

    with pytest.raises(ValueError):
        gen_block_sinr(2, 3, 25, 0, (0.0, 30.0), rng)
    with pytest.raises(ValueError):
        gen_block_sinr(2, 3, 25, 10, (30.0, 0.0), rng)


def test_realize_dispatch_and_trace_cell_check(tmp_path):
    net = static_net(2, 0, num_cells=3, horizon=12)
    sinr = realize(VolatileScenario(period=4), net, np.random.default_rng(1))
    assert sinr.values.shape == (12, 2, 3)

    trace = gen_synthetic_trace(4, 30, rng=np.random.default_rng(2))
    path = tmp_path / "map.csv"
    save_trace(trace, path)
    with pytest.raises(ValueError):
        realize(TraceScenario(path=str(path)), net, np.random.default_rng(3))


def test_gen_costs_uniform():
    costs = gen_costs(UniformCosts(tho=0.5, cho=0.1), 3, 2)
    np.testing.assert_allclose(costs.tho, 0.5)
    np.testing.assert_allclose(costs.cho, 0.1)
    assert costs.a_max == 0.5 and costs.b_max == 0.1
    assert costs.num_slots == 1


def test_gen_costs_heterogeneous_ranges():
    cfg = HeterogeneousCosts(a_max=1.0, b_max=0.2)
    costs = gen_costs(cfg, 10, 5, rng=np.random.default_rng(51))
    assert costs.tho.min() > 0.2 and costs.tho.max() <= 1.0
    assert costs.cho.min() > 0.0 and costs.cho.max() <= 0.2
    assert costs.tho.std() > 0                     # genuinely heterogeneous
    with pytest.raises(ValueError):
        gen_costs(cfg, 10, 5)                      # rng required


def test_declared_ceiling_block():
    net = static_net(2, 0, num_cells=2, bandwidth=2.0)
    ceiling = declared_rate_ceiling(VolatileScenario(db_range=(0.0, 30.0)),
                                    net)
    assert ceiling == pytest.approx(2.0 * np.log1p(1000.0))


def test_declared_ceiling_trace(tmp_path):
    trace = gen_synthetic_trace(2, 20, rng=np.random.default_rng(4))
    path = tmp_path / "map.csv"
    save_trace(trace, path)
    scenario = TraceScenario(path=str(path))
    values = np.zeros((150, 1, 2))
    values[30, 0, 1] = 7.5                         # inside the prefix
    values[140, 0, 0] = 99.0                       # after it: ignored
    rates = RateTensor(values=values, log_lifted=np.zeros_like(values))
    net = static_net(1, 0, num_cells=2, horizon=150)
    assert declared_rate_ceiling(scenario, net, rates=rates) == 7.5
    with pytest.raises(ValueError):
        declared_rate_ceiling(scenario, net)       # needs realized rates
    dead = RateTensor(values=np.zeros((5, 1, 2)),
                      log_lifted=np.zeros((5, 1, 2)))
    with pytest.raises(ValueError):
        declared_rate_ceiling(scenario, net, rates=dead)


def test_trace_roundtrip_preserves_missing(tmp_path):
    trace = gen_synthetic_trace(3, 12, rng=np.random.default_rng(5))
    db = trace.sinr_db.copy()
    db[4, 1] = np.nan
    trace = MobilityTrace(positions=trace.positions, sinr_db=db)
    path = tmp_path / "map.csv"
    save_trace(trace, path)
    back = load_trace(path)
    np.testing.assert_array_equal(back.positions, trace.positions)
    np.testing.assert_array_equal(back.sinr_db, trace.sinr_db)
    assert np.isnan(back.sinr_db[4, 1])
    assert back.warnings == 0


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


def test_load_trace_errors(tmp_path):
    p = tmp_path / "t.csv"

    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_trace(p)

    write_lines(p, ["x,y,sinr_db_cell_0", "0,0,1"])
    with pytest.raises(ValueError, match=":1:"):
        load_trace(p)

    write_lines(p, [",".join(trace_header(1)), "0,0,1,9"])
    with pytest.raises(ValueError, match=":2: too many fields"):
        load_trace(p)

    write_lines(p, [",".join(trace_header(1)), "0,0,oops"])
    with pytest.raises(ValueError, match=":2: non-numeric"):
        load_trace(p)

    write_lines(p, [",".join(trace_header(1))])
    with pytest.raises(ValueError, match="no records"):
        load_trace(p)


def test_load_trace_short_and_blank_rows(tmp_path):
    p = tmp_path / "t.csv"
    write_lines(p, [",".join(trace_header(2)),
                    "0.0,0.0,3.5,",          # blank field: missing, no warning
                    "",                       # blank line: skipped
                    "1.0,1.0",                # short row: padded, warned
                    "2.0,2.0,1.0,2.0"])
    trace = load_trace(p)
    assert trace.positions.shape == (3, 2)
    assert np.isnan(trace.sinr_db[0, 1])
    assert np.all(np.isnan(trace.sinr_db[1]))
    assert trace.warnings == 1


def test_gauss_markov_reads_trace_records():
    trace = gen_synthetic_trace(3, 50, rng=np.random.default_rng(6))
    sinr = gen_gauss_markov(trace, num_users=4, horizon=6,
                            rng=np.random.default_rng(7))
    assert sinr.values.shape == (6, 4, 3)
    linear = db_to_linear(trace.sinr_db)
    flat = sinr.values.reshape(-1, 3)
    for row in flat:
        assert np.any(np.all(np.isclose(linear, row[None]), axis=1))

    again = gen_gauss_markov(trace, 4, 6, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(sinr.values, again.values)


def test_gauss_markov_parameter_guards():
    trace = gen_synthetic_trace(2, 10, rng=np.random.default_rng(8))
    with pytest.raises(ValueError):
        gen_gauss_markov(trace, 2, 5)                       # rng required
    with pytest.raises(ValueError):
        gen_gauss_markov(trace, 2, 5, randomness=1.0,
                         rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen_gauss_markov(trace, 2, 5, noise_variance=6.0,
                         rng=np.random.default_rng(0))


def test_synthetic_trace_shapes():
    trace = gen_synthetic_trace(5, 40, area_m=500.0,
                                rng=np.random.default_rng(9))
    assert trace.positions.shape == (40, 2)
    assert trace.num_cells == 5
    assert trace.positions.min() >= 0.0 and trace.positions.max() <= 500.0
    with pytest.raises(ValueError):
        gen_synthetic_trace(5, 40)
