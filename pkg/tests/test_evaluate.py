import dataclasses
import math

import numpy as np
import pytest

from synthetic import make_scenario
from cachesec.evaluate import (CSV_COLUMNS, SweepRow, TrialResult, aggregate, capacity_bits,
                               coordinated_assignment, power_dbm, rows_to_csv, run_cache_sweep,
                               secrecy_outage_probability, secrecy_report, split_scheme,
                               trial_result)
from cachesec.delivery import (CooperationDecision, TransmitSolution, full_cooperation,
                               solve_fixed_cooperation)
from cachesec.model import reduced_config


def small_config(**kw):
    base = dict(num_bs=2, antennas_per_bs=2, num_lr=2, num_files=2, er_antennas=1)
    base.update(kw)
    return reduced_config(**base)


def test_infeasible_trial_is_an_outage():
    t = TrialResult("x", 1.0, feasible=False, outage=False, min_secrecy_rate=-2.0)
    assert t.outage
    assert t.min_secrecy_rate == 0.0


def test_outage_probability():
    trials = [TrialResult("x", 0.0, feasible=f, outage=o)
              for f, o in ((True, False), (True, False), (False, False))]
    assert secrecy_outage_probability(trials) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        secrecy_outage_probability([])


def test_scheme_names():
    assert split_scheme("proposed+greedy") == ("proposed", "greedy")
    for bad in ("proposed", "magic+greedy", "uniform+magic"):
        with pytest.raises(ValueError):
            split_scheme(bad)


def test_power_dbm():
    assert power_dbm(1.0) == pytest.approx(30.0)
    assert power_dbm(1e-3) == pytest.approx(0.0)
    assert power_dbm(0.0) == -math.inf


def test_coordinated_skips_nearest_bs_without_backhaul():
    cfg = small_config()
    Q = cfg.subfile_rate
    sc = make_scenario(np.random.default_rng(0), backhaul=[0.0, 2 * Q])
    sc = dataclasses.replace(sc, lr_distances=np.array([[50.0, 300.0], [60.0, 200.0]]))
    q = coordinated_assignment(sc, cfg, None)
    # the nearest BS has no backhaul, the second nearest takes both files
    assert q.tolist() == [[0, 1], [0, 1]]
    # a full cache at the nearest BS makes it usable
    q = coordinated_assignment(sc, cfg, np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert q.tolist() == [[1, 0], [0, 1]]
    # residual backhaul runs out
    sc2 = dataclasses.replace(sc, backhaul_caps=np.array([0.0, Q]))
    assert coordinated_assignment(sc2, cfg, None) is None


def test_repeated_file_reuses_assignment():
    cfg = small_config()
    Q = cfg.subfile_rate
    sc = make_scenario(np.random.default_rng(1), files=(1, 1), backhaul=[Q, Q])
    sc = dataclasses.replace(sc, lr_distances=np.array([[50.0, 300.0], [300.0, 50.0]]))
    q = coordinated_assignment(sc, cfg, None)
    assert q.tolist() == [[0, 0], [1, 0]]


def test_secrecy_report_and_trial_result():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(2), er_scale=1.0)
    q = full_cooperation(sc, cfg)
    sol = solve_fixed_cooperation(sc, cfg, q, "robust")
    rep = secrecy_report(sc, cfg, sol.beamformers, sol.an_covariance, n_samples=200)
    # the QoS rate minus the leakage bound is the secrecy target
    assert np.all(rep["lr_rate"] >= cfg.qos_se - 1e-6)
    assert np.all(rep["er_rate"] <= cfg.tolerance_se + 1e-6)
    assert np.all(rep["secrecy_rate"] >= cfg.secrecy_rate_target - 1e-6)
    dec = CooperationDecision.from_q(q, None, sc, cfg)
    res = trial_result("proposed+greedy", sc, cfg, dec, sol, n_samples=200)
    assert res.feasible and not res.outage
    assert res.avg_coop_bs == 2.0
    assert res.total_power == pytest.approx(sol.total_power)
    bad = trial_result("x", sc, cfg, dec, TransmitSolution("infeasible"))
    assert bad.outage and bad.total_power == math.inf


def test_aggregate_and_csv():
    trials = [TrialResult("s", 0.0, True, total_power=1e-3, avg_coop_bs=2.0, outage=False),
              TrialResult("s", 0.0, True, total_power=3e-3, avg_coop_bs=1.0, outage=False),
              TrialResult("s", 0.0, False)]
    row = aggregate(trials, 50.0, "s", 7)
    assert row.n_trials == 3 and row.n_feasible == 2
    assert row.avg_power_dBm == pytest.approx(power_dbm(2e-3))
    assert row.p_out == pytest.approx(1 / 3)
    assert row.avg_coop_bs == 1.5
    text = rows_to_csv([row, SweepRow(0.0, "u", 0, 0, math.nan, math.nan, math.nan, 7)])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "50.000000,s,3,2,%.6f,0.333333,1.500000,7" % power_dbm(2e-3)
    assert lines[2] == "0.000000,u,0,0,nan,nan,nan,7"


def test_capacity_bits():
    cfg = reduced_config()
    assert capacity_bits(cfg, 50) == pytest.approx(0.5 * cfg.library_size)


def test_small_sweep_is_deterministic():
    cfg = reduced_config()
    kw = dict(schemes=["preference+greedy", "uniform+coordinated"], capacity_grid=[0, 100],
              n_trials=2, master_seed=3)
    a = run_cache_sweep(cfg, **kw)
    b = run_cache_sweep(cfg, **kw)
    assert rows_to_csv(a) == rows_to_csv(b)
    assert [r.scheme for r in a] == ["preference+greedy", "uniform+coordinated"] * 2
    assert [r.capacity_pct for r in a] == [0.0, 0.0, 100.0, 100.0]
    # common random numbers: every scheme sees the same trial seeds
    assert [t.seed for t in a[0].trials] == [t.seed for t in a[3].trials]
