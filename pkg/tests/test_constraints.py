import dataclasses

import numpy as np
import pytest

from synthetic import make_scenario
from cachesec.constraints import (TARGET_MARGIN, assemble_R1, build_bigm_coupling,
                                  build_power_constraints, build_sinr_constraints,
                                  make_constraint_set, support_from_q)
from cachesec.delivery import full_cooperation, solve_fixed_cooperation
from cachesec.model import reduced_config
from cachesec.rates import er_capacity, worst_case_er_rate
from cachesec.sdp import solve_sdp


def small_config(**kw):
    base = dict(num_bs=2, antennas_per_bs=2, num_lr=2, num_files=2, er_antennas=1)
    base.update(kw)
    return reduced_config(**base)


def test_targets_carry_the_margin():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(0))
    cs = make_constraint_set(sc, cfg)
    assert np.allclose(cs.sinr_targets, cfg.sinr_target * (1 + TARGET_MARGIN))
    assert np.allclose(cs.secrecy_targets, cfg.secrecy_target * (1 - TARGET_MARGIN))
    assert cs.radius == sc.uncertainty_radius
    assert make_constraint_set(sc, cfg, er_channel=sc.er_channel).radius == 0.0


def test_bigm_half_flag_halves_the_cap():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(1))
    cs = make_constraint_set(sc, cfg)
    rows = build_bigm_coupling(cs, np.full((2, 2), 0.5), 10.0)
    assert len(rows) == 4
    assert all(r.rhs == 5.0 and r.sense == "<=" for r in rows)
    named = build_bigm_coupling(cs, [["a", "b"], ["c", "d"]], 10.0)
    assert named[0].scalars == {"a": -10.0}


def test_sinr_and_power_rows():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(2))
    cs = make_constraint_set(sc, cfg, power_unit=1.0)
    sinr = build_sinr_constraints(cs)
    H0 = np.outer(sc.lr_channels[0], sc.lr_channels[0].conj())
    assert np.allclose(sinr[0].blocks[cs.w(0)], H0 / cs.sinr_targets[0])
    assert np.allclose(sinr[0].blocks[cs.w(1)], -H0)
    assert np.allclose(sinr[0].blocks[cs.v], -H0)
    power = build_power_constraints(cs, 3.0)
    assert np.allclose(power[1].blocks[cs.v], np.diag([0, 0, 1, 1]))


def test_single_user_closed_form():
    # one LR, no eavesdropper leakage: p* = kappa / ||h||^2
    cfg = small_config(num_lr=1)
    rng = np.random.default_rng(3)
    sc = make_scenario(rng, files=(0,), estimate=np.zeros(4), er_channel=np.zeros(4))
    sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), "perfect")
    expected = cfg.sinr_target * (1 + TARGET_MARGIN) / np.linalg.norm(sc.lr_channels[0]) ** 2
    assert sol.feasible
    assert sol.total_power == pytest.approx(expected, rel=1e-6)


def test_perfect_rank_one_meets_leakage_bound():
    cfg = small_config(er_antennas=2)
    rng = np.random.default_rng(4)
    for _ in range(3):
        sc = make_scenario(rng, er_antennas=2, er_scale=1.0)
        sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), "perfect")
        assert sol.feasible
        for w in sol.beamformers:
            rate = er_capacity(sc.er_channel, w, sol.an_covariance)
            assert rate <= np.log2(1 + cfg.secrecy_target) + 1e-6


def test_elimination_matches_bigm_form():
    cfg = small_config()
    rng = np.random.default_rng(5)
    q = np.array([[1, 0], [1, 1]])
    for mode in ("robust", "perfect"):
        sc = make_scenario(rng)
        ia = assemble_R1(sc, cfg, q, mode, eliminate=True)
        ib = assemble_R1(sc, cfg, q, mode, eliminate=False)
        a, b = solve_sdp(ia.problem), solve_sdp(ib.problem)
        assert a.status == b.status == "optimal"
        assert a.objective * ia.cset.power_unit == \
            pytest.approx(b.objective * ib.cset.power_unit, rel=1e-6)


def test_support_from_q():
    s = support_from_q(np.array([[1, 0], [0, 1]]), (1, 0), 2, 2)
    assert s[0].tolist() == [2, 3]
    assert s[1].tolist() == [0, 1]


def test_small_radius_approaches_nonrobust():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(6), er_scale=1.0)
    q = full_cooperation(sc, cfg)
    tiny = dataclasses.replace(sc, uncertainty_radius=1e-9 * np.linalg.norm(sc.er_estimate))
    robust = solve_fixed_cooperation(tiny, cfg, q, "robust")
    plain = solve_fixed_cooperation(sc, cfg, q, "nonrobust")
    assert robust.total_power == pytest.approx(plain.total_power, rel=1e-5)


def test_power_grows_with_radius():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(7), er_scale=1.0)
    q = full_cooperation(sc, cfg)
    powers = []
    for frac in (0.05, 0.1, 0.2):
        s = dataclasses.replace(sc, uncertainty_radius=frac * np.linalg.norm(sc.er_estimate))
        sol = solve_fixed_cooperation(s, cfg, q, "robust")
        assert sol.feasible
        powers.append(sol.total_power)
    assert powers[0] <= powers[1] * (1 + 1e-6)
    assert powers[1] <= powers[2] * (1 + 1e-6)


def test_robust_solution_is_secure_over_ball():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(8), er_scale=1.0)
    sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), "robust")
    assert sol.feasible
    bound = np.log2(1 + cfg.secrecy_target) + 1e-6
    for w in sol.beamformers:
        wc = worst_case_er_rate(sc.er_estimate, sc.uncertainty_radius, w, sol.an_covariance,
                                n_samples=500, rng=np.random.default_rng(0))
        assert wc <= bound


def test_assemble_rejects_bad_input():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(9))
    with pytest.raises(ValueError):
        assemble_R1(sc, cfg, np.ones((3, 2)))
    with pytest.raises(ValueError):
        assemble_R1(sc, cfg, np.ones((2, 2)), mode="magic")
