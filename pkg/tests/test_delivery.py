import dataclasses
import json

import numpy as np
import pytest

from synthetic import make_scenario
from cachesec.delivery import (CooperationDecision, backhaul_loads, dump_trial,
                               effective_backhaul_rate, exhaustive_delivery, extract_beamformer,
                               full_cooperation, greedy_delivery, maximal_feasible_sets,
                               rank_ratio, solve_fixed_cooperation, violation_set)
from cachesec.model import reduced_config


def small_config(**kw):
    base = dict(num_bs=2, antennas_per_bs=2, num_lr=2, num_files=2, er_antennas=1)
    base.update(kw)
    return reduced_config(**base)


def test_effective_backhaul_rate():
    assert np.allclose(effective_backhaul_rate([0.0, 0.25, 1.0], 4.0), [4.0, 3.0, 0.0])
    with pytest.raises(ValueError):
        effective_backhaul_rate(1.5, 1.0)


def test_backhaul_loads_and_violations():
    cfg = small_config()
    Q = cfg.subfile_rate
    sc = make_scenario(np.random.default_rng(0), backhaul=[1.5 * Q, 0.0])
    q = full_cooperation(sc, cfg)
    c = np.array([[0.5, 1.0], [0.0, 1.0]])
    # BS 0 carries half of file 0 and all of file 1
    assert np.allclose(backhaul_loads(q, c, sc, cfg), [1.5 * Q, 0.0])
    assert violation_set(q, c, sc, cfg) == []
    assert violation_set(q, np.zeros((2, 2)), sc, cfg) == [0, 1]
    d = CooperationDecision.from_q(q, c, sc, cfg)
    assert np.allclose(d.b, [[0.5, 0.0], [1.0, 0.0]])
    assert d.coop_sets == {0: (0, 1), 1: (0, 1)}


def test_extraction_of_rank_one_and_zero():
    rng = np.random.default_rng(1)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v, ratio = extract_beamformer(np.outer(w, w.conj()))
    assert ratio < 1e-12
    # recovered up to a common phase
    assert abs(np.vdot(v, w)) == pytest.approx(np.linalg.norm(w) ** 2)
    z, r = extract_beamformer(np.zeros((3, 3)))
    assert np.all(z == 0) and r == 0.0
    assert rank_ratio(np.diag([1.0, 0.5])) == pytest.approx(0.5)
    # rank two without a randomizer cannot be extracted
    assert extract_beamformer(np.diag([1.0, 0.5]))[0] is None


def test_randomized_extraction_uses_callback():
    W = np.diag([1.0, 1.0])
    calls = []

    def accept(xi):
        calls.append(xi)
        return xi, float(np.vdot(xi, xi).real)

    w, ratio = extract_beamformer(W, randomize=accept, num_candidates=5)
    assert ratio == pytest.approx(1.0)
    assert len(calls) == 5
    assert np.vdot(w, w).real == pytest.approx(min(np.vdot(x, x).real for x in calls))


def test_fixed_cooperation_solution_passes_audit():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(2), er_scale=1.0)
    sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), "robust")
    assert sol.feasible
    assert max(sol.diagnostics["audit"].values()) <= 1e-6
    assert np.all(sol.rank_ratios <= 1e-4)
    assert sol.per_bs_power.sum() == pytest.approx(sol.total_power)


def test_request_without_server_is_infeasible():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(3))
    q = np.array([[1, 1], [0, 0]])
    assert solve_fixed_cooperation(sc, cfg, q).status == "infeasible"


def test_greedy_without_violations_keeps_full_cooperation():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(4), er_scale=1.0)
    d, sol = greedy_delivery(sc, cfg, np.ones((2, 2)))
    assert sol.feasible
    assert d.iteration_log == []
    assert np.array_equal(d.q, full_cooperation(sc, cfg))


def test_greedy_matches_exhaustive_on_tight_backhaul():
    cfg = small_config()
    Q = cfg.subfile_rate
    rng = np.random.default_rng(5)
    for _ in range(4):
        sc = make_scenario(rng, er_scale=1.0, backhaul=[Q, Q])
        g_dec, g = greedy_delivery(sc, cfg, np.zeros((2, 2)))
        e_dec, e = exhaustive_delivery(sc, cfg, np.zeros((2, 2)))
        # an outage counts as infinite power
        assert g.sdp_objective >= e.sdp_objective * (1 - 1e-6)
        if g.feasible:
            assert violation_set(g_dec.q, None, sc, cfg) == []
            assert len(g_dec.iteration_log) == 2


def test_greedy_tie_breaks_on_lowest_bs_then_file():
    # identical channels to both BSs for a single LR make the removals tie
    cfg = small_config(num_lr=1)
    sc = make_scenario(np.random.default_rng(6), files=(1,), backhaul=[0.0, 0.0],
                       estimate=np.zeros(4), er_channel=np.zeros(4))
    h = np.array([1.0, 0.5j, 1.0, 0.5j])
    sc = dataclasses.replace(sc, lr_channels=h[None, :])
    c = np.array([[0.0, 0.0], [0.0, 0.0]])
    d, sol = greedy_delivery(sc, cfg, c)
    # removing one BS is feasible, the second removal leaves no server
    assert d.iteration_log[0]["bs"] == 0 and d.iteration_log[0]["file"] == 1
    assert sol.status == "infeasible"
    c = np.array([[0.0, 0.0], [0.0, 1.0]])
    d, sol = greedy_delivery(sc, cfg, c)
    assert sol.feasible
    assert d.coop_sets == {1: (1,)}


def test_greedy_keeps_fully_cached_pairs():
    # file 0 is cached at BS 0, file 1 is not; BS 0 has no backhaul
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(8), backhaul=[0.0, 2 * cfg.subfile_rate])
    c = np.array([[1.0, 0.0], [0.0, 0.0]])
    d, sol = greedy_delivery(sc, cfg, c)
    assert sol.feasible
    assert [(r["file"], r["bs"]) for r in d.iteration_log] == [(1, 0)]
    assert d.coop_sets == {0: (0, 1), 1: (1,)}


def test_maximal_sets_are_maximal_and_feasible():
    cfg = small_config()
    Q = cfg.subfile_rate
    sc = make_scenario(np.random.default_rng(7), backhaul=[Q, 0.0])
    sets = maximal_feasible_sets(sc, cfg, np.zeros((2, 2)))
    # BS 1 can never serve, BS 0 serves one of the two files
    assert len(sets) == 2
    for q in sets:
        assert q[:, 1].sum() == 0 and q[:, 0].sum() == 1


def test_exhaustive_respects_size_cap():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(8))
    with pytest.raises(ValueError):
        exhaustive_delivery(sc, cfg, None, size_cap=3)


def test_dump_is_json():
    cfg = small_config()
    sc = make_scenario(np.random.default_rng(9), er_scale=1.0)
    d, sol = greedy_delivery(sc, cfg, np.ones((2, 2)))
    text = dump_trial(d, sol)
    data = json.loads(text)
    assert data["solution"]["status"] == "feasible"
    assert data["decision"]["q"] == d.q.tolist()
    assert dump_trial(d, sol) == text
