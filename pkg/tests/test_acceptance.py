"""Acceptance suite at desk scale.

Each test prints one ``criterion N: PASS/FAIL`` line with its figures and
then asserts. Sweeps shared by several criteria are module fixtures.
The whole module takes roughly half an hour on one core.
"""

import itertools

import numpy as np
import pytest

from analytic_sdp import analytic_cases
from synthetic import cn, make_scenario
from cachesec import cli
from cachesec.caching import preference_caching, train_cache, training_scenarios
from cachesec.constraints import build_robust_secrecy_lmi, declare_variables, make_constraint_set
from cachesec.constraints import add_constraints
from cachesec.delivery import (AUDIT_TOL, RANK_TOL, BACKHAUL_SLACK, exhaustive_delivery,
                               full_cooperation, greedy_delivery, solve_fixed_cooperation,
                               violation_set)
from cachesec.evaluate import run_cache_sweep, secrecy_report
from cachesec.model import derive_seed, draw_scenario, reduced_config, zipf_popularity
from cachesec.rates import robust_lmi_margin, sample_errors
from cachesec.sdp import SdpBuilder, check_kkt, solve_sdp
from cachesec.sdp.conic import hermitian_basis

REL = 1e-6
GRID = (0.0, 25.0, 50.0, 100.0)
MID = (25.0, 50.0)
MASTER = 2024


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return _report


# -- 1: solver correctness --------------------------------------------------------------

def test_criterion_01_sdp_solver(report):
    cases = analytic_cases()
    worst_obj, worst_kkt, bad = 0.0, 0.0, []
    for name, prob, status, objective in cases:
        sol = solve_sdp(prob)
        if sol.status != status:
            bad.append(name)
            continue
        if status == "optimal":
            worst_obj = max(worst_obj, abs(sol.objective - objective) / max(abs(objective), 1e-9))
            k = check_kkt(prob, sol)
            worst_kkt = max(worst_kkt, k["primal"], k["dual"], k["complementarity"], k["gap"])
    ok = len(cases) >= 20 and not bad and worst_obj <= 1e-6 and worst_kkt <= 1e-6
    report(1, ok, f"{len(cases)} instances, status mismatches {bad}, "
                  f"max rel objective error {worst_obj:.1e}, max KKT residual {worst_kkt:.1e}")


# -- 2 and 3: rank one and robust secrecy -----------------------------------------------

@pytest.fixture(scope="module")
def r1_solves():
    """At least 100 feasible full-cooperation solves per mode."""
    cfg = reduced_config()
    out = {"robust": [], "perfect": []}
    i = 0
    while min(len(v) for v in out.values()) < 100:
        sc = draw_scenario(cfg, derive_seed(MASTER, "r1", i))
        i += 1
        for mode, sols in out.items():
            if len(sols) >= 100:
                continue
            sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), mode)
            if sol.status != "infeasible":
                sols.append((sc, sol))
    return cfg, out


def test_criterion_02_rank_one(report, r1_solves):
    _, out = r1_solves
    n = tight = audited = 0
    for mode, sols in out.items():
        for sc, sol in sols:
            n += 1
            # randomization only runs when the relaxed ratio exceeded the threshold
            if "randomized" not in sol.diagnostics and sol.rank_ratios is not None \
                    and max(sol.rank_ratios) <= RANK_TOL:
                tight += 1
            audit = sol.diagnostics.get("audit")
            if sol.feasible and audit and max(audit.values()) <= AUDIT_TOL:
                audited += 1
    frac = tight / n
    ok = n >= 200 and frac >= 0.99 and audited == n
    report(2, ok, f"{n} feasible solves, rank ratio <= 1e-4 in {frac:.1%}, "
                  f"clean audits {audited}/{n}")


def test_criterion_03_robust_secrecy(report, r1_solves):
    cfg, out = r1_solves
    worst, bad = 0.0, 0
    sols = [(sc, s) for sc, s in out["robust"] if s.feasible]
    for i, (sc, sol) in enumerate(sols):
        rep = secrecy_report(sc, cfg, sol.beamformers, sol.an_covariance, 1000, seed=i)
        er = float(np.max(rep["er_rate"]))
        worst = max(worst, er)
        bad += er > cfg.tolerance_se + 1e-6
    ok = bad == 0 and len(sols) == len(out["robust"])
    report(3, ok, f"{len(sols)} robust solutions, worst sampled ER rate {worst:.5f} "
                  f"vs R_tol {cfg.tolerance_se:.5f}, violations {bad}")


# -- 4: S-lemma equivalence -------------------------------------------------------------

def _oracle_max(g, radius, T, rng, n=4000, steps=500):
    """Dense sampled max of (g + e)^H T (g + e) over the ball, sharpened locally.

    The best samples are polished by a minorize-maximize ascent on the
    sphere, ``e <- radius * unit(T g + (T + c I) e)`` with ``T + c I >= 0``.
    """
    def val(E):
        X = g[None, :] + E
        return np.einsum("si,ij,sj->s", X.conj(), T, X).real

    E = np.concatenate([sample_errors(rng, g.shape, radius, n, True),
                        sample_errors(rng, g.shape, radius, n, False)])
    v = val(E)
    best = float(v.max())
    shift = max(0.0, -np.linalg.eigvalsh(T)[0])
    for e in E[np.argsort(v)[-5:]]:
        for _ in range(steps):
            step = T @ g + (T + shift * np.eye(g.size)) @ e
            nrm = np.linalg.norm(step)
            if nrm == 0:
                break
            e = radius * step / nrm
        best = max(best, float(val(e[None])[0]))
    return best


def _lmi_feasible(sc, cfg, w, V):
    """Solve the robust secrecy LMI over its slack with the beams held fixed."""
    cs = make_constraint_set(sc, cfg, power_unit=1.0, margin=0.0)
    b = SdpBuilder()
    declare_variables(b, cs, robust=True)
    N = cs.num_antennas
    W = np.outer(w, w.conj())
    for j, E in enumerate(hermitian_basis(N, True)):
        b.add(f"fixW{j}", blocks={cs.w(0): E}, sense="==", rhs=float(np.trace(E @ W).real))
        b.add(f"fixV{j}", blocks={cs.v: E}, sense="==", rhs=float(np.trace(E @ V).real))
    add_constraints(b, build_robust_secrecy_lmi(cs))
    b.minimize(scalars={cs.delta(0): 1.0})
    return solve_sdp(b.build()).status


def test_criterion_04_s_lemma(report):
    rng = np.random.default_rng(MASTER)
    cfg = reduced_config(er_antennas=1)
    kappa = cfg.secrecy_target
    sound = complete = ambiguous = 0
    margin_mismatch = 0
    for i in range(100):
        N = int(rng.integers(1, 4))
        sc = make_scenario(rng, num_bs=1, antennas=N, files=(0,), er_scale=1.0,
                           radius_frac=float(rng.uniform(0.05, 0.6)))
        g = sc.er_estimate[:, 0]
        w = cn(rng, N)
        w *= np.sqrt(kappa * rng.uniform(0.05, 1.5) / abs(np.vdot(g, w)) ** 2)
        v = cn(rng, N)
        V = np.outer(v, v.conj()) * rng.uniform(0.0, 2.0) / max(abs(np.vdot(g, v)) ** 2, 1e-9)
        T = np.outer(w, w.conj()) - kappa * V
        worst = _oracle_max(g, sc.uncertainty_radius, T, rng)
        lmi_ok = _lmi_feasible(sc, cfg, w, V) == "optimal"
        m, _ = robust_lmi_margin(sc.er_estimate, sc.uncertainty_radius, w, V, kappa)
        if abs(worst - kappa) <= 1e-6 * kappa:
            ambiguous += 1
            continue
        secure = worst < kappa
        if lmi_ok and not secure:
            sound += 1
        elif secure and not lmi_ok:
            complete += 1
        margin_mismatch += (m >= 0) != secure
    ok = sound == 0 and complete == 0 and margin_mismatch == 0
    report(4, ok, f"100 points, sound-direction failures {sound}, missed secure points "
                  f"{complete}, margin-route mismatches {margin_mismatch}, "
                  f"skipped on the boundary {ambiguous}")


# -- 5: monotonicity in the cooperation set ---------------------------------------------

def test_criterion_05_monotonicity(report):
    cfg = reduced_config()
    rng = np.random.default_rng(MASTER + 5)
    bad, worst, checked = 0, -np.inf, 0
    for i in range(100):
        sc = draw_scenario(cfg, derive_seed(MASTER, "nested", i))
        files = list(sc.requested_files)
        sub = np.zeros((cfg.num_files, cfg.num_bs), dtype=int)
        for f in files:
            sub[f] = rng.random(cfg.num_bs) < 0.5
            sub[f, rng.integers(cfg.num_bs)] = 1
        sup = sub.copy()
        for f in files:
            sup[f] |= rng.random(cfg.num_bs) < 0.5
        a = solve_fixed_cooperation(sc, cfg, sub, extract=False).sdp_objective
        b = solve_fixed_cooperation(sc, cfg, sup, extract=False).sdp_objective
        if np.isfinite(a):
            checked += 1
            worst = max(worst, (b - a) / a)
            bad += not b <= a * (1 + REL)
    report(5, bad == 0, f"100 nested pairs ({checked} with a feasible subset), violations "
                        f"{bad}, max relative increase {worst:.1e}")


# -- 6: greedy versus exhaustive --------------------------------------------------------

def test_criterion_06_greedy_vs_exhaustive(report):
    cfg0 = reduced_config(backhaul_distribution=((0.0, 0.4), (1.5e6, 0.4), (3e6, 0.2)))
    caps = (0.0, 25.0, 50.0, 75.0, 100.0)
    theta = zipf_popularity(cfg0.num_files, cfg0.zipf_exponent)
    worse = unequal_empty = 0
    gaps, high_gaps = [], []
    for i in range(50):
        pct = caps[i % len(caps)]
        cfg = cfg0.replace(cache_capacity=pct / 100 * cfg0.library_size)
        cache = preference_caching(theta, cfg)
        sc = draw_scenario(cfg, derive_seed(MASTER, "tight", i))
        _, g = greedy_delivery(sc, cfg, cache)
        _, e = exhaustive_delivery(sc, cfg, cache)
        gv, ev = g.sdp_objective if g.feasible else np.inf, \
            e.sdp_objective if e.feasible else np.inf
        worse += gv < ev * (1 - REL)
        if not violation_set(full_cooperation(sc, cfg), cache, sc, cfg):
            unequal_empty += not (gv == ev or abs(gv - ev) <= REL * ev)
        if np.isfinite(ev):
            gap = (gv - ev) / ev
            gaps.append(gap)
            if pct >= 70:
                high_gaps.append(gap)
    finite = [g for g in gaps if np.isfinite(g)]
    high_ok = all(g <= REL for g in high_gaps)
    ok = worse == 0 and unequal_empty == 0 and high_ok
    report(6, ok, f"50 instances, greedy below optimum {worse}, mismatch with no initial "
                  f"violation {unequal_empty}, mean gap {np.mean(finite):.2e} over "
                  f"{len(finite)} (greedy outages {len(gaps) - len(finite)}), max gap at "
                  f">=70% cache {max(high_gaps, default=0.0):.1e}")


# -- 7, 8 and 9: Monte Carlo sweeps ------------------------------------------------------

SWEEP_SCHEMES = ("proposed+greedy", "preference+greedy", "uniform+greedy", "proposed+full",
                 "proposed+coordinated")


@pytest.fixture(scope="module")
def sweep():
    rows = run_cache_sweep(reduced_config(), SWEEP_SCHEMES, GRID, 200, MASTER)
    return {(r.capacity_pct, r.scheme): r for r in rows}


def test_criterion_07_ordering(report, sweep):
    common = bad_low = bad_high = 0
    for pct in GRID:
        full, greedy, coord = (sweep[pct, f"proposed+{d}"].trials
                               for d in ("full", "greedy", "coordinated"))
        for a, b, c in zip(full, greedy, coord):
            if not (a.feasible and b.feasible and c.feasible):
                continue
            common += 1
            bad_low += a.total_power > b.total_power * (1 + REL)
            bad_high += b.total_power > c.total_power * (1 + REL)
    ok = common >= 200 and bad_low == 0 and bad_high == 0
    report(7, ok, f"{common} commonly feasible trials, full > greedy {bad_low}, "
                  f"greedy > coordinated {bad_high}")


def test_criterion_08_trends(report, sweep):
    rows = [sweep[p, "proposed+greedy"] for p in GRID]
    power = [r.avg_power_dBm for r in rows]
    pout = [r.p_out for r in rows]
    mono = all(b <= a + 0.1 for a, b in zip(power, power[1:])) and \
        all(b <= a + 0.01 for a, b in zip(pout, pout[1:]))
    reduction = power[0] - power[-1]
    slack = 10 * np.log10(1 + REL)
    wins = 0
    for s in range(10):
        reps = run_cache_sweep(reduced_config(), SWEEP_SCHEMES[:3], MID, 10,
                               derive_seed(MASTER, "rep", s))
        got = {(r.capacity_pct, r.scheme): r.avg_power_dBm for r in reps}
        wins += all(got[p, "proposed+greedy"] <= min(got[p, "preference+greedy"],
                                                     got[p, "uniform+greedy"]) + slack
                    for p in MID)
    ok = mono and reduction >= 2.0 and wins >= 8
    report(8, ok, f"power dBm {np.round(power, 3).tolist()}, p_out {pout}, reduction "
                  f"{reduction:.2f} dB, proposed <= B1 and B2 in {wins}/10 repetitions")


def test_criterion_09_nonrobust(report):
    rows = run_cache_sweep(reduced_config(), ("proposed+greedy", "proposed+nonrobust"), [50.0],
                           200, MASTER)
    robust, nonrobust = rows[0], rows[1]
    pairs = [(a.total_power, b.total_power) for a, b in zip(robust.trials, nonrobust.trials)
             if a.feasible and b.feasible]
    pr = np.mean([p for p, _ in pairs])
    pn = np.mean([p for _, p in pairs])
    per_trial = sum(b > a * (1 + REL) for a, b in pairs)
    ok = nonrobust.p_out > robust.p_out and pn <= pr * (1 + REL)
    report(9, ok, f"p_out nonrobust {nonrobust.p_out:.3f} vs robust {robust.p_out:.3f}; mean "
                  f"power over {len(pairs)} common trials {pn:.4g} W vs {pr:.4g} W "
                  f"(trials with higher nonrobust power {per_trial})")


# -- 10: relaxation properties ----------------------------------------------------------

def _rounding_oracle(scs, cfg):
    """Smallest average power over binary placements and cooperation sets."""
    M, F, Qf = cfg.num_bs, cfg.num_files, cfg.subfile_rate
    per = []
    for sc in scs:
        files = list(sc.requested_files)
        opts = []
        for bits in itertools.product((0, 1), repeat=len(files) * M):
            q = np.zeros((F, M), dtype=int)
            q[files] = np.array(bits).reshape(len(files), M)
            if any(not q[f].any() for f in files):
                continue
            p = solve_fixed_cooperation(sc, cfg, q, extract=False).sdp_objective
            if np.isfinite(p):
                opts.append((q, p))
        per.append(opts)
    slots = int(round(cfg.cache_capacity / cfg.file_size))
    cols = [np.array(c) for c in itertools.product((0, 1), repeat=F) if sum(c) <= slots]
    total_cap = sum(sc.backhaul_caps for sc in scs) + BACKHAUL_SLACK * Qf
    best = np.inf
    for cache in itertools.product(cols, repeat=M):
        c = np.stack(cache, axis=1)
        for combo in itertools.product(*per):
            load = sum(((1 - c) * q).sum(axis=0) * Qf for q, _ in combo)
            if np.all(load <= total_cap):
                best = min(best, np.mean([p for _, p in combo]))
    return best


def test_criterion_10_relaxation(report):
    tiny = reduced_config(num_bs=2, num_files=2, num_training_scenarios=2)
    tiny = tiny.replace(cache_capacity=tiny.file_size)
    bad, checked = 0, 0
    for s in range(4):
        scs, units = training_scenarios(tiny, derive_seed(MASTER, "tiny", s), with_power=True)
        q1 = train_cache(scs, tiny, refine=False, power_units=units).info["objective_w"]
        oracle = _rounding_oracle(scs, tiny)
        checked += np.isfinite(oracle)
        bad += q1 > oracle * (1 + REL)

    cfg = reduced_config()
    cfg = cfg.replace(cache_capacity=0.5 * cfg.library_size)
    sizes = (5, 20, 50)
    frac = np.zeros((10, len(sizes)))
    for s in range(10):
        scs, units = training_scenarios(cfg, derive_seed(MASTER, "omega", s), count=max(sizes),
                                        with_power=True)
        for j, n in enumerate(sizes):
            cache = train_cache(scs[:n], cfg, refine=False, power_units=units[:n])
            frac[s, j] = cache.info["binariness"]
    mean = frac.mean(axis=0)
    mono = all(b >= a for a, b in zip(mean, mean[1:]))
    ok = bad == 0 and checked > 0 and mono
    report(10, ok, f"Q1 above the best binary rounding in {bad}/4 tiny instances ({checked} "
                   f"with a binary-feasible rounding); mean binariness at Omega {sizes}: "
                   f"{np.round(mean, 4).tolist()}")


# -- 11: determinism --------------------------------------------------------------------

def test_criterion_11_determinism(report, tmp_path):
    sweep_cfg = tmp_path / "sweep.cfg"
    sweep_cfg.write_text('schemes = ["proposed+greedy", "uniform+coordinated"]\n'
                         "capacity_grid = [25, 75]\nn_trials = 4\n")
    same = []
    for name, argv in (("selftest", ["--experiment", "selftest"]),
                       ("sweep", ["--config", str(sweep_cfg)])):
        outs = []
        for run in range(2):
            out = tmp_path / f"{name}{run}.csv"
            code = cli.main(["--reduced", "--seed", "11", "--out", str(out)] + argv)
            outs.append((code, out.read_bytes() if out.exists() else None))
        same.append(outs[0][1] is not None and outs[0] == outs[1])
    report(11, all(same), f"selftest identical {same[0]}, sweep identical {same[1]}")
