"""Quick end-to-end self check on the desk-scale configuration.

Each check is small enough for the whole run to take about a minute. The
sweep it runs is written as the selftest CSV, so two runs with the same
seed must produce identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import evaluate
from .delivery import (AUDIT_TOL, RANK_TOL, exhaustive_delivery, full_cooperation,
                       greedy_delivery, solve_fixed_cooperation)
from .model import derive_seed, draw_scenario, reduced_config
from .sdp import SdpBuilder, solve_sdp


@dataclass
class SelftestReport:
    results: list = field(default_factory=list)  # (name, passed, detail)
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(ok for _, ok, _ in self.results)

    @property
    def failed(self) -> int:
        return len(self.results) - self.passed


def _check_closed_form(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(3):
        n = 3
        h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        kappa = float(rng.uniform(0.1, 2.0))
        b = SdpBuilder()
        b.block("W", n)
        b.add("sinr", blocks={"W": np.outer(h, h.conj())}, sense=">=", rhs=kappa)
        b.minimize({"W": np.eye(n)})
        sol = solve_sdp(b.build())
        p = kappa / np.linalg.norm(h) ** 2
        if sol.status != "optimal":
            return False, f"status {sol.status}"
        worst = max(worst, abs(sol.objective - p) / p)
    return worst <= 1e-6, f"max relative error {worst:.1e}"


def _check_delivery(seed):
    cfg = reduced_config()
    fails = []
    for i in range(3):
        sc = draw_scenario(cfg, derive_seed(seed, "selftest", i))
        for mode in ("robust", "perfect"):
            sol = solve_fixed_cooperation(sc, cfg, full_cooperation(sc, cfg), mode)
            if not sol.feasible:
                continue
            audit = sol.diagnostics.get("audit", {})
            if max(sol.rank_ratios) > RANK_TOL or max(audit.values()) > AUDIT_TOL:
                fails.append((i, mode))
            if mode == "robust":
                rep = evaluate.secrecy_report(sc, cfg, sol.beamformers, sol.an_covariance, 200)
                if np.max(rep["er_rate"]) > cfg.tolerance_se + 1e-6:
                    fails.append((i, "secrecy"))
    return not fails, f"violations {fails}" if fails else "rank one, audits clean"


def _check_greedy(seed):
    cfg = reduced_config().replace(cache_capacity=0.5 * reduced_config().library_size)
    cache = evaluate.build_cache("preference", cfg)
    worse = []
    for i in range(2):
        sc = draw_scenario(cfg, derive_seed(seed, "selftest-greedy", i))
        if len(sc.requested_files) * sc.num_bs > 6:
            continue
        _, g = greedy_delivery(sc, cfg, cache)
        _, e = exhaustive_delivery(sc, cfg, cache)
        if g.feasible and (not e.feasible or g.sdp_objective < e.sdp_objective * (1 - 1e-6)):
            worse.append(i)
    return not worse, "greedy never beats the exhaustive optimum" if not worse else f"{worse}"


def _check_ordering(rows):
    bad = 0
    pcts = sorted({r.capacity_pct for r in rows})
    for pct in pcts:
        group = {r.scheme: r for r in rows if r.capacity_pct == pct}
        full, greedy, coord = (group.get(f"preference+{d}") for d in ("full", "greedy",
                                                                       "coordinated"))
        if full is None or greedy is None or coord is None:
            continue
        for a, b, c in zip(full.trials, greedy.trials, coord.trials):
            if a.feasible and b.feasible and c.feasible:
                if a.total_power > b.total_power * (1 + 1e-6) or \
                        b.total_power > c.total_power * (1 + 1e-6):
                    bad += 1
    return bad == 0, f"{bad} ordering violations"


SWEEP_SCHEMES = ("preference+full", "preference+greedy", "preference+coordinated")


def run_selftest(seed: int = 0, echo=print) -> SelftestReport:
    report = SelftestReport()

    def record(name, outcome):
        ok, detail = outcome
        report.results.append((name, bool(ok), detail))
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    record("closed-form single-user power", _check_closed_form(seed))
    record("rank-one extraction and audit", _check_delivery(seed))
    record("greedy versus exhaustive", _check_greedy(seed))
    cfg = reduced_config()
    rows = evaluate.run_cache_sweep(cfg, SWEEP_SCHEMES, [50.0, 100.0], 3, seed)
    record("power ordering full <= greedy <= coordinated", _check_ordering(rows))
    again = evaluate.run_cache_sweep(cfg, SWEEP_SCHEMES[:1], [50.0], 3, seed)
    same = evaluate.rows_to_csv(again) == evaluate.rows_to_csv(rows[:1])
    record("repeatable sweep", (same, "identical rows" if same else "rows differ"))
    report.rows = rows
    return report
