"""Offline cache placement: relaxed multi-scenario training and baselines.

Training solves one SDP over a set of sampled delivery scenarios. Caching
fractions ``c`` are shared; cooperation ``q`` and backhaul fractions ``b``
are per scenario and relaxed to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .constraints import (TARGET_MARGIN, add_constraints, build_bigm_coupling,
                          build_power_constraints, build_sinr_constraints, declare_variables,
                          default_power_unit, make_constraint_set, secrecy_rows)
from .model import Scenario, SystemConfig, derive_seed, draw_scenario, zipf_popularity
from .sdp import SdpBuilder, solve_sdp
from .sdp.problem import LinearExpr, ScalarConstraint, SdpProblem

log = logging.getLogger(__name__)

SNAP_TOL = 1e-6
BINARY_TOL = 1e-3
# relative power slack allowed when choosing among optimal placements
REFINE_SLACK = 1e-5


class TrainingError(RuntimeError):
    """Cache training problem has no solution."""


@dataclass
class CacheMatrix:
    """Cached fraction ``c[f, m]`` of file ``f`` at BS ``m``."""

    c: np.ndarray
    config_digest: str = ""
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.c = np.clip(np.asarray(self.c, dtype=float), 0.0, 1.0)

    @classmethod
    def empty(cls, config: SystemConfig) -> "CacheMatrix":
        return cls(np.zeros((config.num_files, config.num_bs)), config.digest())

    def usage(self, config: SystemConfig) -> np.ndarray:
        """Stored bits per BS."""
        return self.c.sum(axis=0) * config.file_size

    def check_capacity(self, config: SystemConfig) -> bool:
        return bool(np.all(self.usage(config) <= config.cache_capacity * (1 + 1e-6)))

    def to_text(self) -> str:
        F, M = self.c.shape
        lines = ["# cache matrix", f"# config {self.config_digest}", f"# shape {F} {M}"]
        for row in self.c:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, config: SystemConfig | None = None) -> "CacheMatrix":
        digest = ""
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["config"]:
                    digest = parts[1] if len(parts) > 1 else ""
                continue
            rows.append([float(v) for v in line.split()])
        cache = cls(np.array(rows, dtype=float), digest)
        if config is not None and digest != config.digest():
            raise ValueError(f"cache was built for config {digest}, not {config.digest()}")
        return cache


def _snap(c: np.ndarray, config: SystemConfig) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    c[c < SNAP_TOL] = 0.0
    c[c > 1.0 - SNAP_TOL] = 1.0
    # snapping up can overshoot the capacity by a hair; scale back per BS
    cap = config.cache_capacity / config.file_size
    used = c.sum(axis=0)
    over = used > cap
    if np.any(over):
        c[:, over] *= cap / used[over]
    return c


# -- baselines ------------------------------------------------------------------------

def preference_caching(popularity, config: SystemConfig) -> CacheMatrix:
    """Fractional knapsack of popularity-weighted bits, identical at every BS."""
    popularity = np.asarray(popularity, dtype=float)
    sizes = np.full(config.num_files, config.file_size)
    room = config.cache_capacity
    col = np.zeros(config.num_files)
    # stable order keeps equal popularities in file order
    for f in np.argsort(-popularity * sizes, kind="stable"):
        if room <= 0:
            break
        take = min(1.0, room / sizes[f])
        col[f] = take
        room -= take * sizes[f]
    return CacheMatrix(np.tile(col[:, None], (1, config.num_bs)), config.digest())


def uniform_caching(config: SystemConfig) -> CacheMatrix:
    """Equal share of the usable capacity for every file."""
    share = min(config.cache_capacity, config.library_size) / config.num_files
    c = np.full((config.num_files, config.num_bs), min(1.0, share / config.file_size))
    return CacheMatrix(c, config.digest())


# -- training ------------------------------------------------------------------------

@dataclass
class Q1Instance:
    problem: object
    csets: list
    unit: float
    q_names: dict  # (omega, f, m) -> name
    b_names: dict
    c_names: dict  # (f, m) -> name


def _c_name(f, m):
    return f"c{f}_{m}"


def assemble_Q1(scenarios, config: SystemConfig, include_secrecy: bool = True,
                margin: float = TARGET_MARGIN, power_units=None) -> Q1Instance:
    """Relaxed average-power training problem over ``scenarios``.

    ``power_units`` sets the per-scenario solver power unit (watts); it only
    affects conditioning. The default is the matched-filter power.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("training needs at least one scenario")
    Omega = len(scenarios)
    F, M = config.num_files, config.num_bs
    if power_units is None:
        power_units = [default_power_unit(sc.lr_channels, config.sinr_target)
                       for sc in scenarios]
    units = [float(u) for u in power_units]
    if len(units) != Omega or min(units) <= 0:
        raise ValueError("need one positive power unit per scenario")
    unit = float(np.mean(units))
    Qf = config.subfile_rate
    p_max = config.max_tx_power

    b = SdpBuilder()
    c_names = {}
    for f in range(F):
        for m in range(M):
            c_names[f, m] = b.scalar(_c_name(f, m), lower=0.0, upper=1.0)
    q_names, b_names, csets = {}, {}, []
    objective = {}
    for w, sc in enumerate(scenarios):
        cs = make_constraint_set(sc, config, prefix=f"s{w}_", power_unit=units[w], margin=margin)
        csets.append(cs)
        robust = include_secrecy and cs.radius > 0
        declare_variables(b, cs, robust)
        qgrid = [[0.0] * M for _ in range(F)]
        for f in sc.requested_files:
            for m in range(M):
                qn = b.scalar(f"s{w}_q{f}_{m}", lower=0.0, upper=1.0)
                bn = b.scalar(f"s{w}_b{f}_{m}", lower=0.0, upper=1.0)
                q_names[w, f, m] = qn
                b_names[w, f, m] = bn
                qgrid[f][m] = qn
                # c + b >= q
                b.add(f"s{w}_link{f}_{m}", scalars={c_names[f, m]: 1.0, bn: 1.0, qn: -1.0},
                      sense=">=", rhs=0.0)
        weight = units[w] / (Omega * unit)
        for rho in range(cs.num_lr):
            objective[cs.w(rho)] = weight * np.eye(cs.supports[rho].size)
        objective[cs.v] = weight * np.eye(cs.num_antennas)
        add_constraints(b, build_bigm_coupling(cs, qgrid, p_max))
        add_constraints(b, build_power_constraints(cs, p_max))
        add_constraints(b, build_sinr_constraints(cs))
        if include_secrecy:
            add_constraints(b, secrecy_rows(cs, "robust"))
    b.minimize(objective)
    # average backhaul, in units of the file rate
    for m in range(M):
        coef = {b_names[w, f, m]: 1.0 for (w, f, mm) in b_names if mm == m}
        avg_cap = sum(sc.backhaul_caps[m] for sc in scenarios) / Qf
        if coef:
            b.add(f"backhaul{m}", scalars=coef, sense="<=", rhs=avg_cap)
    # cache capacity, in files
    for m in range(M):
        b.add(f"capacity{m}", scalars={c_names[f, m]: 1.0 for f in range(F)}, sense="<=",
              rhs=config.cache_capacity / config.file_size)
    return Q1Instance(b.build(), csets, unit, q_names, b_names, c_names)


def binariness(values, q_names, tol: float = BINARY_TOL) -> float:
    """Fraction of relaxed cooperation flags within ``tol`` of 0 or 1."""
    q = np.array([values[n] for n in q_names.values()])
    if q.size == 0:
        return 1.0
    return float(np.mean(np.minimum(np.abs(q), np.abs(1.0 - q)) <= tol))


def _diagnose(scenarios, config: SystemConfig, include_secrecy: bool) -> str:
    if config.cache_capacity == 0 and all(np.all(sc.backhaul_caps == 0) for sc in scenarios):
        return "no cache capacity and no backhaul: requested files cannot reach any BS"
    if include_secrecy:
        bad = [w for w, sc in enumerate(scenarios) if not _deliverable(sc, config)]
        if bad:
            return f"QoS/secrecy targets infeasible even with full cooperation in scenarios {bad}"
    return "cache capacity and average backhaul cannot carry the requested files"


def _full_cooperation_power(sc: Scenario, config: SystemConfig) -> float:
    """Robust relaxed power with every BS serving every request; inf if infeasible."""
    from .constraints import assemble_R1
    from .delivery import full_cooperation

    inst = assemble_R1(sc, config, full_cooperation(sc, config), "robust")
    sol = solve_sdp(inst.problem)
    return sol.objective * inst.cset.power_unit if sol.status == "optimal" else np.inf


def _deliverable(sc: Scenario, config: SystemConfig) -> bool:
    return bool(np.isfinite(_full_cooperation_power(sc, config)))


def reference_units(scenarios, config: SystemConfig) -> list:
    """Per-scenario power units from the full-cooperation optimum.

    Scenarios with very different power levels otherwise leave the
    training problem badly scaled.
    """
    return [_unit_or_default(_full_cooperation_power(sc, config), sc, config)
            for sc in scenarios]


def _unit_or_default(p, sc, config):
    if np.isfinite(p) and p > 0:
        return float(p)
    return default_power_unit(sc.lr_channels, config.sinr_target)


def refine_problem(inst: Q1Instance, config: SystemConfig, optimum: float) -> SdpProblem:
    """Pick the most popular-hit placement among (near) power-optimal ones.

    The training optimum is often attained by a whole face of caching
    matrices. This problem keeps the average power within ``REFINE_SLACK``
    of ``optimum`` and maximizes the popularity-weighted cached fraction.
    """
    prob = inst.problem
    theta = zipf_popularity(config.num_files, config.zipf_exponent)
    cap = ScalarConstraint("power_cap", prob.objective, "<=",
                           optimum * (1.0 + REFINE_SLACK) + 1e-9)
    hits = LinearExpr((), tuple((n, -float(theta[f])) for (f, m), n in inst.c_names.items()))
    return SdpProblem(prob.blocks, prob.scalars, hits, prob.constraints + (cap,), prob.lmis)


def train_cache(scenarios, config: SystemConfig, include_secrecy: bool = True,
                backend: str = "auto", tol: float = 1e-7, refine: bool = True,
                power_units=None) -> CacheMatrix:
    """Cache placement from the relaxed training problem.

    Parameters
    ----------
    refine : bool
        Break ties among optimal placements with :func:`refine_problem`.
    power_units : sequence of float, optional
        Per-scenario solver power units; computed by :func:`reference_units`
        when omitted.

    The returned matrix carries ``info`` with the average power (watts),
    solver status and the binariness fraction of the relaxed ``q``.
    """
    scenarios = list(scenarios)
    if power_units is None:
        power_units = reference_units(scenarios, config)
    inst = assemble_Q1(scenarios, config, include_secrecy, power_units=power_units)
    sol = solve_sdp(inst.problem, tol=tol, backend=backend)
    if sol.status == "infeasible":
        raise TrainingError(_diagnose(scenarios, config, include_secrecy))
    if sol.status != "optimal":
        raise TrainingError(f"training solve ended {sol.status}")
    objective = sol.objective
    info = {"objective_w": objective * inst.unit, "status": sol.status,
            "binariness": binariness(sol.values, inst.q_names), "iterations": sol.iterations,
            "num_scenarios": len(scenarios), "refined": False}
    if refine:
        # the tie-break objective ignores the beams, so rows with small right-hand
        # sides converge last; a tighter solve keeps them within ``tol``
        sol2 = solve_sdp(refine_problem(inst, config, objective), tol=1e-2 * tol,
                         backend=backend)
        usable = sol2.status == "optimal" or (
            sol2.info.get("raw_status", "").startswith("optimal")
            and sol2.max_constraint_violation <= 10 * tol)
        if usable:
            sol = sol2
            info["refined"] = True
        else:
            log.warning("placement refinement ended %s; keeping the first solution", sol2.status)
    F, M = config.num_files, config.num_bs
    c = np.array([[sol.values[inst.c_names[f, m]] for m in range(M)] for f in range(F)])
    info["q"] = {k: sol.values[n] for k, n in inst.q_names.items()}
    info["b"] = {k: sol.values[n] for k, n in inst.b_names.items()}
    info["c_raw"] = c
    return CacheMatrix(_snap(c, config), config.digest(), info)


def training_scenarios(config: SystemConfig, seed, count: int | None = None,
                       max_draws: int | None = None, with_power: bool = False):
    """Training scenarios that are deliverable with full cooperation.

    A scenario whose robust full-cooperation problem is infeasible stays
    infeasible for every cache placement, so it is skipped and another one
    drawn. The same set serves training with and without secrecy. With
    ``with_power`` the full-cooperation powers (watts) are returned as well;
    they serve as ``power_units`` of :func:`train_cache`.
    """
    count = config.num_training_scenarios if count is None else count
    if count < 1:
        raise ValueError("training needs at least one scenario")
    max_draws = 20 * count if max_draws is None else max_draws
    out, powers = [], []
    for i in range(max_draws):
        sc = draw_scenario(config, derive_seed(seed, "train", i))
        p = _full_cooperation_power(sc, config)
        if np.isfinite(p):
            out.append(sc)
            powers.append(p)
            if len(out) == count:
                return (out, powers) if with_power else out
    raise TrainingError(f"only {len(out)} of {count} deliverable training scenarios "
                        f"in {max_draws} draws")
