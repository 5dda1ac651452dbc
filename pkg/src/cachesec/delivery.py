"""Online delivery: fixed-cooperation beamforming and cooperation formation.

The cooperation matrix ``q`` is an (F, M) 0/1 array over the whole library;
rows of files nobody requests are ignored. Powers are in watts.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .constraints import assemble_R1, expand_beam
from .model import Scenario, SystemConfig
from .rates import lr_sinr, robust_lmi_margin
from .sdp import solve_sdp

log = logging.getLogger(__name__)

RANK_TOL = 1e-4
NUM_RANDOMIZATIONS = 100
ZERO_TRACE = 1e-12
# slack of the C3 comparison, relative to the file rate
BACKHAUL_SLACK = 1e-9
# tolerance of the post-extraction audit
AUDIT_TOL = 1e-6
EXHAUSTIVE_CAP = 12
# candidate objectives this close (relative) count as tied
TIE_TOL = 1e-9


def effective_backhaul_rate(c, file_rate):
    """Backhaul rate needed for the uncached part of a file."""
    c = np.asarray(c, dtype=float)
    if np.any((c < 0) | (c > 1)):
        raise ValueError("cached fractions must lie in [0, 1]")
    return (1.0 - c) * file_rate


def _cache_array(cache, config: SystemConfig) -> np.ndarray:
    c = getattr(cache, "c", cache)
    if c is None:
        return np.zeros((config.num_files, config.num_bs))
    return np.asarray(c, dtype=float)


def backhaul_loads(q, cache, scenario: Scenario, config: SystemConfig) -> np.ndarray:
    """Per-BS backhaul rate of the requested files with q = 1."""
    q = np.asarray(q)
    c = _cache_array(cache, config)
    loads = np.zeros(scenario.num_bs)
    for f in scenario.requested_files:
        loads += q[f] * effective_backhaul_rate(c[f], config.subfile_rate)
    return loads


def violation_set(q, cache, scenario: Scenario, config: SystemConfig) -> list:
    """BSs whose backhaul load exceeds their capacity."""
    loads = backhaul_loads(q, cache, scenario, config)
    slack = BACKHAUL_SLACK * config.subfile_rate
    return [m for m in range(scenario.num_bs) if loads[m] > scenario.backhaul_caps[m] + slack]


def full_cooperation(scenario: Scenario, config: SystemConfig) -> np.ndarray:
    q = np.zeros((config.num_files, scenario.num_bs), dtype=int)
    q[list(scenario.requested_files)] = 1
    return q


@dataclass
class CooperationDecision:
    q: np.ndarray  # (F, M) 0/1
    b: np.ndarray  # (F, M) backhaul fractions (1 - c) q
    requested: tuple
    iteration_log: list = field(default_factory=list)

    @classmethod
    def from_q(cls, q, cache, scenario: Scenario, config: SystemConfig, log_=None):
        q = np.asarray(q, dtype=int)
        c = _cache_array(cache, config)
        return cls(q=q.copy(), b=(1.0 - c) * q, requested=scenario.requested_files,
                   iteration_log=list(log_ or []))

    @property
    def coop_sets(self) -> dict:
        return {f: tuple(int(m) for m in np.flatnonzero(self.q[f])) for f in self.requested}

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "b": np.round(self.b, 12).tolist(),
                "coop_sets": {str(f): list(s) for f, s in self.coop_sets.items()},
                "removals": self.iteration_log}


@dataclass
class TransmitSolution:
    status: str  # feasible | infeasible | rank_failure
    beam_matrices: np.ndarray | None = None  # (K, N, N) watts
    beamformers: np.ndarray | None = None  # (K, N)
    an_covariance: np.ndarray | None = None
    slacks: np.ndarray | None = None
    total_power: float = np.inf
    per_bs_power: np.ndarray | None = None
    rank_ratios: np.ndarray | None = None
    sdp_objective: float = np.inf
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        out = {"status": self.status, "total_power_w": _num(self.total_power),
               "diagnostics": self.diagnostics}
        if self.per_bs_power is not None:
            out["per_bs_power_w"] = [_num(p) for p in self.per_bs_power]
        if self.rank_ratios is not None:
            out["rank_ratios"] = [_num(r) for r in self.rank_ratios]
        return out


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


def dump_trial(decision: CooperationDecision | None, solution: TransmitSolution) -> str:
    """JSON text of one delivery decision and its transmit solution."""
    out = {"decision": decision.to_dict() if decision is not None else None,
           "solution": solution.to_dict()}
    return json.dumps(out, indent=1, sort_keys=True)


# -- rank-one extraction ----------------------------------------------------------

def rank_ratio(W) -> float:
    ev = np.linalg.eigvalsh(0.5 * (W + W.conj().T))
    if ev[-1] <= 0:
        return 0.0
    return float(max(ev[-2], 0.0) / ev[-1]) if ev.size > 1 else 0.0


def principal_beam(W) -> np.ndarray:
    W = 0.5 * (W + W.conj().T)
    ev, U = np.linalg.eigh(W)
    if np.trace(W).real <= ZERO_TRACE:
        return np.zeros(W.shape[0], dtype=complex)
    return np.sqrt(max(ev[-1], 0.0)) * U[:, -1]


def extract_beamformer(W, tol: float = RANK_TOL, randomize=None, rng=None,
                       num_candidates: int = NUM_RANDOMIZATIONS):
    """Beamforming vector of a beam covariance.

    Returns ``(w, ratio)``. Near rank one the scaled principal eigenvector
    is used. Otherwise ``randomize(xi)`` is called on Gaussian candidates
    drawn with covariance ``W``; it returns a rescaled feasible vector and
    its power, or ``None``. The cheapest accepted candidate wins. ``w`` is
    ``None`` when every candidate fails.
    """
    W = 0.5 * (W + W.conj().T)
    if np.trace(W).real <= ZERO_TRACE:
        return np.zeros(W.shape[0], dtype=complex), 0.0
    ratio = rank_ratio(W)
    if ratio <= tol or randomize is None:
        return (principal_beam(W) if ratio <= tol else None), ratio
    rng = np.random.default_rng(0) if rng is None else rng
    ev, U = np.linalg.eigh(W)
    root = U * np.sqrt(np.maximum(ev, 0.0))[None, :]
    best, best_power = None, np.inf
    n = W.shape[0]
    for _ in range(num_candidates):
        xi = root @ ((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        out = randomize(xi)
        if out is not None and out[1] < best_power:
            best, best_power = out
    return best, ratio


# -- fixed cooperation ------------------------------------------------------------

def audit_transmission(scenario: Scenario, config: SystemConfig, beams, V, mode: str) -> dict:
    """Relative violations of the delivery constraints at vectors ``beams``.

    ``beams`` is (K, N). SINR and power are exact; secrecy uses the robust
    LMI margin (best slack) in robust mode and the known channel otherwise.
    """
    K = scenario.num_lr
    M, Nt = scenario.num_bs, scenario.antennas_per_bs
    kreq = config.sinr_target
    ktol = config.secrecy_target
    sinr = np.array([lr_sinr(scenario.lr_channels[k], beams, k, V) for k in range(K)])
    per_bs = bs_powers(np.einsum("ki,kj->kij", beams, beams.conj()), V, M, Nt)
    if mode == "robust" and scenario.uncertainty_radius > 0:
        secrecy = [max(0.0, -robust_lmi_margin(scenario.er_estimate, scenario.uncertainty_radius,
                                               beams[k], V, ktol)[0]) / ktol for k in range(K)]
    else:
        G = scenario.er_channel if mode == "perfect" else scenario.er_estimate
        Z = G.conj().T @ V @ G
        secrecy = []
        for k in range(K):
            S = np.outer(G.conj().T @ beams[k], (G.conj().T @ beams[k]).conj()) - ktol * Z
            secrecy.append(max(0.0, np.linalg.eigvalsh(0.5 * (S + S.conj().T))[-1] - ktol) / ktol)
    return {"sinr": float(max(0.0, np.max(1.0 - sinr / kreq))),
            "power": float(max(0.0, np.max(per_bs / config.max_tx_power - 1.0))),
            "secrecy": float(max(secrecy)), "sinr_values": sinr}


def bs_powers(beam_matrices, V, M: int, Nt: int) -> np.ndarray:
    d = np.real(np.einsum("kii->i", beam_matrices)) + np.real(np.diag(V))
    return d.reshape(M, Nt).sum(axis=1)


def _randomizer(scenario, config, mode, k, beams, V):
    """Rescale a candidate for stream ``k`` to meet its SINR with equality."""
    h = scenario.lr_channels[k]
    kreq = config.sinr_target

    def fn(xi):
        others = [j for j in range(len(beams)) if j != k]
        denom = 1.0 + float(np.real(h.conj() @ V @ h)) + sum(abs(np.vdot(beams[j], h)) ** 2
                                                             for j in others)
        g = abs(np.vdot(xi, h)) ** 2
        if g <= 0:
            return None
        w = xi * np.sqrt(kreq * (1.0 + 1e-9) * denom / g)
        trial = beams.copy()
        trial[k] = w
        rep = audit_transmission(scenario, config, trial, V, mode)
        if max(rep["sinr"], rep["power"], rep["secrecy"]) > AUDIT_TOL:
            return None
        return w, float(np.real(np.vdot(w, w)))

    return fn


def solve_fixed_cooperation(scenario: Scenario, config: SystemConfig, q, mode: str = "robust",
                            backend: str = "auto", tol: float = 1e-7,
                            extract: bool = True) -> TransmitSolution:
    """Relaxed fixed-cooperation problem plus beamformer extraction."""
    q = np.asarray(q)
    files = [f for _, f in scenario.requests]
    if any(not np.any(q[f] > 0.5) for f in files):
        return TransmitSolution("infeasible", diagnostics={"reason": "request without serving BS"})
    inst = assemble_R1(scenario, config, q, mode)
    sol = solve_sdp(inst.problem, tol=tol, backend=backend)
    diag = {"sdp_status": sol.status, "iterations": sol.iterations}
    if sol.status == "infeasible":
        diag["margin_bound"] = sol.margin_bound
        return TransmitSolution("infeasible", diagnostics=diag)
    if sol.status != "optimal":
        log.warning("fixed-cooperation solve ended %s", sol.status)
        return TransmitSolution("rank_failure", diagnostics=diag)

    cs = inst.cset
    K, N = scenario.num_lr, cs.num_antennas
    Ws = np.array([expand_beam(cs, k, sol.values[cs.w(k)]) for k in range(K)])
    Ws = 0.5 * (Ws + np.conj(np.swapaxes(Ws, -1, -2)))
    V = sol.values[cs.v] * cs.power_unit
    V = 0.5 * (V + V.conj().T)
    slacks = np.zeros(K)
    if mode == "robust" and scenario.uncertainty_radius > 0:
        slacks = np.array([sol.values[cs.delta(k)] for k in range(K)]) * cs.power_unit * \
            scenario.uncertainty_radius ** 2
    ratios = np.array([rank_ratio(W) for W in Ws])
    total = float(sum(np.trace(W).real for W in Ws) + np.trace(V).real)
    out = TransmitSolution("feasible", beam_matrices=Ws, an_covariance=V, slacks=slacks,
                           total_power=total, per_bs_power=bs_powers(Ws, V, scenario.num_bs,
                                                                     scenario.antennas_per_bs),
                           rank_ratios=ratios, sdp_objective=sol.objective * cs.power_unit,
                           diagnostics=diag)
    if not extract:
        return out

    beams = np.array([principal_beam(W) for W in Ws])
    randomized = []
    for k in np.flatnonzero(ratios > RANK_TOL):
        rnd = _randomizer(scenario, config, mode, k, beams, V)
        w, _ = extract_beamformer(Ws[k], randomize=rnd, rng=np.random.default_rng(k))
        if w is None:
            diag["reason"] = f"rank extraction failed for stream {k} (ratio {ratios[k]:.2e})"
            out.status = "rank_failure"
            out.beamformers = beams
            return out
        beams[k] = w
        randomized.append(int(k))
    if randomized:
        diag["randomized"] = randomized
        Ws = np.einsum("ki,kj->kij", beams, beams.conj())
        out.beam_matrices = Ws
        out.rank_ratios = np.array([rank_ratio(W) for W in Ws])
        out.total_power = float(sum(np.trace(W).real for W in Ws) + np.trace(V).real)
        out.per_bs_power = bs_powers(Ws, V, scenario.num_bs, scenario.antennas_per_bs)
    out.beamformers = beams
    audit = audit_transmission(scenario, config, beams, V, mode)
    diag["audit"] = {key: audit[key] for key in ("sinr", "power", "secrecy")}
    if max(audit["sinr"], audit["power"], audit["secrecy"]) > AUDIT_TOL:
        diag["reason"] = "extracted beams fail the audit"
        out.status = "rank_failure"
    return out


# -- cooperation formation ----------------------------------------------------------

def greedy_delivery(scenario: Scenario, config: SystemConfig, cache, mode: str = "robust",
                    backend: str = "auto", initial_q=None, max_iter: int | None = None):
    """Remove one (file, BS) pair per iteration until backhaul is respected.

    Each step removes, among the pairs at violating BSs that load backhaul,
    the one whose removal raises the relaxed optimum the least; removals
    leading to infeasible problems cost +inf and ties go to the lowest BS,
    then file, index. Returns ``(decision, solution)``;
    ``solution.status == "infeasible"`` signals a delivery outage.
    """
    q = full_cooperation(scenario, config) if initial_q is None else np.array(initial_q, dtype=int)
    removals = []
    sol = solve_fixed_cooperation(scenario, config, q, mode, backend)
    if sol.status == "infeasible":
        sol.diagnostics["outage"] = "full cooperation infeasible"
        return CooperationDecision.from_q(q, cache, scenario, config, removals), sol
    limit = len(scenario.requested_files) * scenario.num_bs if max_iter is None else max_iter
    # a pair fully cached at its BS loads no backhaul; removing it cannot help
    loaded = (1.0 - _cache_array(cache, config)) > BACKHAUL_SLACK
    iteration = 0
    while True:
        vio = violation_set(q, cache, scenario, config)
        if not vio:
            break
        if iteration >= limit:
            raise RuntimeError("greedy cooperation formation did not terminate")
        iteration += 1
        base = sol.sdp_objective
        best = None
        for m in sorted(vio):
            for f in scenario.requested_files:
                if q[f, m] == 0 or not loaded[f, m]:
                    continue
                trial = q.copy()
                trial[f, m] = 0
                cand = solve_fixed_cooperation(scenario, config, trial, mode, backend)
                if cand.status == "infeasible" or cand.sdp_objective == np.inf:
                    if cand.status != "infeasible":
                        log.warning("candidate (f=%d, m=%d) failed: %s", f, m,
                                    cand.diagnostics.get("sdp_status"))
                    value = np.inf
                else:
                    value = cand.sdp_objective
                # the base power is common to all candidates, so rank by value
                if best is None or value < best[0] - TIE_TOL * abs(best[0]):
                    best = (value, f, m, trial, cand)
        if best is None or best[0] == np.inf:
            out = TransmitSolution("infeasible", diagnostics={
                "outage": "every candidate removal is infeasible", "violations": vio})
            return CooperationDecision.from_q(q, cache, scenario, config, removals), out
        value, f, m, q, sol = best
        removals.append({"file": int(f), "bs": int(m), "penalty_w": float(value - base)})
    return CooperationDecision.from_q(q, cache, scenario, config, removals), sol


def maximal_feasible_sets(scenario: Scenario, config: SystemConfig, cache) -> list:
    """All inclusion-maximal cooperation matrices that respect backhaul."""
    files = scenario.requested_files
    M = scenario.num_bs
    pairs = [(f, m) for f in files for m in range(M)]
    feasible = []
    for bits in itertools.product((1, 0), repeat=len(pairs)):
        q = np.zeros((config.num_files, M), dtype=int)
        for (f, m), v in zip(pairs, bits):
            q[f, m] = v
        if violation_set(q, cache, scenario, config):
            continue
        # backhaul load is monotone in q, so single additions decide maximality
        maximal = True
        for (f, m), v in zip(pairs, bits):
            if v == 0:
                q[f, m] = 1
                if not violation_set(q, cache, scenario, config):
                    maximal = False
                q[f, m] = 0
                if not maximal:
                    break
        if maximal:
            feasible.append(q)
    return feasible


def exhaustive_delivery(scenario: Scenario, config: SystemConfig, cache, mode: str = "robust",
                        size_cap: int = EXHAUSTIVE_CAP, backend: str = "auto"):
    """Exact optimum over backhaul-feasible cooperation (small instances only)."""
    size = len(scenario.requested_files) * scenario.num_bs
    if size > size_cap:
        raise ValueError(f"{size} cooperation flags exceed the enumeration cap {size_cap}")
    best = None
    for q in maximal_feasible_sets(scenario, config, cache):
        sol = solve_fixed_cooperation(scenario, config, q, mode, backend)
        if sol.status == "infeasible" or sol.sdp_objective == np.inf:
            continue
        if best is None or sol.sdp_objective < best[1].sdp_objective:
            best = (q, sol)
    if best is None:
        q = np.zeros((config.num_files, scenario.num_bs), dtype=int)
        return (CooperationDecision.from_q(q, cache, scenario, config),
                TransmitSolution("infeasible", diagnostics={"outage": "no feasible cooperation"}))
    return CooperationDecision.from_q(best[0], cache, scenario, config), best[1]
