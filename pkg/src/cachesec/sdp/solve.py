"""Solver front end: backend dispatch, solution unpacking and KKT checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import ConicForm, compile_problem, margin_form, pack, smat, unpack
from .ipm import solve_conic
from .problem import SdpProblem

log = logging.getLogger(__name__)

BACKENDS = ("ipm", "clarabel", "auto")


@dataclass
class SdpSolution:
    """Result of :func:`solve_sdp`.

    ``status`` is one of ``optimal``, ``infeasible``, ``unbounded`` or
    ``inaccurate``. ``values`` maps variable names to matrices or floats and
    is empty unless a primal point is available.
    """

    status: str
    values: dict
    objective: float
    max_constraint_violation: float
    duality_gap: float
    backend: str
    iterations: int = 0
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    margin_bound: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _clarabel(form: ConicForm, tol: float, max_iter: int):
    import clarabel

    p = form.b.size
    A = sp.vstack([form.A, form.G], format="csc")
    rhs = np.concatenate([form.b, form.h])
    cones = []
    if p:
        cones.append(clarabel.ZeroConeT(p))
    if form.num_lp:
        cones.append(clarabel.NonnegativeConeT(form.num_lp))
    cones += [clarabel.PSDTriangleConeT(d) for d in form.psd_dims]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.presolve_enable = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_infeas_abs = tol
    settings.tol_infeas_rel = tol
    P = sp.csc_matrix((form.n, form.n))
    solver = clarabel.DefaultSolver(P, form.c, A, rhs, cones, settings)
    sol = solver.solve()
    x = np.array(sol.x)
    zall = np.array(sol.z)
    s = np.array(sol.s)[p:]
    y, z = zall[:p], zall[p:]
    name = str(sol.status).split(".")[-1]
    status = {"Solved": "optimal", "PrimalInfeasible": "primal_infeasible",
              "DualInfeasible": "dual_infeasible"}.get(name, "inaccurate")
    if status == "primal_infeasible":
        scale = -(form.h @ z + form.b @ y)
        if scale > 0:
            y, z = y / scale, z / scale
    return status, x, s, y, z, int(sol.iterations), name


# tolerance factor of the re-solve when a returned point violates a constraint
POLISH_FACTOR = 1e-2


def _run(form, tol, backend, max_iter):
    if backend == "ipm":
        res = solve_conic(form, tol=tol, max_iter=max_iter)
        raw = "optimal_reduced" if res.reduced else res.status
        return res.status, res.x, res.s, res.y, res.z, res.iterations, raw
    return _clarabel(form, tol, max_iter)


def _margin_search(form: ConicForm, tol: float, backend: str, max_iter: int) -> float:
    """Upper bound on the largest uniform constraint margin, via its dual.

    Returns +inf when the search itself does not converge.
    """
    mform = margin_form(form)
    status, x, s, y, z, _, _ = _run(mform, tol, backend, max_iter)
    if status != "optimal":
        return np.inf
    # weak duality for max t: t <= h^T z + b^T y
    return float(mform.h @ z + mform.b @ y)


def solve_sdp(problem: SdpProblem, tol: float = 1e-7, backend: str = "auto",
              max_iter: int = 200, form: ConicForm | None = None,
              polish: bool = True) -> SdpSolution:
    """Solve ``problem`` to relative tolerance ``tol``.

    Infeasibility is reported only with a certificate showing that no point
    satisfies all constraints with margin ``-tol``; otherwise the result
    is ``inaccurate``. With ``polish``, an optimal point that still violates
    some constraint by more than ``10 tol`` is re-solved once at
    ``POLISH_FACTOR * tol``.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    form = compile_problem(problem) if form is None else form
    if backend == "auto":
        backend = "ipm"
    status, x, s, y, z, iters, raw = _run(form, tol, backend, max_iter)

    margin = None
    if status == "primal_infeasible":
        ez = form.identity() @ z
        margin = -1.0 / ez if ez > 0 else -np.inf
        if margin >= -tol:
            margin = _margin_search(form, tol, backend, max_iter)
        status = "infeasible" if margin < -tol else "inaccurate"
        if status == "inaccurate":
            log.warning("infeasibility certificate too weak (margin bound %.3e)", margin)
        return SdpSolution(status, {}, np.inf, np.inf, np.inf, backend, iters, None, y, z,
                           margin, {"raw_status": raw})
    if status == "inaccurate":
        # decide feasibility separately; a clearly negative margin is a valid verdict
        margin = _margin_search(form, tol, backend, max_iter)
        if margin < -tol:
            return SdpSolution("infeasible", {}, np.inf, np.inf, np.inf, backend, iters, None,
                               None, None, margin, {"raw_status": raw})
    if status == "dual_infeasible":
        return SdpSolution("unbounded", {}, -np.inf, np.inf, np.inf, backend, iters, x, None,
                           None, None, {"raw_status": raw})

    values = unpack(problem, form, x)
    viol = constraint_violation(problem, values)
    obj = float(form.c @ x)
    dual_obj = float(-(form.h @ z) - form.b @ y)
    gap = abs(obj - dual_obj)
    if status == "optimal" and viol > 10 * tol:
        # residuals are measured on the whole system, so a row with a small
        # right-hand side can lag behind; one tighter solve usually fixes it
        if polish:
            again = solve_sdp(problem, POLISH_FACTOR * tol, backend, max_iter, form, polish=False)
            if again.status in ("optimal", "inaccurate") and \
                    again.max_constraint_violation <= 10 * tol:
                again.status = "optimal"
                return again
        log.warning("solver reported optimal but violation is %.3e", viol)
        status = "inaccurate"
    return SdpSolution(status, values, obj, viol, gap, backend, iters, x, y, z, None,
                       {"raw_status": raw, "dual_objective": dual_obj})


# -- violation measures ---------------------------------------------------------

def _expr_value(expr, values) -> float:
    total = 0.0
    for name, A in expr.blocks:
        total += float(np.real(np.trace(A @ values[name])))
    for name, a in expr.scalars:
        total += a * values[name]
    return total


def lmi_value(lmi, values) -> np.ndarray:
    """``F0 - lhs`` of an LMI at ``values``; feasible iff PSD."""
    M = np.array(lmi.rhs, dtype=complex)
    for t in lmi.terms:
        M = M - t.coef * (t.basis.conj().T @ values[t.block] @ t.basis)
    for name, F in lmi.scalar_terms:
        M = M - values[name] * F
    return 0.5 * (M + M.conj().T)


def constraint_violations(problem: SdpProblem, values: dict) -> dict:
    """Relative violation of every constraint, keyed by constraint name."""
    out = {}
    for s in problem.scalars:
        v = values[s.name]
        scale = max(1.0, abs(v))
        if s.lower is not None:
            out[f"{s.name}>=lower"] = max(0.0, s.lower - v) / scale
        if s.upper is not None:
            out[f"{s.name}<=upper"] = max(0.0, v - s.upper) / scale
    for blk in problem.blocks:
        X = values[blk.name]
        ev = np.linalg.eigvalsh(X)
        out[f"{blk.name}>=0"] = max(0.0, -ev[0]) / max(1.0, abs(ev[-1]))
    for con in problem.constraints:
        lhs = _expr_value(con.expr, values)
        scale = max(1.0, abs(con.rhs))
        if con.sense == "<=":
            out[con.name] = max(0.0, lhs - con.rhs) / scale
        elif con.sense == ">=":
            out[con.name] = max(0.0, con.rhs - lhs) / scale
        else:
            out[con.name] = abs(lhs - con.rhs) / scale
    for lmi in problem.lmis:
        M = lmi_value(lmi, values)
        ev = np.linalg.eigvalsh(M)
        scale = max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(lmi.rhs)), initial=0.0)))
        out[lmi.name] = max(0.0, -ev[0]) / scale
    return out


def constraint_violation(problem: SdpProblem, values: dict) -> float:
    viol = constraint_violations(problem, values)
    return max(viol.values(), default=0.0)


# -- KKT residuals ----------------------------------------------------------------

def _cone_min(form: ConicForm, v: np.ndarray) -> float:
    out = np.inf
    for kind, sl, d in form.cone_slices:
        if kind == "l":
            out = min(out, float(np.min(v[sl])))
        else:
            out = min(out, float(np.linalg.eigvalsh(smat(v[sl], d))[0]))
    return out


def check_kkt(problem: SdpProblem, solution: SdpSolution | dict, y=None, z=None) -> dict:
    """Primal, dual, complementarity and gap residuals of a candidate point.

    ``solution`` is either an :class:`SdpSolution` or a mapping of variable
    values; duals default to those stored on the solution. Residuals are
    measured on the same normalized conic form the solvers see. Without
    duals only the primal residual is reported and ``partial`` is set.
    """
    form = compile_problem(problem)
    if isinstance(solution, SdpSolution):
        values = solution.values
        y = solution.y if y is None else y
        z = solution.z if z is None else z
    else:
        values = solution
    x = pack(problem, form, values)
    s = form.h - form.G @ x
    eq = form.A @ x - form.b
    primal = max(float(np.max(np.abs(eq), initial=0.0)) / max(1.0, np.max(np.abs(form.b), initial=0.0)),
                 max(0.0, -_cone_min(form, s)))
    out = {"primal": primal}
    if y is None or z is None:
        out.update(dual=np.nan, complementarity=np.nan, gap=np.nan, partial=True)
        return out
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    stat = form.G.T @ z + form.A.T @ y + form.c
    dual = max(float(np.max(np.abs(stat), initial=0.0)) / max(1.0, np.max(np.abs(form.c), initial=0.0)),
               max(0.0, -_cone_min(form, z)))
    obj = float(form.c @ x)
    dual_obj = float(-(form.h @ z) - form.b @ y)
    scale = max(1.0, abs(obj))
    out.update(dual=dual, complementarity=abs(float(s @ z)) / scale,
               gap=abs(obj - dual_obj) / scale, partial=False)
    return out
