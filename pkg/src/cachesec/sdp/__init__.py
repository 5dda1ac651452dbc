"""Small semidefinite programming toolkit used by the delivery and caching stages."""

from .conic import ConicForm, compile_problem, real_embed, smat, svec
from .problem import SdpBuilder, SdpProblem, dumps, loads
from .solve import (BACKENDS, SdpSolution, check_kkt, constraint_violation,
                    constraint_violations, lmi_value, solve_sdp)

__all__ = [
    "BACKENDS", "ConicForm", "SdpBuilder", "SdpProblem", "SdpSolution", "check_kkt",
    "compile_problem", "constraint_violation", "constraint_violations", "dumps", "lmi_value",
    "loads", "real_embed", "smat", "solve_sdp", "svec",
]
