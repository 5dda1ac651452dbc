"""Generic SDP container: PSD matrix blocks, bounded scalars, affine LMIs.

A problem is assembled with :class:`SdpBuilder` and frozen into an
:class:`SdpProblem`. Constraints are expressed in the natural matrix form

* scalar:  ``sum_i tr(A_i X_i) + sum_j a_j s_j  (<= | >= | ==)  rhs``
* LMI:     ``sum_t coef_t P_t^H X_t P_t + sum_j s_j F_j  <=  F0`` (Loewner order)

Complex blocks are Hermitian; real blocks are symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class PsdBlock:
    name: str
    dim: int
    is_complex: bool = True


@dataclass(frozen=True)
class ScalarVar:
    name: str
    lower: float | None = 0.0
    upper: float | None = None


@dataclass(frozen=True)
class LinearExpr:
    """``sum tr(A X) + sum a s``; ``blocks`` and ``scalars`` are tuples of pairs."""

    blocks: tuple = ()
    scalars: tuple = ()


@dataclass(frozen=True)
class ScalarConstraint:
    name: str
    expr: LinearExpr
    sense: str
    rhs: float


@dataclass(frozen=True)
class CongruenceTerm:
    """``coef * P^H X P`` for block ``X``; ``P`` has shape (block dim, LMI dim)."""

    block: str
    basis: np.ndarray
    coef: float = 1.0


@dataclass(frozen=True)
class LmiConstraint:
    name: str
    dim: int
    is_complex: bool
    terms: tuple
    scalar_terms: tuple
    rhs: np.ndarray


@dataclass(frozen=True)
class SdpProblem:
    blocks: tuple
    scalars: tuple
    objective: LinearExpr
    constraints: tuple
    lmis: tuple

    def block(self, name: str) -> PsdBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def block_names(self):
        return tuple(b.name for b in self.blocks)

    @property
    def scalar_names(self):
        return tuple(s.name for s in self.scalars)

    def scaled_objective(self, factor: float) -> "SdpProblem":
        obj = LinearExpr(tuple((n, factor * A) for n, A in self.objective.blocks),
                         tuple((n, factor * a) for n, a in self.objective.scalars))
        return SdpProblem(self.blocks, self.scalars, obj, self.constraints, self.lmis)

    def with_constraints(self, extra) -> "SdpProblem":
        return SdpProblem(self.blocks, self.scalars, self.objective,
                          self.constraints + tuple(extra), self.lmis)


def _as_field(matrix, is_complex: bool, what: str) -> np.ndarray:
    matrix = np.asarray(matrix)
    if is_complex:
        return matrix.astype(complex)
    if np.iscomplexobj(matrix):
        if np.any(matrix.imag != 0):
            raise ValueError(f"{what}: complex data in a real constraint")
        matrix = matrix.real
    return matrix.astype(float)


def _hermitian(matrix, is_complex: bool, what: str) -> np.ndarray:
    matrix = _as_field(matrix, is_complex, what)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{what}: expected a square matrix, got shape {matrix.shape}")
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > 1e-10 * scale:
        raise ValueError(f"{what}: matrix is not Hermitian")
    return 0.5 * (matrix + matrix.conj().T)


class SdpBuilder:
    """Incrementally declare variables and constraints, then :meth:`build`."""

    def __init__(self):
        self._blocks: dict[str, PsdBlock] = {}
        self._scalars: dict[str, ScalarVar] = {}
        self._objective = LinearExpr()
        self._constraints: list[ScalarConstraint] = []
        self._lmis: list[LmiConstraint] = []

    # -- variables ----------------------------------------------------------
    def block(self, name: str, dim: int, is_complex: bool = True) -> str:
        self._check_new(name)
        if dim < 1:
            raise ValueError(f"block {name}: dimension must be >= 1")
        self._blocks[name] = PsdBlock(name, int(dim), is_complex)
        return name

    def scalar(self, name: str, lower: float | None = 0.0, upper: float | None = None) -> str:
        self._check_new(name)
        if lower is not None and upper is not None and upper < lower:
            raise ValueError(f"scalar {name}: upper bound below lower bound")
        self._scalars[name] = ScalarVar(name, lower, upper)
        return name

    def _check_new(self, name):
        if name in self._blocks or name in self._scalars:
            raise ValueError(f"variable {name} declared twice")

    # -- expressions --------------------------------------------------------
    def _expr(self, blocks, scalars, what) -> LinearExpr:
        out_blocks = []
        for name, A in (blocks or {}).items():
            if name not in self._blocks:
                raise KeyError(f"{what}: unknown block {name}")
            blk = self._blocks[name]
            A = _hermitian(A, blk.is_complex, f"{what}/{name}")
            if A.shape[0] != blk.dim:
                raise ValueError(f"{what}/{name}: dimension mismatch")
            out_blocks.append((name, A))
        out_scalars = []
        for name, a in (scalars or {}).items():
            if name not in self._scalars:
                raise KeyError(f"{what}: unknown scalar {name}")
            out_scalars.append((name, float(a)))
        return LinearExpr(tuple(out_blocks), tuple(out_scalars))

    def minimize(self, blocks=None, scalars=None) -> None:
        self._objective = self._expr(blocks, scalars, "objective")

    def add(self, name: str, blocks=None, scalars=None, sense: str = "<=", rhs: float = 0.0) -> None:
        if sense not in SENSES:
            raise ValueError(f"constraint {name}: unknown sense {sense!r}")
        self._constraints.append(
            ScalarConstraint(name, self._expr(blocks, scalars, name), sense, float(rhs)))

    def add_lmi(self, name: str, terms, rhs, scalars=None, is_complex: bool = True) -> None:
        """``sum coef P^H X P + sum s F  <=  rhs``; ``terms`` holds (block, P, coef)."""
        rhs = _hermitian(rhs, is_complex, f"{name}/rhs")
        dim = rhs.shape[0]
        out_terms = []
        for block, P, coef in terms:
            if block not in self._blocks:
                raise KeyError(f"{name}: unknown block {block}")
            P = _as_field(P, is_complex, f"{name}/{block}")
            blk = self._blocks[block]
            if P.shape != (blk.dim, dim):
                raise ValueError(f"{name}: basis for {block} must have shape {(blk.dim, dim)}")
            if blk.is_complex and not is_complex:
                raise ValueError(f"{name}: complex block {block} in a real LMI")
            out_terms.append(CongruenceTerm(block, P, float(coef)))
        out_scalars = []
        for sname, F in (scalars or {}).items():
            if sname not in self._scalars:
                raise KeyError(f"{name}: unknown scalar {sname}")
            F = _hermitian(F, is_complex, f"{name}/{sname}")
            if F.shape[0] != dim:
                raise ValueError(f"{name}/{sname}: dimension mismatch")
            out_scalars.append((sname, F))
        self._lmis.append(LmiConstraint(name, dim, is_complex, tuple(out_terms),
                                        tuple(out_scalars), rhs))

    def build(self) -> SdpProblem:
        return SdpProblem(tuple(self._blocks.values()), tuple(self._scalars.values()),
                          self._objective, tuple(self._constraints), tuple(self._lmis))


# -- text fixture format -------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _bound(text):
    return None if text == "none" else float(text)


def _matrix_lines(tag, M):
    M = np.asarray(M)
    idx = np.argwhere(np.abs(M) > 0)
    lines = [f"{tag} {M.shape[0]} {M.shape[1]} {len(idx)}"]
    for i, j in idx:
        v = complex(M[i, j])
        lines.append(f"{i} {j} {_fmt(v.real)} {_fmt(v.imag)}")
    return lines


def dumps(problem: SdpProblem) -> str:
    """Serialize to a line-based text fixture (named blocks + coefficient triplets)."""
    out = ["SDP 1"]
    for b in problem.blocks:
        out.append(f"BLOCK {b.name} {b.dim} {'complex' if b.is_complex else 'real'}")
    for s in problem.scalars:
        lo = "none" if s.lower is None else _fmt(s.lower)
        hi = "none" if s.upper is None else _fmt(s.upper)
        out.append(f"SCALAR {s.name} {lo} {hi}")

    def expr_lines(expr):
        lines = []
        for name, A in expr.blocks:
            lines += _matrix_lines(f"B {name}", A)
        for name, a in expr.scalars:
            lines.append(f"S {name} {_fmt(a)}")
        return lines

    out.append("OBJ")
    out += expr_lines(problem.objective)
    for con in problem.constraints:
        out.append(f"CON {con.name} {con.sense} {_fmt(con.rhs)}")
        out += expr_lines(con.expr)
    for lmi in problem.lmis:
        out.append(f"LMI {lmi.name} {lmi.dim} {'complex' if lmi.is_complex else 'real'}")
        for t in lmi.terms:
            out += _matrix_lines(f"T {t.block} {_fmt(t.coef)}", t.basis)
        for name, F in lmi.scalar_terms:
            out += _matrix_lines(f"F {name}", F)
        out += _matrix_lines("R", lmi.rhs)
    out.append("END")
    return "\n".join(out) + "\n"


def loads(text: str) -> SdpProblem:
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line.split()

    def read_matrix(header_tail, dtype=complex):
        rows, cols, nnz = (int(v) for v in header_tail[-3:])
        M = np.zeros((rows, cols), dtype=dtype)
        for _ in range(nnz):
            i, j, re, im = next_line()
            M[int(i), int(j)] = complex(float(re), float(im)) if dtype is complex else float(re)
        return M

    head = next_line()
    if head != ["SDP", "1"]:
        raise ValueError("not an SDP fixture")
    b = SdpBuilder()
    pending = None  # (kind, payload) of the section being read

    def flush():
        if pending is None:
            return
        kind, data = pending
        if kind == "OBJ":
            b.minimize(data["blocks"], data["scalars"])
        elif kind == "CON":
            b.add(data["name"], data["blocks"], data["scalars"], data["sense"], data["rhs"])
        elif kind == "LMI":
            b.add_lmi(data["name"], data["terms"], data["rhs"], data["F"], data["complex"])

    while pos < len(lines):
        tok = next_line()
        if not tok:
            continue
        tag = tok[0]
        if tag == "BLOCK":
            b.block(tok[1], int(tok[2]), tok[3] == "complex")
        elif tag == "SCALAR":
            b.scalar(tok[1], _bound(tok[2]), _bound(tok[3]))
        elif tag in ("OBJ", "CON", "LMI", "END"):
            flush()
            if tag == "OBJ":
                pending = ("OBJ", dict(blocks={}, scalars={}))
            elif tag == "CON":
                pending = ("CON", dict(name=tok[1], sense=tok[2], rhs=float(tok[3]),
                                       blocks={}, scalars={}))
            elif tag == "LMI":
                pending = ("LMI", dict(name=tok[1], complex=tok[3] == "complex",
                                       terms=[], F={}, rhs=None))
            else:
                pending = None
                break
        elif tag == "B":
            pending[1]["blocks"][tok[1]] = read_matrix(tok)
        elif tag == "S":
            pending[1]["scalars"][tok[1]] = float(tok[2])
        elif tag == "T":
            pending[1]["terms"].append((tok[1], read_matrix(tok), float(tok[2])))
        elif tag == "F":
            pending[1]["F"][tok[1]] = read_matrix(tok)
        elif tag == "R":
            pending[1]["rhs"] = read_matrix(tok)
        else:
            raise ValueError(f"unexpected fixture line: {' '.join(tok)}")
    return b.build()
