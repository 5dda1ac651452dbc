"""Compile an :class:`SdpProblem` to the standard conic form

    minimize c^T x  subject to  G x + s = h,  A x = b,  s in K

where ``K`` is a product of one nonnegative orthant followed by real PSD
cones in scaled-triangle (``svec``) form. Complex Hermitian matrices enter
the real cones through ``[[Re, -Im], [Im, Re]]``; a Hermitian n x n block
is parameterized by n^2 reals (diagonal, then real and imaginary parts of
the strict upper triangle). Each scalar row and each LMI is rescaled to
unit infinity norm, which leaves the feasible set unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .problem import SdpProblem

SQRT2 = np.sqrt(2.0)


# -- svec ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def _tri_index(n: int):
    # upper triangle, column-major: (0,0), (0,1), (1,1), (0,2), ...
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    scale = np.where(rows == cols, 1.0, SQRT2)
    # flat positions for svec, and the svec slot of every full-matrix entry
    flat = rows * n + cols
    full = np.empty((n, n), dtype=int)
    full[rows, cols] = np.arange(rows.size)
    full[cols, rows] = np.arange(rows.size)
    return rows, cols, scale, flat, full.ravel(), 1.0 / scale


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled triangle vector of a symmetric matrix (batched on leading axes)."""
    n = M.shape[-1]
    flat, w = _tri_index(n)[3], _tri_index(n)[2]
    return M.reshape(M.shape[:-2] + (n * n,))[..., flat] * w


def smat(v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    idx = _tri_index(n)
    return (v * idx[5])[..., idx[4]].reshape(v.shape[:-1] + (n, n))


def real_embed(M: np.ndarray) -> np.ndarray:
    """``[[Re M, -Im M], [Im M, Re M]]``, batched on leading axes."""
    re, im = M.real, M.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


# -- block parameterization ------------------------------------------------------

@lru_cache(maxsize=None)
def hermitian_basis(n: int, is_complex: bool) -> np.ndarray:
    """Basis matrices E_k with X = sum_k x_k E_k; shape (num_params, n, n)."""
    mats = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1.0
        mats.append(E)
    pairs = [(i, j) for j in range(n) for i in range(j)]
    for i, j in pairs:
        E = np.zeros((n, n), dtype=complex)
        E[i, j] = E[j, i] = 1.0
        mats.append(E)
    if is_complex:
        for i, j in pairs:
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = 1j
            E[j, i] = -1j
            mats.append(E)
    out = np.array(mats) if is_complex else np.array(mats).real
    out.setflags(write=False)
    return out


def num_params(n: int, is_complex: bool) -> int:
    return n * n if is_complex else svec_len(n)


def params_to_matrix(x: np.ndarray, n: int, is_complex: bool) -> np.ndarray:
    return np.tensordot(x, hermitian_basis(n, is_complex), axes=1)


def matrix_to_params(X: np.ndarray, n: int, is_complex: bool) -> np.ndarray:
    iu, ju = np.triu_indices(n, 1)
    # pairs in the same order as the basis: column-major strict upper triangle
    order = np.lexsort((iu, ju))
    iu, ju = iu[order], ju[order]
    parts = [np.real(np.diag(X)), np.real(X[iu, ju])]
    if is_complex:
        parts.append(np.imag(X[iu, ju]))
    return np.concatenate(parts)


def functional(A: np.ndarray, n: int, is_complex: bool) -> np.ndarray:
    """Coefficients a with tr(A X) = a^T x."""
    E = hermitian_basis(n, is_complex)
    return np.real(np.einsum("ij,kji->k", A, E))


# -- compiled form ----------------------------------------------------------------

@dataclass
class ConicForm:
    c: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    num_lp: int
    psd_dims: list
    var_slices: dict = field(default_factory=dict)
    # bookkeeping to map cone rows back to problem objects
    lp_owner: list = field(default_factory=list)
    eq_owner: list = field(default_factory=list)
    psd_owner: list = field(default_factory=list)
    row_scale_lp: np.ndarray | None = None
    row_scale_eq: np.ndarray | None = None
    psd_scale: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def cone_slices(self):
        """(kind, row slice, dim) for each cone in ``s``."""
        out = []
        if self.num_lp:
            out.append(("l", slice(0, self.num_lp), self.num_lp))
        off = self.num_lp
        for d in self.psd_dims:
            m = svec_len(d)
            out.append(("s", slice(off, off + m), d))
            off += m
        return out

    def degree(self) -> int:
        return self.num_lp + sum(self.psd_dims)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.h.size)
        e[: self.num_lp] = 1.0
        for kind, sl, d in self.cone_slices:
            if kind == "s":
                e[sl] = svec(np.eye(d))
        return e


def _expr_row(expr, slices, problem, n):
    row = np.zeros(n)
    for name, A in expr.blocks:
        blk = problem.block(name)
        row[slices[name]] += functional(A, blk.dim, blk.is_complex)
    for name, a in expr.scalars:
        row[slices[name]] += a
    return row


def compile_problem(problem: SdpProblem, normalize: bool = True) -> ConicForm:
    slices = {}
    off = 0
    for blk in problem.blocks:
        k = num_params(blk.dim, blk.is_complex)
        slices[blk.name] = slice(off, off + k)
        off += k
    for s in problem.scalars:
        slices[s.name] = slice(off, off + 1)
        off += 1
    n = off

    c = _expr_row(problem.objective, slices, problem, n)

    lp_rows, lp_h, lp_owner = [], [], []
    eq_rows, eq_b, eq_owner = [], [], []
    for s in problem.scalars:
        j = slices[s.name].start
        if s.lower is not None:
            row = np.zeros(n)
            row[j] = -1.0
            lp_rows.append(row)
            lp_h.append(-s.lower)
            lp_owner.append(("lower", s.name))
        if s.upper is not None:
            row = np.zeros(n)
            row[j] = 1.0
            lp_rows.append(row)
            lp_h.append(s.upper)
            lp_owner.append(("upper", s.name))
    for con in problem.constraints:
        row = _expr_row(con.expr, slices, problem, n)
        if con.sense == "==":
            eq_rows.append(row)
            eq_b.append(con.rhs)
            eq_owner.append(con.name)
        elif con.sense == "<=":
            lp_rows.append(row)
            lp_h.append(con.rhs)
            lp_owner.append(("con", con.name))
        else:
            lp_rows.append(-row)
            lp_h.append(-con.rhs)
            lp_owner.append(("con", con.name))

    G_lp = np.array(lp_rows).reshape(-1, n)
    h_lp = np.array(lp_h, dtype=float)
    A_eq = np.array(eq_rows).reshape(-1, n)
    b_eq = np.array(eq_b, dtype=float)
    if normalize:
        s_lp = np.max(np.abs(G_lp), axis=1, initial=0.0) if len(lp_rows) else np.zeros(0)
        s_lp = np.where(s_lp > 0, 1.0 / np.where(s_lp > 0, s_lp, 1.0), 1.0)
        s_eq = np.max(np.abs(A_eq), axis=1, initial=0.0) if len(eq_rows) else np.zeros(0)
        s_eq = np.where(s_eq > 0, 1.0 / np.where(s_eq > 0, s_eq, 1.0), 1.0)
    else:
        s_lp = np.ones(len(lp_rows))
        s_eq = np.ones(len(eq_rows))
    G_lp = G_lp * s_lp[:, None]
    h_lp = h_lp * s_lp
    A_eq = A_eq * s_eq[:, None]
    b_eq = b_eq * s_eq

    G_blocks = [sp.csr_matrix(G_lp)]
    h_blocks = [h_lp]
    psd_dims, psd_owner, psd_scale = [], [], []

    # X >= 0 for every block: -svec(embed(X)) + s = 0
    for blk in problem.blocks:
        E = hermitian_basis(blk.dim, blk.is_complex)
        emb = real_embed(E) if blk.is_complex else E
        cols = svec(emb).T  # (svec_len, num_params)
        d = emb.shape[-1]
        Gk = np.zeros((svec_len(d), n))
        Gk[:, slices[blk.name]] = -cols
        G_blocks.append(sp.csr_matrix(Gk))
        h_blocks.append(np.zeros(svec_len(d)))
        psd_dims.append(d)
        psd_owner.append(("block", blk.name))
        psd_scale.append(1.0)

    # sum coef P^H X P + sum s F <= F0:  s = svec(F0 - lhs)
    for lmi in problem.lmis:
        emb_fn = real_embed if lmi.is_complex else (lambda M: M.real)
        d = 2 * lmi.dim if lmi.is_complex else lmi.dim
        Gk = np.zeros((svec_len(d), n))
        for t in lmi.terms:
            blk = problem.block(t.block)
            E = hermitian_basis(blk.dim, blk.is_complex)
            P = t.basis
            cong = np.einsum("ia,kij,jb->kab", P.conj(), E, P) * t.coef
            Gk[:, slices[t.block]] += svec(emb_fn(cong)).T
        for name, F in lmi.scalar_terms:
            Gk[:, slices[name].start] += svec(emb_fn(F))
        hk = svec(emb_fn(lmi.rhs))
        scale = 1.0
        if normalize:
            mx = max(np.max(np.abs(Gk), initial=0.0), np.max(np.abs(hk), initial=0.0))
            scale = 1.0 / mx if mx > 0 else 1.0
        G_blocks.append(sp.csr_matrix(Gk * scale))
        h_blocks.append(hk * scale)
        psd_dims.append(d)
        psd_owner.append(("lmi", lmi.name))
        psd_scale.append(scale)

    G = sp.vstack(G_blocks, format="csr")
    G.eliminate_zeros()
    h = np.concatenate(h_blocks)
    A = sp.csr_matrix(A_eq) if A_eq.size else sp.csr_matrix((0, n))
    return ConicForm(c=c, G=G, h=h, A=A, b=b_eq, num_lp=len(lp_rows), psd_dims=psd_dims,
                     var_slices=slices, lp_owner=lp_owner, eq_owner=eq_owner,
                     psd_owner=psd_owner, row_scale_lp=s_lp, row_scale_eq=s_eq,
                     psd_scale=psd_scale)


def unpack(problem: SdpProblem, form: ConicForm, x: np.ndarray) -> dict:
    """Map a compiled primal vector back to named matrices and scalars."""
    out = {}
    for blk in problem.blocks:
        X = params_to_matrix(x[form.var_slices[blk.name]], blk.dim, blk.is_complex)
        out[blk.name] = X
    for s in problem.scalars:
        out[s.name] = float(x[form.var_slices[s.name]][0])
    return out


def pack(problem: SdpProblem, form: ConicForm, values: dict) -> np.ndarray:
    x = np.zeros(form.n)
    for blk in problem.blocks:
        x[form.var_slices[blk.name]] = matrix_to_params(np.asarray(values[blk.name]),
                                                        blk.dim, blk.is_complex)
    for s in problem.scalars:
        x[form.var_slices[s.name]] = float(values[s.name])
    return x


def margin_form(form: ConicForm, cap: float = 1.0) -> ConicForm:
    """Margin maximization: max t s.t. G x + s = h - t e, A x = b, t <= cap.

    The returned form minimizes ``-t``; ``t`` is the last variable and the
    cap row is appended to the orthant.
    """
    n = form.n
    e = form.identity()
    G = sp.hstack([form.G, sp.csr_matrix(e[:, None])], format="csr")
    cap_row = sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1))
    G = sp.vstack([G[: form.num_lp], cap_row, G[form.num_lp:]], format="csr")
    h = np.concatenate([form.h[: form.num_lp], [cap], form.h[form.num_lp:]])
    A = sp.hstack([form.A, sp.csr_matrix((form.A.shape[0], 1))], format="csr")
    c = np.zeros(n + 1)
    c[-1] = -1.0
    return ConicForm(c=c, G=G, h=h, A=A, b=form.b.copy(), num_lp=form.num_lp + 1,
                     psd_dims=list(form.psd_dims))
