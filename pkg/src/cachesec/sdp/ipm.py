"""Primal-dual interior-point method for LP + SDP cone programs.

Solves the homogeneous self-dual embedding of

    minimize c^T x   s.t.  G x + s = h,  A x = b,  s in K

with Nesterov-Todd scaling and a Mehrotra predictor-corrector. ``K`` is an
orthant followed by PSD cones in svec form (see :mod:`.conic`). Newton
systems are reduced to the normal matrix G^T W^-1 W^-T G, which is
assembled cone by cone from the dense column support of each cone. When
its refined solves lose accuracy the run switches to the sparse
quasi-definite augmented system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conic import ConicForm, smat, svec


@dataclass
class IpmResult:
    status: str  # optimal | primal_infeasible | dual_infeasible | inaccurate
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    iterations: int
    pres: float
    dres: float
    gap: float
    pcost: float
    dcost: float
    reduced: bool = False  # accepted at the relaxed tolerances


# an unfinished run is still accepted when its best iterate meets this multiple
# of the tolerances; late iterations can lose accuracy in the KKT solves
RELAXED_FACTOR = 10.0

# objectives below this magnitude are measured on an absolute gap scale
GAP_FLOOR = 1e-4

# G is kept dense as well when it has at most this many entries
DENSE_G_MAX = 4e6


class _Cones:
    """Cone views of a compiled problem and scaling operations.

    PSD cones of equal order are stacked so every operation is one batched
    array expression per group.
    """

    def __init__(self, form: ConicForm):
        self.form = form
        self.G = form.G.tocsr()
        self.Gd = self.G.toarray() if self.G.shape[0] * self.G.shape[1] <= DENSE_G_MAX else None
        self.nlp = form.num_lp
        self.lp = slice(0, self.nlp)
        self.has_free_columns = bool(np.any(np.diff(self.G.tocsc().indptr) == 0))
        groups = {}
        for kind, sl, d in form.cone_slices:
            if kind == "s":
                groups.setdefault(d, []).append(np.arange(sl.start, sl.stop))
        self.groups = [(d, np.array(rows)) for d, rows in sorted(groups.items())]
        self.Glp = self.G[self.lp]
        self._lp_block = None
        # per PSD cone: its rows, the columns it touches and those columns as matrices
        self.blocks = []
        for gi, (d, rows) in enumerate(self.groups):
            for j, r in enumerate(rows):
                Gk = self.G[r]
                cols = np.unique(Gk.indices)
                if cols.size:
                    self.blocks.append((gi, j, r, cols, smat(Gk[:, cols].toarray().T, d)))

    @property
    def lp_block(self):
        """Columns touched by the orthant rows and that dense slice of G."""
        if self._lp_block is None:
            cols = np.unique(self.Glp.indices)
            self._lp_block = (cols, self.Glp[:, cols].toarray())
        return self._lp_block

    def matvec(self, x):
        return self.Gd @ x if self.Gd is not None else self.G @ x

    def rmatvec(self, z):
        return self.Gd.T @ z if self.Gd is not None else self.G.T @ z

    # scaling: (w, lamL, [(R, Rinv, lam) per group])
    @staticmethod
    def _nt(S, Z):
        L1 = np.linalg.cholesky(S)
        L2 = np.linalg.cholesky(Z)
        U, lam, Vt = np.linalg.svd(np.swapaxes(L2, -1, -2) @ L1)
        R = L1 @ np.swapaxes(Vt, -1, -2) / np.sqrt(lam)[..., None, :]
        L1inv = np.linalg.inv(L1)
        Rinv = (np.sqrt(lam)[..., :, None] * Vt) @ L1inv
        return R, Rinv, lam

    def nt_scaling(self, s, z):
        sl, zl = s[self.lp], z[self.lp]
        grp = [self._nt(smat(s[rows], d), smat(z[rows], d)) for d, rows in self.groups]
        return (np.sqrt(sl / zl), np.sqrt(sl * zl), grp)

    def identity_scaling(self):
        grp = []
        for d, rows in self.groups:
            k = rows.shape[0]
            eye = np.broadcast_to(np.eye(d), (k, d, d)).copy()
            grp.append((eye, eye.copy(), np.ones((k, d))))
        return (np.ones(self.nlp), np.ones(self.nlp), grp)

    def _congruence(self, scal, v, which, lp_op):
        out = np.empty_like(v)
        w = scal[0]
        out[self.lp] = v[self.lp] * w if lp_op == "mul" else v[self.lp] / w
        for (d, rows), sc in zip(self.groups, scal[2]):
            M = smat(v[rows], d)
            if which == "winvT":
                X = sc[1] @ M @ np.swapaxes(sc[1], -1, -2)
            elif which == "winv":
                X = np.swapaxes(sc[1], -1, -2) @ M @ sc[1]
            elif which == "w":
                X = np.swapaxes(sc[0], -1, -2) @ M @ sc[0]
            else:
                X = sc[0] @ M @ np.swapaxes(sc[0], -1, -2)
            out[rows] = svec(X)
        return out

    def apply_winvT(self, scal, v):
        return self._congruence(scal, v, "winvT", "div")

    def apply_winv(self, scal, v):
        return self._congruence(scal, v, "winv", "div")

    def apply_w(self, scal, v):
        return self._congruence(scal, v, "w", "mul")

    def apply_wT(self, scal, v):
        return self._congruence(scal, v, "wT", "mul")

    def _scaled_blocks(self, scal, lp=True):
        if lp:
            cols, Gk = self.lp_block
            if cols.size:
                yield np.arange(self.nlp), cols, Gk / scal[0][:, None]
        for gi, j, rows, cols, Mk in self.blocks:
            Rinv = scal[2][gi][1][j]
            yield rows, cols, svec(Rinv @ Mk @ Rinv.T).T

    def normal_matrix(self, scal, n):
        """G^T W^-1 W^-T G."""
        H = np.zeros((n, n))
        for _, cols, B in self._scaled_blocks(scal):
            H[np.ix_(cols, cols)] += B.T @ B
        return H

    def normal_matrix_sparse(self, scal, n):
        """G^T W^-1 W^-T G as a sparse matrix (large separable problems)."""
        Bl = sp.diags(1.0 / scal[0]) @ self.Glp
        H = (Bl.T @ Bl).tocoo()
        rows, cols, vals = [H.row], [H.col], [H.data]
        for _, c, B in self._scaled_blocks(scal, lp=False):
            K = B.T @ B
            rows.append(np.repeat(c, c.size))
            cols.append(np.tile(c, c.size))
            vals.append(K.ravel())
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    def scaled_matrix_sparse(self, scal, n):
        """W^-T G as a sparse matrix."""
        parts = [(sp.diags(1.0 / scal[0]) @ self.Glp).tocoo()]
        rows, cols, vals = [parts[0].row], [parts[0].col], [parts[0].data]
        for r, c, B in self._scaled_blocks(scal, lp=False):
            rows.append(np.repeat(r, c.size))
            cols.append(np.tile(c, r.size))
            vals.append(B.ravel())
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.G.shape[0], n))

    def scaled_matrix(self, scal, n):
        """W^-T G as a dense array."""
        out = np.zeros((self.G.shape[0], n))
        for rows, cols, B in self._scaled_blocks(scal):
            out[np.ix_(rows, cols)] = B
        return out

    # Jordan algebra in the scaled space, where lambda is diagonal
    def lam_vec(self, scal):
        out = np.empty(self.G.shape[0])
        out[self.lp] = scal[1]
        for (d, rows), sc in zip(self.groups, scal[2]):
            lam = sc[2]
            D = np.zeros(lam.shape + (d,))
            D[..., np.arange(d), np.arange(d)] = lam
            out[rows] = svec(D)
        return out

    def circ(self, u, v):
        out = np.empty_like(u)
        out[self.lp] = u[self.lp] * v[self.lp]
        for d, rows in self.groups:
            U, V = smat(u[rows], d), smat(v[rows], d)
            UV = U @ V
            out[rows] = svec(0.5 * (UV + np.swapaxes(UV, -1, -2)))
        return out

    def lam_div(self, scal, v):
        """Solve lambda o x = v for x."""
        out = np.empty_like(v)
        out[self.lp] = v[self.lp] / scal[1]
        for (d, rows), sc in zip(self.groups, scal[2]):
            lam = sc[2]
            out[rows] = svec(2.0 * smat(v[rows], d) / (lam[..., :, None] + lam[..., None, :]))
        return out

    def max_step(self, scal, dv):
        """Largest alpha with lambda + alpha dv in the cone (scaled space)."""
        mn = np.min(dv[self.lp] / scal[1], initial=np.inf)
        for (d, rows), sc in zip(self.groups, scal[2]):
            isq = 1.0 / np.sqrt(sc[2])
            D = smat(dv[rows], d) * isq[..., :, None] * isq[..., None, :]
            mn = min(mn, float(np.min(np.linalg.eigvalsh(D))))
        return -1.0 / mn if mn < 0 else np.inf

    def min_eig(self, v):
        """Smallest 'eigenvalue' of v over all cones."""
        out = np.min(v[self.lp], initial=np.inf)
        for d, rows in self.groups:
            out = min(out, float(np.min(np.linalg.eigvalsh(smat(v[rows], d)))))
        return out


# dense QR of the scaled constraint matrix is used below this flop count
QR_MAX_WORK = 2e8
# above this many variables the normal matrix is factored as a sparse matrix
SPARSE_MIN_N = 2000
# static regularization of the sparse quasi-definite system
AUG_REG = 1e-11
# refined relative residual above which the normal equations are abandoned
KKT_SWITCH_RES = 1e-10


class _Kkt:
    """Factorization of [[0, A^T, G^T], [A, 0, 0], [G, 0, -W^T W]].

    ``method`` is ``normal`` (QR of W^-T G when cheap, else a Cholesky of the
    normal matrix) or ``augmented`` (sparse quasi-definite LDL-type solve,
    slower but without the squared conditioning).
    """

    def __init__(self, cones: _Cones, A: sp.csr_matrix, scal, n, reg=1e-13,
                 method: str = "normal"):
        self.cones = cones
        self.A = A
        self.scal = scal
        self.n = n
        self.residual = 0.0
        m = cones.G.shape[0]
        self.p = A.shape[0]
        # variables absent from G (often free scalars tied by equalities) leave
        # G^T W^-1 W^-T G singular; adding A^T A to it is an equivalent system
        self.augment = bool(self.p) and cones.has_free_columns
        self.lu = None
        self.aug = None
        if method == "augmented":
            B = cones.scaled_matrix_sparse(scal, n)
            K = sp.bmat([[sp.identity(n) * AUG_REG, A.T, B.T],
                         [A, -AUG_REG * sp.identity(self.p), None],
                         [B, None, -sp.identity(m)]], format="csc")
            self.aug = self._splu(K)
            self.refine = 8
            return
        if m * n * n <= QR_MAX_WORK and m >= n and not self.augment:
            # orthogonal factorization of W^-T G avoids squaring its condition number
            R = sla.qr(cones.scaled_matrix(scal, n), mode="r", check_finite=False)[0][:n]
            if np.min(np.abs(np.diag(R))) <= 1e-300:
                raise np.linalg.LinAlgError("rank deficient scaled constraint matrix")
            self.cho = (R, False)
            self.refine = 2
        elif n >= SPARSE_MIN_N:
            H = cones.normal_matrix_sparse(scal, n)
            if self.augment:
                H = H + (A.T @ A).tocsc()
            H = H + sp.diags(reg * np.maximum(H.diagonal(), 1e-300))
            self.lu = self._splu(H.tocsc())
            self.refine = 8
        else:
            H = cones.normal_matrix(scal, n)
            if self.augment:
                H += (A.T @ A).toarray()
            # per-entry regularization; a global scale would swamp small pivots
            H[np.diag_indices(n)] += reg * np.maximum(np.diag(H), 1e-300)
            self.cho = sla.cho_factor(H, lower=True, check_finite=False)
            self.refine = 8
        if self.p:
            Ad = A.toarray()
            self.HiAt = self._hsolve(Ad.T)
            S = Ad @ self.HiAt
            S[np.diag_indices(self.p)] += reg * max(1.0, np.max(np.abs(np.diag(S)), initial=0.0))
            self.scho = sla.cho_factor(S, lower=True, check_finite=False)

    @staticmethod
    def _splu(K):
        try:
            # symmetric ordering with diagonal pivots
            return spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc

    def _hsolve(self, r):
        if self.lu is not None:
            return self.lu.solve(np.asarray(r, dtype=float))
        return sla.cho_solve(self.cho, r, check_finite=False)

    def solve(self, bx, by, bz, refine: int | None = None):
        """Returns ux, uy, W uz, with iterative refinement.

        Refinement stops after ``refine`` steps or once the residual stops
        shrinking.
        """
        refine = self.refine if refine is None else refine
        ux, uy, wuz = self._solve(bx, by, bz)
        c = self.cones
        prev = np.inf
        bnorm = max(np.linalg.norm(bx), np.linalg.norm(by), np.linalg.norm(bz), 1e-300)
        best = None
        for _ in range(refine + 1):
            uz = c.apply_winv(self.scal, wuz)
            r1 = bx - self.A.T @ uy - c.rmatvec(uz)
            r2 = by - self.A @ ux
            r3 = bz - c.matvec(ux) + c.apply_wT(self.scal, wuz)
            res = max(np.linalg.norm(r1), np.linalg.norm(r2), np.linalg.norm(r3)) / bnorm
            if best is None or res < best[0]:
                best = (res, ux, uy, wuz)
            if res < 1e-15 or res > 0.5 * prev:
                break
            prev = res
            dx, dy, dwz = self._solve(r1, r2, r3)
            ux, uy, wuz = ux + dx, uy + dy, wuz + dwz
        self.residual = max(self.residual, best[0])
        return best[1:]

    def _solve(self, bx, by, bz):
        c = self.cones
        wbz = c.apply_winvT(self.scal, bz)
        if self.aug is not None:
            n, p = self.n, self.p
            u = self.aug.solve(np.concatenate([bx, by, wbz]))
            return u[:n], u[n:n + p], u[n + p:]
        r = bx + c.rmatvec(c.apply_winv(self.scal, wbz))  # G^T W^-1 W^-T bz
        if self.augment:
            r = r + self.A.T @ by
        if self.p:
            Hr = self._hsolve(r)
            uy = sla.cho_solve(self.scho, self.A @ Hr - by, check_finite=False)
            ux = Hr - self.HiAt @ uy
        else:
            uy = np.zeros(0)
            ux = self._hsolve(r)
        wuz = c.apply_winvT(self.scal, c.matvec(ux) - bz)
        return ux, uy, wuz


def solve_conic(form: ConicForm, tol: float = 1e-7, max_iter: int = 200,
                feastol: float | None = None, verbose: bool = False) -> IpmResult:
    feastol = tol if feastol is None else feastol
    c = form.c
    h = form.h
    b = form.b
    A = form.A.tocsr()
    n, m, p = c.size, h.size, b.size
    cones = _Cones(form)
    G = cones.G
    e = form.identity()
    nu = form.degree()

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, np.linalg.norm(h))

    # starting point from two least-squares problems with W = I
    try:
        kkt = _Kkt(cones, A, cones.identity_scaling(), n)
        x, y, wz = kkt.solve(np.zeros(n), b, h)
        s = -wz
        _, y2, z = kkt.solve(-c, np.zeros(p), np.zeros(m))
        y = y2
    except (np.linalg.LinAlgError, ValueError):
        x = np.zeros(n)
        y = np.zeros(p)
        s = e.copy()
        z = e.copy()
    nrms, nrmz = np.linalg.norm(s), np.linalg.norm(z)
    ts = -cones.min_eig(s)
    tz = -cones.min_eig(z)
    s = s + (1.0 + ts) * e if ts >= -1e-8 * max(nrms, 1.0) else s
    z = z + (1.0 + tz) * e if tz >= -1e-8 * max(nrmz, 1.0) else z
    tau, kappa = 1.0, 1.0

    status = "inaccurate"
    pres = dres = gap = np.inf
    pcost = dcost = np.nan
    it = 0
    best = None
    scal = None
    method = "normal"
    for it in range(max_iter + 1):
        # residuals of the embedding
        hrx = -(A.T @ y) - cones.rmatvec(z)
        hry = A @ x
        hrz = s + cones.matvec(x)
        rx = hrx - c * tau
        ry = hry - b * tau
        rz = hrz - h * tau
        cx, by_, hz = c @ x, b @ y, h @ z
        rt = kappa + cx + by_ + hz
        gap_raw = s @ z
        mu = (gap_raw + tau * kappa) / (nu + 1)

        pcost = cx / tau
        dcost = -(by_ + hz) / tau
        pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0) / tau
        dres = np.linalg.norm(rx) / resx0 / tau
        gap = gap_raw / tau**2
        relgap = abs(pcost - dcost) / max(GAP_FLOOR, min(abs(pcost), abs(dcost)))
        if verbose:
            print(f"{it:3d} {pcost: .8e} {dcost: .8e} pres {pres:.1e} dres {dres:.1e} "
                  f"gap {gap:.1e} tau {tau:.1e} kap {kappa:.1e}")

        relgap2 = gap / max(GAP_FLOOR, min(abs(pcost), abs(dcost)))
        if pres <= feastol and dres <= feastol and relgap <= tol and relgap2 <= tol:
            status = "optimal"
            break
        # infeasibility certificates
        if hz + by_ < 0:
            pinf = np.linalg.norm(hrx) / resx0 / -(hz + by_)
            if pinf <= feastol:
                status = "primal_infeasible"
                break
        if cx < 0:
            dinf = max(np.linalg.norm(hry) / resy0, np.linalg.norm(hrz) / resz0) / -cx
            if dinf <= feastol:
                status = "dual_infeasible"
                break
        score = max(pres / feastol, dres / feastol, relgap / tol, relgap2 / tol)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), z.copy(), s.copy(), tau, it)
        if it == max_iter:
            break

        try:
            if scal is None:
                scal = cones.nt_scaling(s, z)
            kkt = _Kkt(cones, A, scal, n, method=method)
            vx, vy, wvz = kkt.solve(-c, b, h)
            if method == "normal" and kkt.residual > KKT_SWITCH_RES:
                # the normal equations lost accuracy; stay augmented from here on
                method = "augmented"
                kkt = _Kkt(cones, A, scal, n, method=method)
                vx, vy, wvz = kkt.solve(-c, b, h)
        except (np.linalg.LinAlgError, ValueError):
            break
        lam = cones.lam_vec(scal)
        lamsq = cones.circ(lam, lam)

        denom_v = wvz @ wvz

        def newton(sigma, d_s, d_k):
            coef = 1.0 - sigma
            bz = -cones.apply_wT(scal, cones.lam_div(scal, d_s)) - coef * rz
            ux, uy, wuz = kkt.solve(coef * rx, -coef * ry, bz)
            dtau = (coef * rt + d_k / tau + c @ ux + b @ uy + h @ cones.apply_winv(scal, wuz)) / (
                kappa / tau + denom_v)
            dx = ux + dtau * vx
            dy = uy + dtau * vy
            wdz = wuz + dtau * wvz
            wds = cones.lam_div(scal, d_s) - wdz
            dkap = (d_k - kappa * dtau) / tau
            return dx, dy, wdz, wds, dtau, dkap

        def step_length(wds, wdz, dtau, dkap):
            a = min(cones.max_step(scal, wds), cones.max_step(scal, wdz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        try:
            # predictor
            aff = newton(0.0, -lamsq, -tau * kappa)
            a_aff = min(1.0, step_length(*aff[2:]))
            sigma = (1.0 - a_aff) ** 3
            # corrector
            corr = cones.circ(aff[3], aff[2])
            d_s = -lamsq + sigma * mu * e - corr
            d_k = -tau * kappa + sigma * mu - aff[4] * aff[5]
            dx, dy, wdz, wds, dtau, dkap = newton(sigma, d_s, d_k)
            alpha = min(1.0, 0.99 * step_length(wds, wdz, dtau, dkap))
            if verbose:
                print(f"    step {alpha:.3e} sigma {sigma:.2e}")
        except (np.linalg.LinAlgError, ValueError):
            break
        if not np.isfinite(alpha) or alpha < 1e-10:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * cones.apply_winv(scal, wdz)
        s = s + alpha * cones.apply_wT(scal, wds)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap
        # fresh scaling from (s, z) avoids drift of the product form near the end
        scal = None

    reduced = False
    if status == "inaccurate" and best is not None:
        score, x, y, z, s, tau, _ = best
        if score <= RELAXED_FACTOR:
            status, reduced = "optimal", True
    if status in ("optimal", "inaccurate"):
        return IpmResult(status, x / tau, s / tau, y / tau, z / tau, it, pres, dres, gap,
                         pcost, dcost, reduced)
    if status == "primal_infeasible":
        scale = -(h @ z + b @ y)
        return IpmResult(status, x, s, y / scale, z / scale, it, pres, dres, gap, pcost, dcost)
    scale = -(c @ x)
    return IpmResult(status, x / scale, s / scale, y, z, it, pres, dres, gap, pcost, dcost)
