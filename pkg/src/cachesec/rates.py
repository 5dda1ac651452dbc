"""Rate and secrecy evaluation in noise-normalized units.

Channels are divided by the receiver noise amplitude, so the default noise
powers are one and beam covariances are in watts.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar


def lr_sinr(h, beams, rho: int, V, sigma2: float = 1.0) -> float:
    """SINR of stream ``rho`` at a receiver with channel ``h``.

    ``beams`` is a (K, N, N) stack of beam covariances or a (K, N) stack of
    beamforming vectors.
    """
    h = np.asarray(h)
    beams = np.asarray(beams)
    if beams.ndim == 2:
        gains = np.abs(beams.conj() @ h) ** 2
    else:
        gains = np.real(np.einsum("i,kij,j->k", h.conj(), beams, h))
    leak = float(np.real(h.conj() @ V @ h))
    interference = float(np.sum(gains) - gains[rho])
    return float(gains[rho]) / (interference + leak + sigma2)


def lr_rate(h, beams, rho: int, V, sigma2: float = 1.0) -> float:
    """Achievable rate in bits/s/Hz."""
    return float(np.log2(1.0 + lr_sinr(h, beams, rho, V, sigma2)))


def er_capacity(G, W, V, sigma_e2: float = 1.0):
    """ER rate log2 det(I + Z^-1 G^H W G / sigma_e2), Z = I + G^H V G / sigma_e2.

    ``G`` may carry leading batch axes; ``W`` is a covariance or a vector.
    """
    G = np.asarray(G)
    W = np.asarray(W)
    if W.ndim == 1:
        W = np.outer(W, W.conj())
    Gh = np.conj(np.swapaxes(G, -1, -2))
    Ne = G.shape[-1]
    Z = np.eye(Ne) + Gh @ V @ G / sigma_e2
    S = Gh @ W @ G / sigma_e2
    # symmetric form L^-1 S L^-H with Z = L L^H keeps the eigenvalues real
    L = np.linalg.cholesky(0.5 * (Z + np.conj(np.swapaxes(Z, -1, -2))))
    Y = np.linalg.solve(L, S)
    X = np.conj(np.swapaxes(np.linalg.solve(L, np.conj(np.swapaxes(Y, -1, -2))), -1, -2))
    ev = np.linalg.eigvalsh(0.5 * (X + np.conj(np.swapaxes(X, -1, -2))))
    out = np.sum(np.log2(1.0 + np.maximum(ev, 0.0)), axis=-1)
    return float(out) if out.ndim == 0 else out


def sample_errors(rng, shape, radius: float, n: int, surface: bool) -> np.ndarray:
    """``n`` complex errors uniform on the Frobenius sphere or in the ball."""
    X = rng.standard_normal((n,) + shape) + 1j * rng.standard_normal((n,) + shape)
    X /= np.linalg.norm(X.reshape(n, -1), axis=1).reshape((n,) + (1,) * len(shape))
    if not surface:
        dim = 2 * int(np.prod(shape))
        X *= (rng.random(n) ** (1.0 / dim)).reshape((n,) + (1,) * len(shape))
    return radius * X


def worst_case_er_rate(G_hat, radius: float, W, V, sigma_e2: float = 1.0,
                       n_samples: int = 1000, rng=None) -> float:
    """Largest sampled ER rate over the error ball around ``G_hat``.

    Samples ``n_samples`` points on the sphere, ``n_samples`` in the ball and
    the estimate itself. This is a lower bound on the true worst case.
    """
    G_hat = np.asarray(G_hat)
    best = er_capacity(G_hat, W, V, sigma_e2)
    if radius <= 0:
        return best
    rng = np.random.default_rng(0) if rng is None else rng
    for surface in (True, False):
        D = sample_errors(rng, G_hat.shape, radius, n_samples, surface)
        best = max(best, float(np.max(er_capacity(G_hat + D, W, V, sigma_e2))))
    return best


def robust_lmi_margin(G_hat, radius: float, W, V, kappa: float,
                      an_weight: float | None = None) -> tuple:
    """Best smallest-eigenvalue margin of the robust secrecy LMI over its slack.

    For fixed (W, V) the LMI
    ``diag((kappa - d) I, (d / eps^2) I) - U^H T U >= 0`` with ``U = [G_hat, I]``
    and ``T = W - a V`` is checked after the congruence ``diag(I, eps I)``,
    which keeps the slack on the scale of ``kappa``. The margin is concave
    in the slack, so a bounded scalar search finds its maximum. Returns
    ``(margin, slack)``; the LMI is satisfiable iff ``margin >= 0``.
    """
    G_hat = np.asarray(G_hat)
    W = np.asarray(W)
    if W.ndim == 1:
        W = np.outer(W, W.conj())
    a = kappa if an_weight is None else an_weight
    T = W - a * np.asarray(V)
    Ne, N = G_hat.shape[1], G_hat.shape[0]
    U = np.hstack([G_hat, radius * np.eye(N)])
    Q = U.conj().T @ T @ U
    Q = 0.5 * (Q + Q.conj().T)
    sel = np.concatenate([-np.ones(Ne), np.ones(N)])

    def margin(d):
        M = np.diag(np.concatenate([np.full(Ne, kappa), np.zeros(N)]) + d * sel) - Q
        return float(np.linalg.eigvalsh(M)[0])

    hi = kappa + np.linalg.norm(Q, 2) + 1.0
    res = minimize_scalar(lambda d: -margin(d), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-12 * hi})
    d = float(res.x)
    best = margin(d)
    for d0 in (0.0, hi):
        m0 = margin(d0)
        if m0 > best:
            best, d = m0, d0
    return best, d
