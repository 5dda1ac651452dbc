"""Constraint blocks of the fixed-cooperation and cache-training SDPs.

All quantities are noise normalized: channels are divided by the receiver
noise amplitude, so ``sigma2 = sigma_e2 = 1`` unless stated otherwise.
Beam covariances are stored in a power unit ``u`` (watts per solver unit)
chosen for conditioning; every builder multiplies its W and V coefficients
by ``u``. The beam block of LR ``rho`` may be restricted to a subset of
antennas (its *support*); antennas outside the support carry exactly zero.

Variable names, for a name ``prefix``:

* ``{prefix}W{rho}``  beam covariance of LR ``rho`` (support x support)
* ``{prefix}V``       artificial-noise covariance (all antennas)
* ``{prefix}d{rho}``  robust secrecy slack, in units of ``u * eps^2``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Scenario, SystemConfig
from .sdp import SdpBuilder, SdpProblem

# relative tightening of the SINR and secrecy targets; keeps solutions that
# sit on a boundary strictly on the feasible side after solver round-off
TARGET_MARGIN = 1e-6

MODES = ("robust", "perfect", "nonrobust")


@dataclass(frozen=True)
class ScalarRow:
    name: str
    blocks: dict
    scalars: dict
    sense: str
    rhs: float


@dataclass(frozen=True)
class MatrixIneq:
    """``sum coef P^H X P + sum s F  <=  rhs``."""

    name: str
    terms: tuple
    scalars: dict
    rhs: np.ndarray


@dataclass(frozen=True)
class ConstraintSet:
    """Scenario data in the form the constraint builders consume."""

    channel_outer: np.ndarray  # (K, N, N)  h h^H
    selectors: np.ndarray  # (M, N, N)  0/1 diagonal per BS
    sinr_targets: np.ndarray  # (K,)
    secrecy_targets: np.ndarray  # (K,)
    an_weights: np.ndarray  # (K,)
    er_estimate: np.ndarray  # (N, Ne)
    radius: float
    files: tuple  # file index of each LR
    supports: tuple  # antenna indices carrying W_rho
    power_unit: float
    noise: float = 1.0
    er_noise: float = 1.0
    prefix: str = ""

    @property
    def num_lr(self) -> int:
        return self.channel_outer.shape[0]

    @property
    def num_bs(self) -> int:
        return self.selectors.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channel_outer.shape[1]

    @property
    def robust_stack(self) -> np.ndarray:
        """``[G_hat, I]`` of shape (N, Ne + N)."""
        return np.hstack([self.er_estimate, np.eye(self.num_antennas)])

    def w(self, rho: int) -> str:
        return f"{self.prefix}W{rho}"

    @property
    def v(self) -> str:
        return f"{self.prefix}V"

    def delta(self, rho: int) -> str:
        return f"{self.prefix}d{rho}"

    def restrict(self, rho: int, A: np.ndarray) -> np.ndarray:
        """Trace coefficient of the reduced block: S^T A S."""
        idx = self.supports[rho]
        return A[np.ix_(idx, idx)]

    def restrict_rows(self, rho: int, P: np.ndarray) -> np.ndarray:
        """Congruence basis of the reduced block: S^T P."""
        return P[self.supports[rho]]

    def bs_in_support(self, rho: int, m: int) -> bool:
        return bool(np.any(np.diag(self.selectors[m])[self.supports[rho]] > 0))


def bs_selectors(num_bs: int, antennas_per_bs: int) -> np.ndarray:
    N = num_bs * antennas_per_bs
    out = np.zeros((num_bs, N, N))
    for m in range(num_bs):
        idx = np.arange(m * antennas_per_bs, (m + 1) * antennas_per_bs)
        out[m, idx, idx] = 1.0
    return out


def default_power_unit(lr_channels, sinr_target, noise=1.0) -> float:
    """Interference-free matched-filter power of all LRs (watts)."""
    gains = np.sum(np.abs(lr_channels) ** 2, axis=1)
    return float(np.sum(sinr_target * noise / np.maximum(gains, 1e-300)))


def support_from_q(q, files, num_bs, antennas_per_bs) -> tuple:
    """Antenna indices of the cooperating BSs of each LR."""
    q = np.asarray(q)
    out = []
    for f in files:
        bss = np.flatnonzero(q[f] > 0.5)
        out.append(np.concatenate([np.arange(m * antennas_per_bs, (m + 1) * antennas_per_bs)
                                   for m in bss]).astype(int) if bss.size else
                   np.zeros(0, dtype=int))
    return tuple(out)


def make_constraint_set(scenario: Scenario, config: SystemConfig, er_channel=None,
                        supports=None, prefix: str = "", power_unit: float | None = None,
                        margin: float = TARGET_MARGIN) -> ConstraintSet:
    """Collect the matrices of one scenario; ``er_channel`` overrides the estimate."""
    M, Nt = scenario.num_bs, scenario.antennas_per_bs
    N = M * Nt
    K = scenario.num_lr
    if config.sinr_target <= 0:
        raise ValueError("qos_rate must be positive")
    h = scenario.lr_channels
    outer = np.einsum("ki,kj->kij", h, h.conj())
    kreq = np.full(K, config.sinr_target * (1.0 + margin))
    ktol = np.full(K, config.secrecy_target * (1.0 - margin))
    G = scenario.er_estimate if er_channel is None else er_channel
    if supports is None:
        supports = tuple(np.arange(N) for _ in range(K))
    unit = default_power_unit(h, config.sinr_target) if power_unit is None else power_unit
    return ConstraintSet(channel_outer=outer, selectors=bs_selectors(M, Nt), sinr_targets=kreq,
                         secrecy_targets=ktol, an_weights=ktol.copy(), er_estimate=np.asarray(G),
                         radius=scenario.uncertainty_radius if er_channel is None else 0.0,
                         files=tuple(f for _, f in scenario.requests),
                         supports=tuple(np.asarray(s, dtype=int) for s in supports),
                         power_unit=unit, prefix=prefix)


# -- builders ------------------------------------------------------------------------

def build_sinr_constraints(cs: ConstraintSet, sigma2: float = 1.0) -> list:
    """tr(W H)/kappa - sum_other tr(W' H) - tr(V H) >= sigma2, one row per LR."""
    u = cs.power_unit
    rows = []
    for rho in range(cs.num_lr):
        H = cs.channel_outer[rho]
        blocks = {}
        for other in range(cs.num_lr):
            if cs.supports[other].size == 0:
                continue
            coef = 1.0 / cs.sinr_targets[rho] if other == rho else -1.0
            blocks[cs.w(other)] = coef * u * cs.restrict(other, H)
        blocks[cs.v] = -u * H
        rows.append(ScalarRow(f"{cs.prefix}sinr{rho}", blocks, {}, ">=", sigma2))
    return rows


def build_power_constraints(cs: ConstraintSet, p_max: float) -> list:
    """Per-BS power of all beams plus AN at most ``p_max``."""
    u = cs.power_unit
    rows = []
    for m in range(cs.num_bs):
        Lam = cs.selectors[m]
        blocks = {cs.w(rho): u * cs.restrict(rho, Lam) for rho in range(cs.num_lr)
                  if cs.bs_in_support(rho, m)}
        blocks[cs.v] = u * Lam
        rows.append(ScalarRow(f"{cs.prefix}power{m}", blocks, {}, "<=", p_max))
    return rows


def build_bigm_coupling(cs: ConstraintSet, q, p_max: float) -> list:
    """tr(Lambda_m W_rho) <= q[f, m] p_max for every LR and every BS.

    ``q`` is an (F, M) array of fixed values, or an (F, M) nested sequence of
    scalar variable names (relaxed cooperation in training). Pairs whose BS
    lies outside the LR's support are omitted: that block is identically zero.
    """
    u = cs.power_unit
    rows = []
    for rho in range(cs.num_lr):
        f = cs.files[rho]
        for m in range(cs.num_bs):
            if not cs.bs_in_support(rho, m):
                continue
            coef = {cs.w(rho): u * cs.restrict(rho, cs.selectors[m])}
            qfm = q[f][m]
            name = f"{cs.prefix}bigm{rho}_{m}"
            if isinstance(qfm, str):
                rows.append(ScalarRow(name, coef, {qfm: -p_max}, "<=", 0.0))
            else:
                rows.append(ScalarRow(name, coef, {}, "<=", float(qfm) * p_max))
    return rows


def _balance(G) -> float:
    nrm = np.linalg.norm(G, 2) if G.size else 0.0
    return 1.0 / nrm if nrm > 0 else 1.0


def build_robust_secrecy_lmi(cs: ConstraintSet, eps: float | None = None) -> list:
    """Worst-case secrecy over the estimation-error ball, one LMI per LR.

    ``U^H (W - a V) U + delta diag(I, -I/eps^2) <= diag(kappa I, 0)`` with
    ``U = [G_hat, I]``. The LMI is stated after an exact congruence with
    ``diag(I/||G_hat||, I)`` and with delta expressed in units of ``u eps^2``;
    neither changes the feasible set.
    """
    eps = cs.radius if eps is None else eps
    if not eps > 0:
        raise ValueError("robust secrecy requires a positive uncertainty radius")
    u = cs.power_unit
    Ne = cs.er_estimate.shape[1]
    N = cs.num_antennas
    d1 = _balance(cs.er_estimate)
    D = np.concatenate([np.full(Ne, d1), np.ones(N)])
    U = cs.robust_stack * D[None, :]
    out = []
    for rho in range(cs.num_lr):
        F = np.diag(np.concatenate([np.full(Ne, u * eps**2 * d1**2), np.full(N, -u)]))
        rhs = np.diag(np.concatenate([np.full(Ne, cs.secrecy_targets[rho] * d1**2), np.zeros(N)]))
        terms = [(cs.v, U, -u * cs.an_weights[rho])]
        if cs.supports[rho].size:
            terms.insert(0, (cs.w(rho), cs.restrict_rows(rho, U), u))
        out.append(MatrixIneq(f"{cs.prefix}secrecy{rho}", tuple(terms),
                              {cs.delta(rho): F}, rhs))
    return out


def build_perfect_csi_secrecy(cs: ConstraintSet, G=None) -> list:
    """G^H W G - a G^H V G <= kappa I per LR (known ER channel)."""
    G = cs.er_estimate if G is None else np.asarray(G)
    u = cs.power_unit
    d = _balance(G)
    P = G * d
    out = []
    for rho in range(cs.num_lr):
        terms = [(cs.v, P, -u * cs.an_weights[rho])]
        if cs.supports[rho].size:
            terms.insert(0, (cs.w(rho), cs.restrict_rows(rho, P), u))
        rhs = cs.secrecy_targets[rho] * d**2 * np.eye(G.shape[1])
        out.append(MatrixIneq(f"{cs.prefix}secrecy{rho}", tuple(terms), {}, rhs))
    return out


def add_constraints(builder: SdpBuilder, items) -> None:
    for item in items:
        if isinstance(item, ScalarRow):
            builder.add(item.name, item.blocks, item.scalars, item.sense, item.rhs)
        else:
            builder.add_lmi(item.name, item.terms, item.rhs, item.scalars)


def declare_variables(builder: SdpBuilder, cs: ConstraintSet, robust: bool) -> None:
    for rho in range(cs.num_lr):
        n = max(cs.supports[rho].size, 0)
        if n:
            builder.block(cs.w(rho), n)
    builder.block(cs.v, cs.num_antennas)
    if robust:
        for rho in range(cs.num_lr):
            builder.scalar(cs.delta(rho), lower=0.0)


def power_objective(cs: ConstraintSet) -> dict:
    """Total power tr(sum W + V) in solver units."""
    obj = {cs.w(rho): np.eye(cs.supports[rho].size) for rho in range(cs.num_lr)
           if cs.supports[rho].size}
    obj[cs.v] = np.eye(cs.num_antennas)
    return obj


def secrecy_rows(cs: ConstraintSet, mode: str) -> list:
    if mode == "robust":
        if cs.radius > 0:
            return build_robust_secrecy_lmi(cs)
        return build_perfect_csi_secrecy(cs)
    return build_perfect_csi_secrecy(cs)


@dataclass(frozen=True)
class R1Instance:
    problem: SdpProblem
    cset: ConstraintSet
    q: np.ndarray
    mode: str


def assemble_R1(scenario: Scenario, config: SystemConfig, q, mode: str = "robust",
                eliminate: bool = True, margin: float = TARGET_MARGIN) -> R1Instance:
    """Fixed-cooperation power minimization with relaxed rank.

    ``q`` is an (F, M) 0/1 array. With ``eliminate`` the beam block of each LR
    only spans its cooperating BSs; otherwise full blocks are kept and the
    big-M rows with ``q = 0`` force the excluded parts to zero.
    ``mode`` selects the secrecy constraint: ``robust`` (error ball around
    the estimate), ``perfect`` (true ER channel) or ``nonrobust`` (estimate
    treated as exact).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    q = np.asarray(q, dtype=float)
    if q.shape != (config.num_files, scenario.num_bs):
        raise ValueError(f"q must have shape {(config.num_files, scenario.num_bs)}")
    files = tuple(f for _, f in scenario.requests)
    supports = None
    if eliminate:
        supports = support_from_q(q, files, scenario.num_bs, scenario.antennas_per_bs)
        if any(s.size == 0 for s in supports):
            supports = None
    er = scenario.er_channel if mode == "perfect" else None
    if mode == "nonrobust":
        er = scenario.er_estimate
    cs = make_constraint_set(scenario, config, er_channel=er, supports=supports, margin=margin)
    robust = mode == "robust" and cs.radius > 0
    b = SdpBuilder()
    declare_variables(b, cs, robust)
    b.minimize(power_objective(cs))
    p_max = config.max_tx_power
    add_constraints(b, build_bigm_coupling(cs, q, p_max))
    add_constraints(b, build_power_constraints(cs, p_max))
    add_constraints(b, build_sinr_constraints(cs))
    add_constraints(b, secrecy_rows(cs, mode))
    return R1Instance(b.build(), cs, q, mode)


def expand_beam(cs: ConstraintSet, rho: int, W_reduced: np.ndarray) -> np.ndarray:
    """Embed a support-sized matrix into the full antenna space (watts)."""
    N = cs.num_antennas
    W = np.zeros((N, N), dtype=complex)
    idx = cs.supports[rho]
    if idx.size:
        W[np.ix_(idx, idx)] = W_reduced
    return W * cs.power_unit
