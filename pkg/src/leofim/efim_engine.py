"""Location FIM blocks, nuisance losses and effective FIMs.

The closed-form blocks follow the per-link sums directly. Inversions and
Schur complements run on equilibrated matrices because position rows scale
like ``1/c**2`` while orientation rows scale like ``1``.

Identifiability (the ``feasible`` flags) is decided on the whitened
Jacobian ``A`` with ``A.T @ A`` equal to the location FIM including offsets.
Projecting nuisance columns out of ``A`` avoids the catastrophic
cancellation that ``F - G`` suffers when the surviving information is a
tiny fraction of the raw delay information, as with array-only angles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .channel_fim import OffsetConfig
from .geometry import C, ConstellationState, ReceiverState, snapshot
from .location_transform import BLOCKS, location_gradients
from .signal_model import SignalSpec, observed_frequency, omega

PARAMS = ("p", "phi", "v")
PARAM_NAMES = {"p": "position", "phi": "orientation", "v": "velocity"}

# sigma_min of the column-equilibrated residual below this is treated as zero;
# rounding noise sits near 1e-16 and second-order wavefront terms near (s/d)**2.
RANK_TOL = 1e-10
# nuisance directions kept when building the projector
NUISANCE_TOL = 1e-13
# eigenvalue test on closed-form matrices, relative to max(lambda_max, 1)
PD_TOL = 1e-9


class SingularNuisanceError(ValueError):
    """An unknown offset carries no information at all."""


@dataclass(frozen=True)
class Scenario:
    rx: ReceiverState
    cs: ConstellationState
    spec: SignalSpec
    offsets: OffsetConfig = field(default_factory=OffsetConfig)

    @cached_property
    def snap(self):
        return snapshot(self.rx, self.cs)

    @cached_property
    def gradients(self):
        return location_gradients(self.rx, self.cs, self.snap)

    @cached_property
    def snr(self) -> np.ndarray:
        return self.spec.snr_grid(self.cs.n_sats, self.cs.n_slots, self.rx.n_antennas)

    @cached_property
    def omega(self) -> np.ndarray:
        eps = self.offsets.eps_per_sat(self.cs.n_sats)[:, None]
        return omega(self.spec, observed_frequency(self.spec, self.snap.nu, eps))

    @cached_property
    def w_tau(self) -> np.ndarray:
        """SNR * omega per (b, k, u)."""
        return self.snr * self.omega[..., None]

    @cached_property
    def w_nu(self) -> np.ndarray:
        """Doppler weight 0.5 * SNR * f_c**2 * t2 summed over antennas, per (b, k)."""
        return 0.5 * self.spec.f_c**2 * self.spec.t2_eff * self.snr.sum(axis=2)

    def with_offsets(self, offsets: OffsetConfig) -> "Scenario":
        return Scenario(self.rx, self.cs, self.spec, offsets)


def _ks(scn: Scenario) -> np.ndarray:
    return np.arange(scn.cs.n_slots, dtype=float) * scn.cs.dt


def _outer_sum(w, a, b):
    w = np.broadcast_to(w, a.shape[:-1]).ravel()
    return np.einsum("n,ni,nj->ij", w, a.reshape(-1, 3), b.reshape(-1, 3))


# FIM blocks -----------------------------------------------------------------

def fim_pp(scn: Scenario) -> np.ndarray:
    s, g_nu = scn.snap, scn.gradients[1]
    return (_outer_sum(scn.w_tau / C**2, s.delta, s.delta)
            + _outer_sum(scn.w_nu, g_nu[..., 0:3], g_nu[..., 0:3]))


def fim_pphi(scn: Scenario) -> np.ndarray:
    g_phi = scn.gradients[0][..., 3:6]
    return _outer_sum(scn.w_tau / C, scn.snap.delta, g_phi)


def fim_pv(scn: Scenario) -> np.ndarray:
    s, g_nu = scn.snap, scn.gradients[1]
    w = scn.w_tau * _ks(scn)[None, :, None] / C**2
    return _outer_sum(w, s.delta, s.delta) - _outer_sum(scn.w_nu / C, g_nu[..., 0:3], s.delta_bU)


def fim_phiphi(scn: Scenario) -> np.ndarray:
    g_phi = scn.gradients[0][..., 3:6]
    return _outer_sum(scn.w_tau, g_phi, g_phi)


def fim_phiv(scn: Scenario) -> np.ndarray:
    g_phi = scn.gradients[0][..., 3:6]
    w = scn.w_tau * _ks(scn)[None, :, None] / C
    return _outer_sum(w, g_phi, scn.snap.delta)


def fim_vv(scn: Scenario) -> np.ndarray:
    s = scn.snap
    w = scn.w_tau * (_ks(scn) ** 2)[None, :, None] / C**2
    return _outer_sum(w, s.delta, s.delta) + _outer_sum(scn.w_nu / C**2, s.delta_bU, s.delta_bU)


def location_fim(scn: Scenario) -> np.ndarray:
    """9x9 FIM over [p, Phi, v] with every offset known."""
    pp, pf, pv = fim_pp(scn), fim_pphi(scn), fim_pv(scn)
    ff, fv, vv = fim_phiphi(scn), fim_phiv(scn), fim_vv(scn)
    return np.block([[pp, pf, pv], [pf.T, ff, fv], [pv.T, fv.T, vv]])


# offset losses --------------------------------------------------------------

def _loss_vectors(scn: Scenario):
    """Per-satellite (vector, denominator) pairs for each unknown offset."""
    g_tau, g_nu = scn.gradients
    out = []
    if scn.offsets.time_unknown:
        a = np.einsum("bku,bkui->bi", scn.w_tau, g_tau)
        s = scn.w_tau.sum(axis=(1, 2))
        out.append(("time", a, s))
    if scn.offsets.freq_unknown:
        half_t2 = 0.5 * scn.spec.t2_eff * scn.snr.sum(axis=2)  # (b, k)
        e = np.einsum("bk,bki->bi", half_t2 * scn.spec.f_c, g_nu)
        s = half_t2.sum(axis=1)
        out.append(("frequency", e, s))
    return out


def loss_matrix(scn: Scenario) -> np.ndarray:
    """9x9 information loss caused by the unknown offsets."""
    G = np.zeros((9, 9))
    for kind, vecs, dens in _loss_vectors(scn):
        if np.any(dens <= 0):
            raise SingularNuisanceError(f"{kind} offset has zero information on some satellite")
        G += np.einsum("bi,bj,b->ij", vecs, vecs, 1.0 / dens)
    return G


def _loss_block(a: str, b: str):
    def fn(scn: Scenario) -> np.ndarray:
        return loss_matrix(scn)[BLOCKS[a], BLOCKS[b]]
    fn.__name__ = f"loss_{a}{b}"
    fn.__doc__ = f"Loss block for ({PARAM_NAMES[a]}, {PARAM_NAMES[b]})."
    return fn


loss_pp = _loss_block("p", "p")
loss_pphi = _loss_block("p", "phi")
loss_pv = _loss_block("p", "v")
loss_phiphi = _loss_block("phi", "phi")
loss_phiv = _loss_block("phi", "v")
loss_vv = _loss_block("v", "v")


def efim_kappa1(scn: Scenario) -> np.ndarray:
    J = location_fim(scn) - loss_matrix(scn)
    return 0.5 * (J + J.T)


# numerics -------------------------------------------------------------------

def equilibrate(J: np.ndarray):
    """Return ``(D J D, d)`` with ``D = diag(d)`` scaling the diagonal to one."""
    diag = np.diag(J).copy()
    d = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    Js = J * d[:, None] * d[None, :]
    return 0.5 * (Js + Js.T), d


def is_pd(J: np.ndarray, tol: float = PD_TOL) -> bool:
    if J.size == 0:
        return False
    Js, _ = equilibrate(J)
    lam = np.linalg.eigvalsh(Js)
    return bool(lam[0] > tol * max(lam[-1], 1.0))


def schur(J: np.ndarray, keep, drop=None) -> np.ndarray:
    """``J_kk - J_kd J_dd^-1 J_dk`` computed on the equilibrated matrix."""
    keep = np.asarray(keep, dtype=int)
    if drop is None:
        drop = np.setdiff1d(np.arange(J.shape[0]), keep)
    drop = np.asarray(drop, dtype=int)
    Js, d = equilibrate(J)
    A = Js[np.ix_(keep, keep)]
    if drop.size:
        B = Js[np.ix_(keep, drop)]
        D = Js[np.ix_(drop, drop)]
        A = A - B @ sla.solve(D, B.T, assume_a="pos")
    dk = d[keep]
    out = A / dk[:, None] / dk[None, :]
    return 0.5 * (out + out.T)


def inv_pd(J: np.ndarray) -> np.ndarray:
    Js, d = equilibrate(J)
    inv = sla.solve(Js, np.eye(J.shape[0]), assume_a="pos")
    out = inv * d[:, None] * d[None, :]
    return 0.5 * (out + out.T)


# square-root form -----------------------------------------------------------

def whitened_jacobian(scn: Scenario) -> tuple[np.ndarray, list[str]]:
    """Rows are whitened pseudo-measurements; ``A.T @ A`` is the location FIM.

    Columns are ``[p, Phi, v, delta_0.., eps_0..]``. Gains are dropped since
    they decouple from everything else.
    """
    g_tau, g_nu = scn.gradients
    n_b, n_k, n_u = scn.snr.shape
    n = 9 + 2 * n_b
    rows_t = np.zeros((n_b, n_k, n_u, n))
    rows_t[..., :9] = g_tau
    rows_t[np.arange(n_b), :, :, 9 + np.arange(n_b)] = -1.0
    rows_t *= np.sqrt(scn.w_tau)[..., None]
    half_t2 = 0.5 * scn.spec.t2_eff * scn.snr.sum(axis=2)
    rows_n = np.zeros((n_b, n_k, n))
    rows_n[..., :9] = scn.spec.f_c * g_nu
    rows_n[np.arange(n_b), :, 9 + n_b + np.arange(n_b)] = -1.0
    rows_n *= np.sqrt(half_t2)[..., None]
    A = np.vstack([rows_t.reshape(-1, n), rows_n.reshape(-1, n)])
    labels = ["p_x", "p_y", "p_z", "alpha", "psi", "phi", "v_x", "v_y", "v_z"]
    labels += [f"delta[{b}]" for b in range(n_b)] + [f"eps[{b}]" for b in range(n_b)]
    return A, labels


def param_columns(params) -> list[int]:
    cols = []
    for p in params:
        cols.extend(range(BLOCKS[p].start, BLOCKS[p].stop))
    return cols


def offset_columns(scn: Scenario) -> list[int]:
    n_b = scn.cs.n_sats
    cols = []
    if scn.offsets.time_unknown:
        cols.extend(range(9, 9 + n_b))
    if scn.offsets.freq_unknown:
        cols.extend(range(9 + n_b, 9 + 2 * n_b))
    return cols


def _residual(scn: Scenario, interest, nuisance):
    """Interest columns with every nuisance direction projected out.

    Columns are first scaled to unit norm; the scale factors of the interest
    columns are returned alongside. Rank-deficient nuisance sets are fine:
    only directions above ``NUISANCE_TOL`` are removed.
    """
    A, _ = whitened_jacobian(scn)
    norms = np.linalg.norm(A, axis=0)
    I = param_columns(interest)
    N = [c for c in param_columns(nuisance) + offset_columns(scn) if norms[c] > 0]
    norms = np.where(norms > 0, norms, 1.0)
    As = A / norms
    R = As[:, I]
    if N:
        U, sv, _ = np.linalg.svd(As[:, N], full_matrices=False)
        U = U[:, sv > NUISANCE_TOL * max(sv[0], 1.0)]
        R = R - U @ (U.T @ R)
    return R, norms[I]


def estimability_margin(scn: Scenario, interest, nuisance) -> float:
    """Smallest singular value of the equilibrated residual of ``interest``.

    ``interest`` and ``nuisance`` are parameter-block names; unknown offsets
    are always treated as nuisance. The residual is what remains of the
    interest columns after projecting out every nuisance column, with all
    columns first scaled to unit norm in the raw Jacobian.
    """
    A, _ = whitened_jacobian(scn)
    if np.any(np.linalg.norm(A[:, param_columns(interest)], axis=0) == 0):
        return 0.0
    R, _ = _residual(scn, interest, nuisance)
    if R.shape[0] < R.shape[1]:
        return 0.0  # fewer measurements than unknowns
    return float(np.linalg.svd(R, compute_uv=False)[-1])


def is_estimable(scn: Scenario, interest, nuisance=(), tol: float = RANK_TOL) -> bool:
    return estimability_margin(scn, interest, nuisance) > tol


def sqrt_efim(scn: Scenario, interest, nuisance=()) -> np.ndarray:
    """EFIM of ``interest`` from the projected whitened Jacobian.

    Equals the Schur complement when the nuisance block is invertible and
    its pseudo-inverse form otherwise.
    """
    R, norms = _residual(scn, interest, nuisance)
    r = np.linalg.qr(R, mode="r")
    out = (r.T @ r) * norms[:, None] * norms[None, :]
    return 0.5 * (out + out.T)


# effective FIMs -------------------------------------------------------------

@dataclass(frozen=True)
class Efim:
    """Effective FIM of one parameter block (or a joint pair)."""

    params: tuple
    matrix: np.ndarray | None
    feasible: bool
    margin: float
    eigenvalues: np.ndarray | None = None
    reasons: tuple = ()


def _eigs(M):
    if M is None:
        return None
    return np.linalg.eigvalsh(equilibrate(M)[0])


def _check(params):
    for p in params:
        if p not in PARAMS:
            raise ValueError(f"unknown parameter block {p!r}; pick from {PARAMS}")


def efim_3d(which: str, scn: Scenario) -> Efim:
    """EFIM of one block when the other two are known."""
    _check([which])
    J = efim_kappa1(scn)
    M = J[BLOCKS[which], BLOCKS[which]]
    margin = estimability_margin(scn, [which], [])
    feasible = margin > RANK_TOL
    reasons = () if feasible else (f"{PARAM_NAMES[which]} EFIM singular",)
    return Efim((which,), M, feasible, margin, _eigs(M), reasons)


def efim_6d(pair, scn: Scenario) -> dict[str, Efim]:
    """EFIMs for a pair of unknown blocks with the third block known.

    Returns entries for each member (the other treated as nuisance) and
    ``"joint"`` for the 6x6 matrix.
    """
    a, b = pair
    _check(pair)
    if a == b:
        raise ValueError("pair must name two different blocks")
    J = efim_kappa1(scn)
    idx = param_columns([a, b])
    Jab = J[np.ix_(idx, idx)]
    out = {}
    inner_ok = {x: is_estimable(scn, [x], []) for x in (a, b)}
    for x, y in ((a, b), (b, a)):
        margin = estimability_margin(scn, [x], [y])
        feasible = margin > RANK_TOL
        reasons = []
        if not inner_ok[y]:
            reasons.append(f"inner {PARAM_NAMES[y]} EFIM singular")
        if not inner_ok[x]:
            reasons.append(f"{PARAM_NAMES[x]} EFIM singular with {PARAM_NAMES[y]} known")
        if not feasible:
            reasons.append(f"{PARAM_NAMES[x]} Schur complement singular")
        M = None
        if inner_ok[y]:
            keep = list(range(3)) if x == a else list(range(3, 6))
            try:
                M = schur(Jab, keep)
            except np.linalg.LinAlgError:
                M = None  # inner block lost definiteness in round-off
        out[x] = Efim((x,), M, feasible, margin, _eigs(M), tuple(reasons) if not feasible else ())
    margin = estimability_margin(scn, [a, b], [])
    feasible = margin > RANK_TOL
    out["joint"] = Efim((a, b), Jab, feasible, margin, _eigs(Jab),
                        () if feasible else ("joint EFIM singular",))
    return out


# target -> (inner block Y, block Z whose Schur complement S is inverted)
NINE_D_ORDER = {"p": ("phi", "v"), "v": ("p", "phi"), "phi": ("p", "v")}


def nuisance_loss_9d(J: np.ndarray, which: str) -> np.ndarray:
    """Five-term loss of ``which`` due to the other two unknown blocks.

    ``J`` is the 9x9 offset-reduced EFIM. Works on the equilibrated matrix
    and returns the loss in original units.
    """
    y, z = NINE_D_ORDER[which]
    Js, d = equilibrate(J)
    X, Y, Z = BLOCKS[which], BLOCKS[y], BLOCKS[z]
    J_xy, J_xz = Js[X, Y], Js[X, Z]
    J_y, J_yz, J_z = Js[Y, Y], Js[Y, Z], Js[Z, Z]
    Jy_inv = sla.solve(J_y, np.eye(3), assume_a="pos")
    S = J_z - J_yz.T @ Jy_inv @ J_yz
    S_inv = sla.solve(S, np.eye(3), assume_a="pos")
    P = J_xy @ Jy_inv  # recurring product
    nu = (P @ J_xy.T
          + P @ J_yz @ S_inv @ J_yz.T @ P.T
          - P @ J_yz @ S_inv @ J_xz.T
          - J_xz @ S_inv @ J_yz.T @ P.T
          + J_xz @ S_inv @ J_xz.T)
    dx = d[X]
    nu = nu / dx[:, None] / dx[None, :]
    return 0.5 * (nu + nu.T)


def efim_9d(which: str, scn: Scenario) -> Efim:
    """EFIM of one block with the other two unknown.

    ``matrix`` is None when the closed form cannot be evaluated; use
    ``sqrt_efim`` for a bound on such scenarios.
    """
    _check([which])
    y, z = NINE_D_ORDER[which]
    others = [p for p in PARAMS if p != which]
    inner_ok = is_estimable(scn, [y], [])
    s_ok = is_estimable(scn, [z], [y])
    margin = estimability_margin(scn, [which], others)
    feasible = margin > RANK_TOL
    reasons = []
    if not feasible:
        if not inner_ok:
            reasons.append(f"{PARAM_NAMES[which]} target: inner {PARAM_NAMES[y]} block singular")
        if not s_ok:
            reasons.append(f"{PARAM_NAMES[which]} target: S not invertible")
        reasons.append(f"{PARAM_NAMES[which]} EFIM singular")
    M = None
    if inner_ok and s_ok:
        J = efim_kappa1(scn)
        try:
            M = J[BLOCKS[which], BLOCKS[which]] - nuisance_loss_9d(J, which)
            M = 0.5 * (M + M.T)
        except np.linalg.LinAlgError:
            # rank test passed but the formed blocks lost definiteness in round-off
            M = None
    return Efim((which,), M, feasible, margin, _eigs(M), tuple(reasons))
