"""Independent numerical ground truth.

The Jacobian is obtained by central differences of delays and Dopplers
recomputed from scratch in multiprecision arithmetic, so it shares no code
with :mod:`leofim.location_transform`. Float64 differences are not good
enough here: ranges are ~1e6 m while antenna offsets are ~0.1 m, so the
orientation derivatives would lose most of their digits.
"""

from __future__ import annotations

import mpmath
import numpy as np

from .channel_fim import ChannelFim, block_labels
from .geometry import ConstellationState, ReceiverState
from .location_transform import Jacobian, location_row_labels
from .signal_model import SignalSpec

C_MP = mpmath.mpf(299792458)


def _rot(a, p, r):
    ca, sa = mpmath.cos(a), mpmath.sin(a)
    cp, sp = mpmath.cos(p), mpmath.sin(p)
    cr, sr = mpmath.cos(r), mpmath.sin(r)
    rz = [[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]]
    ry = [[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]]
    rx = [[1, 0, 0], [0, cr, -sr], [0, sr, cr]]

    def mul(A, B):
        return [[sum(A[i][t] * B[t][j] for t in range(3)) for j in range(3)] for i in range(3)]

    return mul(mul(rz, ry), rx)


def _norm(x):
    return mpmath.sqrt(sum(t * t for t in x))


def observables(x, rx: ReceiverState, cs: ConstellationState):
    """Delays (slot-major, antenna-minor) then Dopplers, per satellite.

    ``x`` is the 9-vector ``[p, Phi, v]`` as multiprecision numbers.
    """
    p, ang, v = x[0:3], x[3:6], x[6:9]
    Q = _rot(*ang)
    arms = [[sum(Q[i][j] * mpmath.mpf(float(s[j])) for j in range(3)) for i in range(3)]
            for s in rx.s_tilde]
    dt = mpmath.mpf(cs.dt)
    out = []
    for b in range(cs.n_sats):
        taus, nus = [], []
        for k in range(cs.n_slots):
            sat = [mpmath.mpf(float(t)) for t in cs.positions[b, k]]
            vb = [mpmath.mpf(float(t)) for t in cs.velocities[b, k]]
            for arm in arms:
                ant = [p[i] + k * dt * v[i] + arm[i] for i in range(3)]
                taus.append(_norm([ant[i] - sat[i] for i in range(3)]) / C_MP)
            los = [p[i] - sat[i] for i in range(3)]
            d = _norm(los)
            nus.append(sum(los[i] / d * (vb[i] - v[i]) for i in range(3)) / C_MP)
        out.append(taus + nus)
    return out


def step_size(x, eps) -> mpmath.mpf:
    return max(abs(x), 1) * mpmath.cbrt(eps)


def numeric_jacobian(rx: ReceiverState, cs: ConstellationState, dps: int = 40) -> Jacobian:
    """Central-difference Jacobian laid out like ``build_jacobian``."""
    n_b, n_k, n_u = cs.n_sats, cs.n_slots, rx.n_antennas
    per = n_k * n_u + n_k + 3
    M = np.zeros((9 + 3 * n_b, n_b * per))
    with mpmath.workdps(dps):
        eps = mpmath.mpf(10) ** (-dps)
        x0 = [mpmath.mpf(float(t)) for t in np.concatenate([rx.p, rx.phi, rx.v])]
        for i in range(9):
            h = step_size(x0[i], eps)
            xp, xm = list(x0), list(x0)
            xp[i] += h
            xm[i] -= h
            fp, fm = observables(xp, rx, cs), observables(xm, rx, cs)
            for b in range(n_b):
                for j, (a, c) in enumerate(zip(fp[b], fm[b])):
                    M[i, b * per + j] = float((a - c) / (2 * h))
    for b in range(n_b):
        for j in range(3):
            M[9 + 3 * b + j, b * per + per - 3 + j] = 1.0
    cols = []
    for b in range(n_b):
        cols += block_labels(b, n_k, n_u)
    return Jacobian(M, location_row_labels(n_b), tuple(cols))


def channel_fim_from_measurements(spec: SignalSpec, snr, f_ob, beta=1.0) -> np.ndarray:
    """One satellite's channel FIM as a sum of whitened measurement outer products.

    ``snr`` has shape (N_K, N_U), ``f_ob`` has shape (N_K,).
    """
    snr = np.asarray(snr, dtype=float)
    n_k, n_u = snr.shape
    n = n_k * n_u + n_k + 3
    i_beta, i_delta, i_eps = n - 3, n - 2, n - 1
    F = np.zeros((n, n))
    for k in range(n_k):
        om = spec.alpha1**2 + 2 * f_ob[k] * spec.alpha1 * spec.alpha2 + f_ob[k] ** 2
        for u in range(n_u):
            g = np.zeros(n)
            g[k * n_u + u], g[i_delta] = 1.0, -1.0
            F += snr[k, u] * om * np.outer(g, g)
            h = np.zeros(n)
            h[n_k * n_u + k], h[i_eps] = spec.f_c, -1.0
            F += 0.5 * snr[k, u] * spec.t2_eff * np.outer(h, h)
            F[i_beta, i_beta] += snr[k, u] / (4 * np.pi**2 * abs(beta) ** 2)
    return F


def congruence_fim(jac: Jacobian, chan: ChannelFim) -> np.ndarray:
    if jac.col_labels != chan.labels:
        raise ValueError("Jacobian columns and channel FIM labels disagree")
    M = jac.matrix
    J = M @ chan.dense() @ M.T
    return 0.5 * (J + J.T)


def schur(J: np.ndarray, keep) -> np.ndarray:
    """Plain Schur complement of ``J`` onto ``keep``."""
    keep = np.asarray(keep, dtype=int)
    drop = np.setdiff1d(np.arange(J.shape[0]), keep)
    if drop.size == 0:
        return J[np.ix_(keep, keep)].copy()
    return J[np.ix_(keep, keep)] - schur_loss(J, keep)


def schur_loss(J: np.ndarray, keep) -> np.ndarray:
    """The subtracted term ``J_kd J_dd^-1 J_dk`` alone."""
    keep = np.asarray(keep, dtype=int)
    drop = np.setdiff1d(np.arange(J.shape[0]), keep)
    if drop.size == 0:
        return np.zeros((keep.size, keep.size))
    B = J[np.ix_(keep, drop)]
    D = J[np.ix_(drop, drop)]
    try:
        X = np.linalg.solve(D, B.T)
    except np.linalg.LinAlgError as exc:
        raise ValueError("trailing block is singular") from exc
    out = B @ X
    return 0.5 * (out + out.T)


def scaled_error(A: np.ndarray, B: np.ndarray, diag=None) -> float:
    """``max |A - B|_ij / sqrt(d_i d_j)`` with ``d`` the reference diagonal.

    Scale-free for PSD matrices whose rows span many orders of magnitude.
    """
    d = np.abs(np.diag(B)) if diag is None else np.abs(np.asarray(diag))
    s = np.sqrt(np.where(d > 0, d, 1.0))
    return float(np.max(np.abs(A - B) / s[:, None] / s[None, :])) if A.size else 0.0
