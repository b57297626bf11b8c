"""Derivatives of channel parameters with respect to location parameters.

Location order is ``[p_U(3), Phi_U(3), v_U(3)]`` followed by
``beta_b, delta_b, eps_b`` for every satellite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_fim import block_labels
from .geometry import C, ConstellationState, GeometrySnapshot, ReceiverState, rotation_derivatives, snapshot

LOCATION_LABELS = ("p_x", "p_y", "p_z", "alpha", "psi", "phi", "v_x", "v_y", "v_z")
BLOCKS = {"p": slice(0, 3), "phi": slice(3, 6), "v": slice(6, 9)}


def dtau_dp(snap: GeometrySnapshot, b: int, u: int, k: int) -> np.ndarray:
    return snap.delta[b, k, u] / C


def dnu_dp(snap: GeometrySnapshot, b: int, k: int) -> np.ndarray:
    w = snap.rel_velocity[b, k]
    los = snap.delta_bU[b, k]
    return (w - (los @ w) * los) / (C * snap.d_bU[b, k])


def dtau_dphi(snap: GeometrySnapshot, rx: ReceiverState, b: int, u: int, k: int) -> np.ndarray:
    dq = rotation_derivatives(rx.phi)
    return np.einsum("i,jil,l->j", snap.delta[b, k, u], dq, rx.s_tilde[u]) / C


def dtau_dv(snap: GeometrySnapshot, b: int, u: int, k: int, dt: float) -> np.ndarray:
    return k * dt * snap.delta[b, k, u] / C


def dnu_dv(snap: GeometrySnapshot, b: int, k: int) -> np.ndarray:
    return -snap.delta_bU[b, k] / C


def location_gradients(rx: ReceiverState, cs: ConstellationState, snap: GeometrySnapshot | None = None):
    """All gradients at once.

    Returns ``(g_tau, g_nu)`` of shapes ``(N_B, N_K, N_U, 9)`` and
    ``(N_B, N_K, 9)``.
    """
    snap = snapshot(rx, cs) if snap is None else snap
    k = np.arange(cs.n_slots, dtype=float)
    g_tau = np.empty(snap.delta.shape[:3] + (9,))
    g_tau[..., 0:3] = snap.delta / C
    arms = np.einsum("jil,ul->jui", rotation_derivatives(rx.phi), rx.s_tilde)  # (3, N_U, 3)
    g_tau[..., 3:6] = np.einsum("bkui,jui->bkuj", snap.delta, arms) / C
    g_tau[..., 6:9] = (k * cs.dt)[None, :, None, None] * snap.delta / C

    w = snap.rel_velocity
    los = snap.delta_bU
    radial = np.einsum("bki,bki->bk", los, w)
    g_nu = np.zeros(snap.delta_bU.shape[:2] + (9,))
    g_nu[..., 0:3] = (w - radial[..., None] * los) / (C * snap.d_bU[..., None])
    g_nu[..., 6:9] = -los / C
    return g_tau, g_nu


@dataclass(frozen=True)
class Jacobian:
    """Transformation matrix with location rows and channel columns."""

    matrix: np.ndarray
    row_labels: tuple
    col_labels: tuple


def location_row_labels(n_sats: int) -> tuple:
    rows = list(LOCATION_LABELS)
    for b in range(n_sats):
        rows += [f"beta[{b}]", f"delta[{b}]", f"eps[{b}]"]
    return tuple(rows)


def assemble_jacobian(g_tau: np.ndarray, g_nu: np.ndarray) -> Jacobian:
    """Place per-link gradients into the full transformation matrix."""
    n_b, n_k, n_u, _ = g_tau.shape
    per = n_k * n_u + n_k + 3
    M = np.zeros((9 + 3 * n_b, n_b * per))
    cols = []
    for b in range(n_b):
        c0 = b * per
        M[:9, c0:c0 + n_k * n_u] = g_tau[b].reshape(n_k * n_u, 9).T
        M[:9, c0 + n_k * n_u:c0 + n_k * n_u + n_k] = g_nu[b].T
        for j in range(3):
            M[9 + 3 * b + j, c0 + per - 3 + j] = 1.0
        cols += block_labels(b, n_k, n_u)
    return Jacobian(M, location_row_labels(n_b), tuple(cols))


def build_jacobian(rx: ReceiverState, cs: ConstellationState) -> Jacobian:
    if rx.n_antennas < 1 or cs.n_sats < 1 or cs.n_slots < 1:
        raise ValueError("empty scenario")
    return assemble_jacobian(*location_gradients(rx, cs))
