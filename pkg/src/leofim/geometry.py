"""Receiver and constellation geometry.

Slots and antennas are indexed from zero: slot ``k`` here is the
``(k + 1)``-th transmission, so the propagation factor is simply ``k * dt``.

Conventions
-----------
* ``Q = Rz(alpha) @ Ry(psi) @ Rx(phi)`` (yaw, pitch, roll).
* Direction vectors point from the satellite to the receiver side.
* Doppler ``nu`` is dimensionless: the radial rate divided by ``c``.
* The Doppler line of sight runs from the satellite at slot ``k`` to the
  reference centroid ``p_U``. This keeps ``d nu / d v_U = -Delta_bU / c``
  exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_points, as_vector3, check_index, check_positive, freeze

C = 299_792_458.0


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def rotation_matrix(phi) -> np.ndarray:
    """Rotation for angles ``(alpha, psi, phi)`` as ``Rz @ Ry @ Rx``."""
    alpha, psi, roll = as_vector3(phi, "Phi_U")
    return _rz(alpha) @ _ry(psi) @ _rx(roll)


def rotation_derivatives(phi) -> np.ndarray:
    """Stack of ``dQ/dalpha, dQ/dpsi, dQ/dphi``, shape (3, 3, 3)."""
    alpha, psi, roll = as_vector3(phi, "Phi_U")
    rz, ry, rx = _rz(alpha), _ry(psi), _rx(roll)
    return np.stack([
        _drz(alpha) @ ry @ rx,
        rz @ _dry(psi) @ rx,
        rz @ ry @ _drx(roll),
    ])


@dataclass(frozen=True)
class ReceiverState:
    """Unknown receiver state: centroid, orientation, velocity and array."""

    p: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    s_tilde: np.ndarray

    def __post_init__(self):
        phi = as_vector3(self.phi, "Phi_U")
        if np.any(phi <= -np.pi) or np.any(phi > np.pi):
            raise ValueError("orientation angles must lie in (-pi, pi]")
        object.__setattr__(self, "p", freeze(as_vector3(self.p, "p_U")))
        object.__setattr__(self, "phi", freeze(phi))
        object.__setattr__(self, "v", freeze(as_vector3(self.v, "v_U")))
        object.__setattr__(self, "s_tilde", freeze(as_points(self.s_tilde, "s_tilde")))

    @property
    def n_antennas(self) -> int:
        return self.s_tilde.shape[0]


@dataclass(frozen=True)
class ConstellationState:
    """Satellite anchors sampled at every slot.

    ``positions`` and ``velocities`` have shape ``(N_B, N_K, 3)``. Use
    :meth:`linear` for the constant-velocity case.
    """

    positions: np.ndarray
    velocities: np.ndarray
    dt: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3 or min(pos.shape[:2]) < 1:
            raise ValueError(f"positions must have shape (N_B, N_K, 3), got {pos.shape}")
        if vel.shape != pos.shape:
            raise ValueError("velocities must match positions in shape")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("satellite states must be finite")
        object.__setattr__(self, "positions", freeze(pos))
        object.__setattr__(self, "velocities", freeze(vel))
        object.__setattr__(self, "dt", check_positive(self.dt, "dt"))

    @classmethod
    def linear(cls, p_ref, v, n_slots: int, dt: float) -> "ConstellationState":
        """Straight-line tracks ``p_ref + k * dt * v``."""
        p_ref = as_points(p_ref, "p_ref")
        v = as_points(v, "v_b")
        if v.shape != p_ref.shape:
            raise ValueError("one velocity per satellite is required")
        if int(n_slots) < 1:
            raise ValueError("n_slots must be >= 1")
        dt = check_positive(dt, "dt")
        k = np.arange(int(n_slots), dtype=float)
        pos = p_ref[:, None, :] + k[None, :, None] * dt * v[:, None, :]
        vel = np.repeat(v[:, None, :], int(n_slots), axis=1)
        return cls(pos, vel, dt)

    @property
    def n_sats(self) -> int:
        return self.positions.shape[0]

    @property
    def n_slots(self) -> int:
        return self.positions.shape[1]


def antenna_position(rx: ReceiverState, u: int, k: int, dt: float) -> np.ndarray:
    u = check_index(u, rx.n_antennas, "u")
    if k < 0:
        raise IndexError("slot index must be >= 0")
    return rx.p + k * dt * rx.v + rotation_matrix(rx.phi) @ rx.s_tilde[u]


def satellite_position(cs: ConstellationState, b: int, k: int) -> np.ndarray:
    b = check_index(b, cs.n_sats, "b")
    k = check_index(k, cs.n_slots, "k")
    return cs.positions[b, k].copy()


@dataclass(frozen=True)
class GeometrySnapshot:
    """Ranges, directions, delays and Dopplers for every (b, k, u).

    Per-antenna arrays have shape ``(N_B, N_K, N_U)`` (plus a trailing 3 for
    vectors); per-centroid arrays have shape ``(N_B, N_K)``.
    """

    antenna_positions: np.ndarray
    d: np.ndarray
    delta: np.ndarray
    d_bU: np.ndarray
    delta_bU: np.ndarray
    tau: np.ndarray
    nu: np.ndarray
    rel_velocity: np.ndarray = field(repr=False)


def snapshot(rx: ReceiverState, cs: ConstellationState) -> GeometrySnapshot:
    k = np.arange(cs.n_slots, dtype=float)
    arm = rotation_matrix(rx.phi) @ rx.s_tilde.T  # (3, N_U)
    ant = rx.p[None, None, :] + (k * cs.dt)[:, None, None] * rx.v + arm.T[None, :, :]
    diff = ant[None, :, :, :] - cs.positions[:, :, None, :]
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d == 0):
        raise ValueError("degenerate geometry: an antenna coincides with a satellite")
    diff_c = rx.p[None, None, :] - cs.positions
    d_bU = np.linalg.norm(diff_c, axis=-1)
    if np.any(d_bU == 0):
        raise ValueError("degenerate geometry: the centroid coincides with a satellite")
    delta_bU = diff_c / d_bU[..., None]
    rel = cs.velocities - rx.v
    nu = np.einsum("bki,bki->bk", delta_bU, rel) / C
    return GeometrySnapshot(
        antenna_positions=freeze(ant),
        d=freeze(d),
        delta=freeze(diff / d[..., None]),
        d_bU=freeze(d_bU),
        delta_bU=freeze(delta_bU),
        tau=freeze(d / C),
        nu=freeze(nu),
        rel_velocity=freeze(rel),
    )
