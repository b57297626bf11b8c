"""Scalar signal descriptors feeding every FIM entry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from ._validation import check_positive


@dataclass(frozen=True)
class SignalSpec:
    """Carrier, spectral shape, SNR and slot timing.

    ``snr`` is linear and either a scalar (no beam split, same SNR on every
    link) or an array broadcastable to ``(N_B, N_K, N_U)``. ``t2_eff`` is
    the energy weighted second moment of time within a slot and defaults to
    ``T**2 / 3``, the value for uniform energy on ``[0, T]``.
    """

    f_c: float
    alpha1: float = 0.0
    alpha2: float = 0.0
    snr: float | np.ndarray = 1.0
    T: float = 1e-3
    t2_eff: float | None = None
    n0: float | None = None

    def __post_init__(self):
        check_positive(self.f_c, "f_c")
        check_positive(self.alpha1, "alpha1", strict=False)
        if not -1.0 <= float(self.alpha2) <= 1.0:
            raise ValueError("alpha2 must lie in [-1, 1]")
        snr = np.asarray(self.snr, dtype=float)
        if np.any(~np.isfinite(snr)) or np.any(snr < 0):
            raise ValueError("snr must be finite and >= 0")
        check_positive(self.T, "T")
        if self.t2_eff is None:
            object.__setattr__(self, "t2_eff", self.T**2 / 3.0)
        check_positive(self.t2_eff, "t2_eff", strict=False)

    @classmethod
    def from_db(cls, snr_db: float, **kwargs) -> "SignalSpec":
        return cls(snr=10.0 ** (np.asarray(snr_db, dtype=float) / 10.0), **kwargs)

    def snr_grid(self, n_sats: int, n_slots: int, n_antennas: int) -> np.ndarray:
        shape = (n_sats, n_slots, n_antennas)
        try:
            return np.broadcast_to(np.asarray(self.snr, dtype=float), shape)
        except ValueError as exc:
            raise ValueError(f"snr cannot broadcast to {shape}") from exc

    def scaled(self, s: float) -> "SignalSpec":
        """Same spec with every SNR multiplied by ``s``."""
        return SignalSpec(self.f_c, self.alpha1, self.alpha2, np.asarray(self.snr) * s,
                          self.T, self.t2_eff, self.n0)


def bandwidth_from_psd(freqs, psd) -> tuple[float, float]:
    """Effective bandwidth and baseband-carrier correlation of a sampled density.

    ``psd`` holds ``|S(f)|^2`` on the grid ``freqs``.
    """
    f = np.asarray(freqs, dtype=float)
    p = np.asarray(psd, dtype=float)
    if f.shape != p.shape or f.ndim != 1:
        raise ValueError("freqs and psd must be 1-D arrays of equal length")
    if np.any(p < 0):
        raise ValueError("psd must be nonnegative")
    e0 = trapezoid(p, f)
    if not e0 > 0:
        raise ValueError("psd has zero energy")
    e1 = trapezoid(f * p, f)
    e2 = trapezoid(f * f * p, f)
    alpha1 = np.sqrt(e2 / e0)
    alpha2 = e1 / (np.sqrt(e2) * np.sqrt(e0)) if e2 > 0 else 0.0
    return float(alpha1), float(alpha2)


def observed_frequency(spec: SignalSpec, nu, eps=0.0):
    return spec.f_c * (1.0 - np.asarray(nu)) + np.asarray(eps)


def omega(spec: SignalSpec, f_ob):
    f_ob = np.asarray(f_ob, dtype=float)
    return spec.alpha1**2 + 2.0 * f_ob * spec.alpha1 * spec.alpha2 + f_ob**2
