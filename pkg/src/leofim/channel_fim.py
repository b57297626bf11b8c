"""Closed-form FIM over the channel parameters of each satellite.

Per-satellite parameter order is fixed::

    tau[k=0,u=0..N_U-1], ..., tau[k=N_K-1, ...], nu[0..N_K-1], beta, delta, eps

so the delay of antenna ``u`` at slot ``k`` sits at ``k * N_U + u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .geometry import ConstellationState, ReceiverState, snapshot
from .signal_model import SignalSpec, observed_frequency, omega

OFFSET_NAMES = ("none", "time", "frequency", "both")


@dataclass(frozen=True)
class OffsetConfig:
    """Which per-satellite offsets are unknown, plus their true values.

    ``delta`` (s) and ``eps`` (Hz) default to zero. Only ``eps`` enters the
    FIM, through the observed frequency.
    """

    time_unknown: bool = False
    freq_unknown: bool = False
    delta: float | np.ndarray = 0.0
    eps: float | np.ndarray = 0.0

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "OffsetConfig":
        if name not in OFFSET_NAMES:
            raise ValueError(f"unknown offset configuration {name!r}; pick from {OFFSET_NAMES}")
        return cls(time_unknown=name in ("time", "both"),
                   freq_unknown=name in ("frequency", "both"), **kwargs)

    @property
    def name(self) -> str:
        return {(False, False): "none", (True, False): "time",
                (False, True): "frequency", (True, True): "both"}[
            (self.time_unknown, self.freq_unknown)]

    def eps_per_sat(self, n_sats: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.eps, dtype=float), (n_sats,))


def _snr(spec: SignalSpec, snr):
    return np.asarray(spec.snr if snr is None else snr, dtype=float)


def fim_tau_tau(spec: SignalSpec, f_ob, snr=None):
    return _snr(spec, snr) * omega(spec, f_ob)


def fim_tau_delta(spec: SignalSpec, f_ob, snr=None):
    return -fim_tau_tau(spec, f_ob, snr)


def fim_nu_nu(spec: SignalSpec, snr=None):
    return 0.5 * _snr(spec, snr) * spec.f_c**2 * spec.t2_eff


def fim_nu_eps(spec: SignalSpec, snr=None):
    return -0.5 * _snr(spec, snr) * spec.f_c * spec.t2_eff


def fim_eps_eps(spec: SignalSpec, snr=None):
    return 0.5 * _snr(spec, snr) * spec.t2_eff


def fim_beta_beta(spec: SignalSpec, beta, snr=None):
    mag2 = np.abs(np.asarray(beta)) ** 2
    if np.any(mag2 == 0):
        raise ValueError("channel gain must be nonzero")
    return _snr(spec, snr) / (4.0 * np.pi**2 * mag2)


def block_labels(b: int, n_slots: int, n_antennas: int) -> list[str]:
    labels = [f"tau[{b},{k},{u}]" for k in range(n_slots) for u in range(n_antennas)]
    labels += [f"nu[{b},{k}]" for k in range(n_slots)]
    return labels + [f"beta[{b}]", f"delta[{b}]", f"eps[{b}]"]


@dataclass(frozen=True)
class ChannelFim:
    """Per-satellite channel FIM blocks and their parameter labels."""

    blocks: tuple
    labels: tuple

    @property
    def block_size(self) -> int:
        return self.blocks[0].shape[0]

    def dense(self) -> np.ndarray:
        return block_diag(*self.blocks)

    def index(self, label: str) -> int:
        return self.labels.index(label)


def satellite_block(spec: SignalSpec, snr_bku, f_ob_bk, beta: complex = 1.0) -> np.ndarray:
    """Channel FIM of one satellite from its (N_K, N_U) SNRs and N_K observed frequencies."""
    snr_bku = np.asarray(snr_bku, dtype=float)
    n_k, n_u = snr_bku.shape
    n_tau = n_k * n_u
    n = n_tau + n_k + 3
    i_beta, i_delta, i_eps = n - 3, n - 2, n - 1
    F = np.zeros((n, n))

    tt = fim_tau_tau(spec, np.asarray(f_ob_bk)[:, None], snr_bku).ravel()
    idx = np.arange(n_tau)
    F[idx, idx] = tt
    F[idx, i_delta] = F[i_delta, idx] = -tt
    F[i_delta, i_delta] = tt.sum()

    snr_k = snr_bku.sum(axis=1)
    jdx = n_tau + np.arange(n_k)
    F[jdx, jdx] = fim_nu_nu(spec, snr_k)
    F[jdx, i_eps] = F[i_eps, jdx] = fim_nu_eps(spec, snr_k)
    F[i_eps, i_eps] = fim_eps_eps(spec, snr_k.sum())

    F[i_beta, i_beta] = fim_beta_beta(spec, beta, snr_bku.sum())
    return F


def assemble_channel_fim(rx: ReceiverState, cs: ConstellationState, spec: SignalSpec,
                         offsets: OffsetConfig | None = None, beta=1.0) -> ChannelFim:
    offsets = offsets or OffsetConfig()
    snap = snapshot(rx, cs)
    n_b, n_k, n_u = cs.n_sats, cs.n_slots, rx.n_antennas
    snr = spec.snr_grid(n_b, n_k, n_u)
    eps = offsets.eps_per_sat(n_b)
    betas = np.broadcast_to(np.asarray(beta), (n_b,))
    blocks, labels = [], []
    for b in range(n_b):
        f_ob = observed_frequency(spec, snap.nu[b], eps[b])
        blocks.append(satellite_block(spec, snr[b], f_ob, betas[b]))
        labels += block_labels(b, n_k, n_u)
    return ChannelFim(tuple(blocks), tuple(labels))
