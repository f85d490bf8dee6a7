"""Residual-phase statistics and achievable downlink rates for conjugate and
zero-forcing beamforming.

The rate expressions integrate all channel randomness in closed form; the only
Monte-Carlo quantity is the residual phase factor Delta = exp(j(-nu_i -
nu_pilot + theta + psi)), whose first moment (per AP) and the variance of its
activity-weighted sum enter the SINR. Statistics are accumulated per
within-frame sequence index n in [1, F*tau_c] across frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .angles import latest_pilot_index
from .errors import InvalidConfigError, StatisticsUnstableError
from .phase_noise import PhaseTrajectory


@dataclass
class CompensationState:
    """Per-AP transmit compensation theta and per-UE compensation psi.

    theta is piecewise constant, reset to the latest phase solution (plus an
    arbitrary constant common to all APs) whenever one arrives; psi is reset
    every slot from the downlink pilot (or exactly, under the genie policy).
    """
    theta: np.ndarray            # (L,)
    psi: np.ndarray              # (K,)
    policy: str = "pilot"


@dataclass(frozen=True)
class ResidualPhaseStats:
    """Per-(UE, AP, sequence-index) mean of Delta plus what the ZF variance needs.

    mean_delta[k, l, n] = E[Delta_{k,l,n}] over frames; mean_abs_sq_sum[k, n] =
    E[|sum_l w_{k,l,n} Delta_{k,l,n}|^2] with the fixed weights
    w = a * sqrt(eta * gamma) (the activity-masked beamforming gains), so
    Var[sum_l w Delta] = mean_abs_sq_sum - |sum_l w mean_delta|^2.
    `samples`, when retained, holds the per-frame weighted sums (n_frames, K, Nn).
    """
    mean_delta: np.ndarray
    mean_abs_sq_sum: np.ndarray
    n_frames: int
    samples: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RateInputs:
    activity: np.ndarray   # (L, Nn) 0/1 downlink-data mask over one frame
    eta: np.ndarray        # (K, L) downlink power coefficients
    gamma: np.ndarray      # (K, L) channel-estimate variances
    beta: np.ndarray       # (K, L) large-scale gains


def downlink_power_allocation(beta: np.ndarray) -> np.ndarray:
    """Fractional allocation eta_{k,l} = sqrt(beta_{k,l}) / sum_k' sqrt(beta_{k',l}).

    Columns (per-AP budgets) sum to one.
    """
    root = np.sqrt(beta)
    return root / root.sum(axis=0, keepdims=True)


def residual_phase(traj: PhaseTrajectory, comp: CompensationState, i: int,
                   k: int, ap: int, tau_c: int) -> complex:
    """Unit-modulus Delta_{k,l,i} = exp(j(-nu_{l,i} - nu_{l,[i]_k} + theta_l + psi_k)).

    `ap` and `k` are 1-based ids; the trajectory must cover both i and [i]_k.
    """
    nu_i = traj.value_at(i)[ap - 1]
    nu_p = traj.value_at(latest_pilot_index(i, k, tau_c))[ap - 1]
    return np.exp(1j * (-nu_i - nu_p + comp.theta[ap - 1] + comp.psi[k - 1]))


class DeltaAccumulator:
    """Streaming accumulation of Delta statistics across frames.

    weights[k, l, n] are the fixed activity-masked gains a*sqrt(eta*gamma);
    call add_frame once per frame with that frame's Delta array (K, L, Nn).
    """

    def __init__(self, weights: np.ndarray, retain_samples: bool = False):
        self.weights = weights
        k, l, nn = weights.shape
        self.sum_delta = np.zeros((k, l, nn), dtype=complex)
        self.sum_abs_sq = np.zeros((k, nn))
        self.n_frames = 0
        self._samples = [] if retain_samples else None

    def add_frame(self, delta: np.ndarray) -> None:
        self.sum_delta += delta
        weighted = np.einsum("kln,kln->kn", self.weights, delta)
        self.sum_abs_sq += np.abs(weighted) ** 2
        self.n_frames += 1
        if self._samples is not None:
            self._samples.append(weighted)

    def finalize(self, min_frames: int = 10) -> ResidualPhaseStats:
        if self.n_frames < min_frames:
            raise StatisticsUnstableError(
                f"only {self.n_frames} frames accumulated; need >= {min_frames}")
        samples = np.stack(self._samples) if self._samples is not None else None
        return ResidualPhaseStats(self.sum_delta / self.n_frames,
                                  self.sum_abs_sq / self.n_frames,
                                  self.n_frames, samples)


def perfect_delta_stats(K: int, L: int, n_seq: int, weights: np.ndarray,
                        n_frames: int = 1) -> ResidualPhaseStats:
    """Stats of a phase-noise-free system: E[Delta] = 1, zero variance."""
    mean_delta = np.ones((K, L, n_seq), dtype=complex)
    s = np.einsum("kln->kn", weights.astype(complex))
    return ResidualPhaseStats(mean_delta, np.abs(s) ** 2, n_frames)


def rate_conjugate(inputs: RateInputs, stats: ResidualPhaseStats, n: int,
                   k: int, rho_ap: float, n_antennas: int) -> float:
    """Achievable conjugate-beamforming rate [bit/s/Hz] at sequence index n (1-based)."""
    r = rates_conjugate(inputs, stats, rho_ap, n_antennas)
    return float(r[k - 1, n - 1])


def rates_conjugate(inputs: RateInputs, stats: ResidualPhaseStats,
                    rho_ap: float, n_antennas: int) -> np.ndarray:
    """Vectorized conjugate rates, shape (K, Nn)."""
    a = inputs.activity[None, :, :]                          # (1, L, Nn)
    eg = (inputs.eta * inputs.gamma)[:, :, None]             # (K, L, 1)
    mean = stats.mean_delta
    signal = np.abs(np.sum(a * np.sqrt(eg) * mean, axis=1)) ** 2
    bu = np.sum(a * eg * (1.0 - np.abs(mean) ** 2), axis=1)
    eta_tot = inputs.eta.sum(axis=0)                         # (L,)
    ui = np.sum(a * (inputs.beta * eta_tot[None, :])[:, :, None], axis=1)
    sinr = n_antennas * rho_ap * signal / (n_antennas * rho_ap * bu + rho_ap * ui + 1.0)
    return np.log2(1.0 + sinr)


def rate_zf(inputs: RateInputs, stats: ResidualPhaseStats, n: int, k: int,
            rho_ap: float, n_antennas: int, n_ues: int) -> float:
    """Achievable zero-forcing rate [bit/s/Hz] at sequence index n (1-based)."""
    r = rates_zf(inputs, stats, rho_ap, n_antennas, n_ues)
    return float(r[k - 1, n - 1])


def rates_zf(inputs: RateInputs, stats: ResidualPhaseStats, rho_ap: float,
             n_antennas: int, n_ues: int) -> np.ndarray:
    """Vectorized zero-forcing rates, shape (K, Nn)."""
    if n_antennas <= n_ues:
        raise InvalidConfigError(f"zero-forcing needs N > K (got N={n_antennas}, K={n_ues})")
    a = inputs.activity[None, :, :]
    eg = (inputs.eta * inputs.gamma)[:, :, None]
    mean_sum = np.sum(a * np.sqrt(eg) * stats.mean_delta, axis=1)   # (K, Nn)
    signal = np.abs(mean_sum) ** 2
    var_sum = np.maximum(stats.mean_abs_sq_sum - signal, 0.0)
    eta_tot = inputs.eta.sum(axis=0)
    ui = np.sum(a * ((inputs.beta - inputs.gamma) * eta_tot[None, :])[:, :, None], axis=1)
    pre = n_antennas - n_ues
    sinr = pre * rho_ap * signal / (pre * rho_ap * var_sum + rho_ap * ui + 1.0)
    return np.log2(1.0 + sinr)


def spectral_efficiency(rates: np.ndarray) -> np.ndarray:
    """Per-UE SE: the mean rate over the F*tau_c sequence indices, shape (K,)."""
    return rates.mean(axis=1)


def ue_phase_compensation(pilot_rx, policy: str, true_c: float = 0.0):
    """Per-UE compensation psi from the downlink demodulation pilot.

    genie: psi = -true_c exactly. pilot: psi = -angle(received pilot sum), the
    matched single-sample estimate (error variance ~ 1/(2 SNR_eff) at high SNR).
    """
    if policy == "genie":
        n = np.size(pilot_rx)
        return np.full(n, -true_c) if n > 1 else -true_c
    if policy == "pilot":
        return -np.angle(pilot_rx)
    raise InvalidConfigError(f"unknown compensation policy {policy!r}")
