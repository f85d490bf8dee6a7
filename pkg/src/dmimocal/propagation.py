"""Node placement, large-scale fading with correlated shadowing, channel draws,
and LMMSE uplink channel estimation.

Large-scale model: beta[dB] = -30.5 - 36.7*log10(d) + S with S ~ N(0, 4^2) and
E[S_{k,l} S_{i,j}] = 4^2 * 2^(-d_ue(k,i)/9 m) toward a common AP (l = j), zero
otherwise. Distances are ground distances on the wrapped-around square.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import SystemConfig
from .errors import CovarianceError, PlacementInfeasibleError

PATHLOSS_CONST_DB = -30.5
PATHLOSS_SLOPE_DB = 36.7
SHADOW_STD_DB = 4.0
SHADOW_CORR_DIST_M = 9.0
SHADOW_JITTER = 1e-12


@dataclass(frozen=True)
class Placement:
    ap_positions: np.ndarray   # (L, 2) in [0, side)
    ue_positions: np.ndarray   # (K, 2)
    side: float


@dataclass(frozen=True)
class LargeScale:
    beta_ue: np.ndarray    # (K, L) linear gains
    beta_ap: np.ndarray    # (L, L) linear inter-AP gains, NaN diagonal
    shadow_ue: np.ndarray  # (K, L) realized shadow fading [dB]
    shadow_ap: np.ndarray  # (L, L) symmetric [dB], NaN diagonal


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray          # (K, L, N) UE-AP channels
    g: np.ndarray          # (L, L, N, N); g[a, b] maps transmit at a -> receive at b


@dataclass(frozen=True)
class ChannelEstimate:
    q_hat: np.ndarray        # (K, L, N) LMMSE estimates of the effective channel
    gamma: np.ndarray        # (K, L) estimate variances
    c_coeff: np.ndarray      # (K, L) LMMSE scaling
    pilot_phase: np.ndarray  # (K, L) nu_{l,k} absorbed into each estimate


def torus_distance(p, q, side: float):
    """Euclidean distance on the wrapped square; per axis min(|d|, side - |d|)."""
    delta = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    delta = np.minimum(delta, side - delta)
    return np.sqrt(np.sum(delta ** 2, axis=-1))


def _pairwise_torus(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    delta = np.abs(a[:, None, :] - b[None, :, :])
    delta = np.minimum(delta, side - delta)
    return np.sqrt(np.sum(delta ** 2, axis=-1))


def place_nodes(cfg: SystemConfig, rng: np.random.Generator,
                retry_cap: int = 1000) -> Placement:
    """Uniform placement; APs drawn sequentially with the separation constraint.

    Each AP gets up to `retry_cap` redraws before the placement is declared
    infeasible.
    """
    side = cfg.area_side
    ap = np.empty((cfg.L, 2))
    for l in range(cfg.L):
        for attempt in range(retry_cap + 1):
            cand = rng.uniform(0.0, side, size=2)
            if l == 0 or cfg.min_ap_separation == 0.0:
                ap[l] = cand
                break
            d = torus_distance(ap[:l], cand[None, :], side)
            if np.all(d >= cfg.min_ap_separation):
                ap[l] = cand
                break
        else:
            raise PlacementInfeasibleError(
                f"could not place AP {l + 1}/{cfg.L} with separation "
                f"{cfg.min_ap_separation} m in {retry_cap} retries")
    ue = rng.uniform(0.0, side, size=(cfg.K, 2))
    return Placement(ap, ue, side)


def pathloss_db(distance_m) -> np.ndarray:
    """3GPP Urban Microcell pathloss in dB at the given ground distance."""
    return PATHLOSS_CONST_DB - PATHLOSS_SLOPE_DB * np.log10(distance_m)


def shadow_covariance(ue_positions: np.ndarray, side: float) -> np.ndarray:
    """K x K shadow covariance toward one AP (shared across APs)."""
    d_ue = _pairwise_torus(ue_positions, ue_positions, side)
    return SHADOW_STD_DB ** 2 * 2.0 ** (-d_ue / SHADOW_CORR_DIST_M)


def large_scale_fading(placement: Placement, rng: np.random.Generator) -> LargeScale:
    """Correlated UE shadowing (per AP), independent inter-AP shadowing."""
    side = placement.side
    K = placement.ue_positions.shape[0]
    L = placement.ap_positions.shape[0]

    cov = shadow_covariance(placement.ue_positions, side)
    try:
        chol = np.linalg.cholesky(cov + SHADOW_JITTER * np.eye(K))
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"shadow covariance not positive definite: {exc}") from exc
    shadow_ue = chol @ rng.standard_normal((K, L))

    d_ue_ap = _pairwise_torus(placement.ue_positions, placement.ap_positions, side)
    beta_ue = 10.0 ** ((pathloss_db(d_ue_ap) + shadow_ue) / 10.0)

    d_ap = _pairwise_torus(placement.ap_positions, placement.ap_positions, side)
    s = rng.standard_normal((L, L)) * SHADOW_STD_DB
    shadow_ap = np.triu(s, 1)
    shadow_ap = shadow_ap + shadow_ap.T
    with np.errstate(divide="ignore"):
        beta_ap = 10.0 ** ((pathloss_db(np.where(d_ap > 0, d_ap, 1.0)) + shadow_ap) / 10.0)
    np.fill_diagonal(beta_ap, np.nan)
    np.fill_diagonal(shadow_ap, np.nan)
    return LargeScale(beta_ue, beta_ap, shadow_ue, shadow_ap)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_ue_channels(beta_ue: np.ndarray, n_antennas: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Fresh iid Rayleigh h ~ CN(0, beta I_N) per (UE, AP); shape (K, L, N)."""
    K, L = beta_ue.shape
    return np.sqrt(beta_ue)[:, :, None] * _crandn(rng, (K, L, n_antennas))


def draw_ap_channels(beta_ap: np.ndarray, n_antennas: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Inter-AP matrices with reciprocity g[b, a] = g[a, b].T; shape (L, L, N, N)."""
    L = beta_ap.shape[0]
    g = np.zeros((L, L, n_antennas, n_antennas), dtype=complex)
    for a in range(L):
        for b in range(a + 1, L):
            m = np.sqrt(beta_ap[a, b]) * _crandn(rng, (n_antennas, n_antennas))
            g[a, b] = m
            g[b, a] = m.T
    return g


def draw_channels(large_scale: LargeScale, cfg: SystemConfig,
                  rng: np.random.Generator) -> ChannelRealization:
    """One coherence block of UE channels plus the (per-trial static) AP channels."""
    h = draw_ue_channels(large_scale.beta_ue, cfg.N, rng)
    g = draw_ap_channels(large_scale.beta_ap, cfg.N, rng)
    return ChannelRealization(h, g)


def lmmse_coefficients(beta_ue: np.ndarray, rho_ue: float, K: int):
    """Closed-form LMMSE scaling c and estimate variance gamma (both (K, L))."""
    amp = np.sqrt(rho_ue * K)
    c = amp * beta_ue / (rho_ue * K * beta_ue + 1.0)
    gamma = amp * beta_ue * c
    return c, gamma


def lmmse_estimate(h: np.ndarray, beta_ue: np.ndarray, cfg: SystemConfig,
                   nu_at_pilot: np.ndarray, rng: np.random.Generator,
                   noise: Optional[np.ndarray] = None) -> ChannelEstimate:
    """LMMSE estimate of the effective uplink channel q = e^{j nu} h.

    nu_at_pilot[k, l] is AP l's oscillator phase at UE k's pilot sample.
    The pilot AWGN has unit variance per entry; pass `noise` to reuse draws.
    """
    K, L, N = h.shape
    c, gamma = lmmse_coefficients(beta_ue, cfg.rho_UE, cfg.K)
    z = _crandn(rng, (K, L, N)) if noise is None else noise
    y = np.sqrt(cfg.rho_UE * cfg.K) * np.exp(1j * nu_at_pilot)[:, :, None] * h + z
    q_hat = c[:, :, None] * y
    return ChannelEstimate(q_hat, gamma, c, nu_at_pilot)
