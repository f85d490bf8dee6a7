"""Beamformed calibration signals and over-the-air bidirectional phase
measurements between APs.

Direction convention: for a transmission from AP `tx` to AP `rx`, `channel`
is the N x N matrix mapping the transmitted vector to the received one
(reciprocity: the reverse direction uses its transpose). The transmit beam
toward a target is the leading right-singular vector of that direction's
channel, and the receiver matched-filters with u^H M^H.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateChannelError, MeasurementDegenerateError


@dataclass(frozen=True)
class CalSignal:
    """A master's composite calibration signal at i1 (or a responder's at i2)."""
    transmitter: int
    targets: tuple                # receiver AP ids, aligned with beams/powers
    beams: np.ndarray             # (n_targets, N) unit-norm rows
    powers: np.ndarray            # (n_targets,) summing to rho_AP
    x: np.ndarray                 # (N,) sum_t sqrt(powers[t]) * beams[t]


@dataclass
class MeasurementRecord:
    """Latest directional measurements of one edge (l1 < l2)."""
    edge: tuple
    alpha_fwd: Optional[float] = None   # measured angle of l1 -> l2
    alpha_bwd: Optional[float] = None   # measured angle of l2 -> l1
    t_fwd: Optional[int] = None         # global sample of the l1 -> l2 signal
    t_bwd: Optional[int] = None
    var_fwd: Optional[float] = None
    var_bwd: Optional[float] = None

    @property
    def complete(self) -> bool:
        return self.alpha_fwd is not None and self.alpha_bwd is not None

    @property
    def i_minus(self) -> int:
        return min(self.t_fwd, self.t_bwd)

    @property
    def i_plus(self) -> int:
        return max(self.t_fwd, self.t_bwd)

    @property
    def var_total(self) -> float:
        return self.var_fwd + self.var_bwd


def leading_singular_vectors(channel: np.ndarray, tol: float = 1e-12):
    """Leading left/right singular vectors with a deterministic phase.

    The gauge left free by the SVD is fixed by rotating each vector so its
    first component of non-negligible magnitude is real positive.
    """
    if not np.any(np.abs(channel) > 0):
        raise DegenerateChannelError("zero channel matrix has no singular direction")
    u_mat, _, vh = np.linalg.svd(channel)
    return _fix_phase(u_mat[:, 0], tol), _fix_phase(vh[0].conj(), tol)


def _fix_phase(u: np.ndarray, tol: float) -> np.ndarray:
    mags = np.abs(u)
    idx = int(np.argmax(mags > tol * mags.max()))
    return u * np.exp(-1j * np.angle(u[idx]))


def fractional_power_allocation(norms, rho_ap: float) -> np.ndarray:
    """Split rho_AP across targets proportionally to the inverse link norm.

    Weaker links get more power so the per-link measurement error stays
    balanced. Sums exactly to rho_ap.
    """
    norms = np.asarray(norms, dtype=float)
    if np.any(norms <= 0):
        raise DegenerateChannelError("power allocation needs strictly positive link norms")
    inv = 1.0 / norms
    return rho_ap * inv / inv.sum()


def make_cal_signal(transmitter: int, targets, beams, norms,
                    rho_ap: float) -> CalSignal:
    """Composite signal x = sum_t sqrt(rho_t) u_t with fractional power split."""
    beams = np.asarray(beams)
    powers = fractional_power_allocation(norms, rho_ap)
    x = (np.sqrt(powers)[:, None] * beams).sum(axis=0)
    return CalSignal(transmitter, tuple(targets), beams, powers, x)


def single_beam_signal(transmitter: int, target: int, beam: np.ndarray,
                       rho_ap: float) -> CalSignal:
    beam = np.asarray(beam)
    return CalSignal(transmitter, (target,), beam[None, :],
                     np.array([rho_ap]), np.sqrt(rho_ap) * beam)


def measurement_error_variance(channel: np.ndarray, beam: np.ndarray,
                               x: np.ndarray) -> float:
    """Small-error variance of the matched-filter angle estimate.

    ||M u||^2 / (2 |u^H M^H M x|^2); for a single-target signal x = sqrt(rho) u
    this reduces exactly to 1 / (2 rho sigma_max(M)^2).
    """
    mu = channel @ beam
    denom = np.abs(np.vdot(mu, channel @ x)) ** 2
    if denom == 0:
        raise MeasurementDegenerateError("matched filter has zero energy")
    return float(np.vdot(mu, mu).real / (2.0 * denom))


def simulate_directional_measurement(signal: CalSignal, target: int,
                                     channel: np.ndarray,
                                     nu_tx: float, nu_rx: float,
                                     rng: np.random.Generator,
                                     noise_std: float = 1.0,
                                     variance_signal: str = "actual",
                                     mf_channel: Optional[np.ndarray] = None):
    """One over-the-air measurement of alpha = -nu_tx + nu_rx.

    The receiver sees y = e^{j alpha} M x + z with unit-variance complex AWGN
    entries (scaled by noise_std; pass 0 for the noiseless case) and returns
    (angle of u^H M^H y, printed variance approximation). `mf_channel` is the
    channel as known to the receiver (defaults to the physical one; may differ
    by a common phase). `variance_signal` selects which transmit signal enters
    the variance denominator: the actual composite ("actual") or the target's
    lone beam ("single_beam").
    """
    t = signal.targets.index(target)
    beam = signal.beams[t]
    known = channel if mf_channel is None else mf_channel
    alpha = -nu_tx + nu_rx
    y = np.exp(1j * alpha) * (channel @ signal.x)
    if noise_std > 0:
        n = channel.shape[0]
        y = y + noise_std * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    mf = np.vdot(known @ beam, y)
    if mf == 0:
        raise MeasurementDegenerateError("matched filter output is exactly zero")
    if variance_signal == "single_beam":
        x_var = np.sqrt(signal.powers[t]) * beam
    else:
        x_var = signal.x
    return float(np.angle(mf)), measurement_error_variance(known, beam, x_var)


def bidirectional_difference(rec: MeasurementRecord) -> float:
    """Forward minus backward angle: the estimate of the pairwise phase sum
    difference (nu_{l2,i-} + nu_{l2,i+}) - (nu_{l1,i-} + nu_{l1,i+})."""
    if not rec.complete:
        raise MeasurementDegenerateError(f"edge {rec.edge} missing a direction")
    return rec.alpha_fwd - rec.alpha_bwd
