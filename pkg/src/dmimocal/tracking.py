"""Process/observation covariance assembly, the generalized Kalman filter with
correlated process and observation noise, and the gauge-constrained
least-squares phase solve.

All covariances are in rad^2. `sigma_nu_sq` is the per-sample Wiener increment
variance; `i_mid` denotes the global sample of the current slot's reference
uplink pilot (index floor(K/2) of the slot containing the update time `i`).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .angles import wrap
from .config import SlotTiming, SystemConfig, compute_sigma_nu_sq
from .errors import FilterSingularError, UnsolvableError

COND_LIMIT = 1e12
JITTER_SCALE = 1e-12


@dataclass(frozen=True)
class NoiseCovariances:
    """Second-order model of one filter update over the measured edge subset."""
    sigma_zeta: np.ndarray      # (M, M) process covariance
    sigma_xi: np.ndarray        # (M_n, M_n) observation drift covariance
    sigma_zeta_xi: np.ndarray   # (M, M_n) cross correlation E[zeta xi^T]
    sigma_mu: np.ndarray        # (M_n, M_n) diagonal measurement error


@dataclass
class KalmanState:
    alpha_hat: np.ndarray   # (M,) unwrapped offset estimates
    P_post: np.ndarray      # (M, M) posterior covariance
    n: int = 0


@dataclass(frozen=True)
class PhaseSolution:
    phi_hat: np.ndarray     # (L,) per-AP phases, zero projection on the all-one vector
    basis: np.ndarray       # (L, L-1) eigenvector matrix Z used


def varsigma(edge_a, edge_b) -> int:
    """Sign of the shared-AP correlation between two distinct edges.

    +1 when the common AP plays the same endpoint role in both edges (both
    first or both second), -1 when the roles differ, 0 when the edges are
    disjoint. Edges are (l1, l2) with l1 < l2.
    """
    if edge_a == edge_b:
        raise ValueError("varsigma is defined for distinct edge pairs")
    a1, a2 = edge_a
    b1, b2 = edge_b
    if a1 == b1 or a2 == b2:
        return 1
    if a1 == b2 or a2 == b1:
        return -1
    return 0


def sigma_zeta(edges, d: int, timing: SlotTiming, sigma_nu_sq: float) -> np.ndarray:
    """Process covariance over all M edges for an update d slots after the last.

    Diagonal 2[4 d tau_c - 2 (i2 - floor(K/2))] sigma_nu^2; off-diagonal
    varsigma * [4 d tau_c - 2 (i2 - floor(K/2))] sigma_nu^2 for edges sharing
    an AP.
    """
    if d < 1:
        raise ValueError(f"slot gap d must be >= 1, got {d}")
    base = (4 * d * timing.tau_c - 2 * (timing.i2 - timing.mid_pilot)) * sigma_nu_sq
    m = len(edges)
    out = np.zeros((m, m))
    for a in range(m):
        out[a, a] = 2.0 * base
        for b in range(a + 1, m):
            s = varsigma(edges[a], edges[b])
            if s:
                out[a, b] = out[b, a] = s * base
    return out


def sigma_xi(measured_edges, stamps, i: int, i_mid: int,
             sigma_nu_sq: float) -> np.ndarray:
    """Observation drift covariance over the measured edges.

    `stamps[e] = (i_minus, i_plus)` are edge e's latest directional sample
    times (global). Diagonal 2[(i - i+) + |i_mid - i-|] sigma_nu^2;
    off-diagonal for a shared AP, with a labeled so that i_a+ >= i_b+:
    varsigma * [(i - i_a+) + max(0, i_mid - max(i_a-, i_b-))] sigma_nu^2.
    """
    m = len(measured_edges)
    out = np.zeros((m, m))
    for a in range(m):
        i_min_a, i_plus_a = stamps[measured_edges[a]]
        out[a, a] = 2.0 * ((i - i_plus_a) + abs(i_mid - i_min_a)) * sigma_nu_sq
        for b in range(a + 1, m):
            s = varsigma(measured_edges[a], measured_edges[b])
            if not s:
                continue
            i_min_b, i_plus_b = stamps[measured_edges[b]]
            hi = max(i_plus_a, i_plus_b)
            val = s * ((i - hi) + max(0, i_mid - max(i_min_a, i_min_b))) * sigma_nu_sq
            out[a, b] = out[b, a] = val
    return out


def _overlap(x1, x2, y1, y2) -> int:
    return max(0, min(x2, y2) - max(x1, y1))


def sigma_zeta_xi_scalar(i_minus: int, i_plus: int, i: int, i_mid: int,
                         sigma_nu_sq: float,
                         window: Optional[int] = None) -> float:
    """Diagonal cross-correlation term sigma^2_{zeta xi}(i-, i+).

    With `window=None` this is the printed closed form, which equals the true
    interval-overlap correlation whenever both timestamps fall inside the
    process window (i.e. the edge was re-measured within the last d slots).
    Passing the window length d*tau_c computes the exact signed overlap of the
    drift intervals [i - w, i], [i_mid - w, i_mid] against [i+, i] and
    [i-, i_mid]; stale timestamps then contribute only the drift actually
    shared with the window, keeping the joint noise model a true covariance.
    """
    if window is None:
        return -2.0 * (
            (i - max(i_plus, i_mid))
            + 2 * max(0, min(i_plus, i_mid) - i_minus)
            - max(0, i_minus - i_mid)
            + 4 * max(0, i_mid - i_plus)
        ) * sigma_nu_sq
    a = (i - window, i)
    b = (i_mid - window, i_mid)
    total = _overlap(*a, i_plus, i) + _overlap(*b, i_plus, i)
    if i_minus <= i_mid:
        total += _overlap(*a, i_minus, i_mid) + _overlap(*b, i_minus, i_mid)
    else:
        total -= _overlap(*a, i_mid, i_minus) + _overlap(*b, i_mid, i_minus)
    return -2.0 * total * sigma_nu_sq


def sigma_zeta_xi(edges, measured_edges, stamps, i: int, i_mid: int,
                  sigma_nu_sq: float, window: Optional[int] = None) -> np.ndarray:
    """Cross correlation E[zeta xi^T]: rows over all M edges, columns over the
    measured ones. Diagonal entries use the column edge's own timestamps; a
    shared-AP pair gets varsigma * sigma^2_{zeta xi}(i_b-, i_b+) / 2.
    `window` as in sigma_zeta_xi_scalar."""
    out = np.zeros((len(edges), len(measured_edges)))
    for col, eb in enumerate(measured_edges):
        i_min_b, i_plus_b = stamps[eb]
        diag_val = sigma_zeta_xi_scalar(i_min_b, i_plus_b, i, i_mid,
                                        sigma_nu_sq, window)
        for row, ea in enumerate(edges):
            if ea == eb:
                out[row, col] = diag_val
            else:
                s = varsigma(ea, eb)
                if s:
                    out[row, col] = s * diag_val / 2.0
    return out


def sigma_mu(variances) -> np.ndarray:
    """Diagonal measurement-error covariance from per-edge total variances."""
    return np.diag(np.asarray(variances, dtype=float))


def two_ap_noise_vars(cfg: SystemConfig):
    """Scalar (sigma_zeta^2, sigma_xi^2) of the two-AP filter at the config timing."""
    t = SlotTiming.from_config(cfg)
    s2 = compute_sigma_nu_sq(cfg)
    F = cfg.F if cfg.F is not None else 1
    zeta = (8 * F * cfg.tau_c - 4 * (t.i2 - t.mid_pilot)) * s2
    xi = 2 * (t.i1 - t.mid_pilot) * s2
    return zeta, xi


def kalman_update_two_ap(state: KalmanState, alpha_bar: float,
                         cfg: SystemConfig, meas_var: float) -> KalmanState:
    """Scalar generalized Kalman update for the single-edge (two-AP) case.

    The stored P is the prior error variance: the gain is
    (P + sigma_xi^2) / (P + 3 sigma_xi^2 + meas_var), the estimate moves by
    gain * wrap(innovation), and P <- P - gain*(P + sigma_xi^2) + sigma_zeta^2
    yields the next prior.
    """
    zeta, xi = two_ap_noise_vars(cfg)
    p = float(state.P_post[0, 0])
    kappa = (p + xi) / (p + 3.0 * xi + meas_var)
    alpha = float(state.alpha_hat[0]) + kappa * wrap(alpha_bar - float(state.alpha_hat[0]))
    p_next = p - kappa * (p + xi) + zeta
    return KalmanState(np.array([alpha]), np.array([[p_next]]), state.n + 1)


def kalman_update(state: KalmanState, alpha_bar_n: np.ndarray, A_n: np.ndarray,
                  cov: NoiseCovariances) -> KalmanState:
    """Generalized Kalman update with correlated process/observation noise.

    P- = P+ + Sigma_zeta;
    K  = (P- A^T + Sigma_zeta_xi) S^{-1} with
    S  = A P- A^T + A Sigma_zeta_xi + Sigma_zeta_xi^T A^T + Sigma_xi + Sigma_mu;
    alpha <- alpha + K wrap(alpha_bar - A alpha); P+ = P- - K (A P- + Sigma_zeta_xi^T),
    symmetrized.
    """
    p_prior = state.P_post + cov.sigma_zeta
    gain_num = p_prior @ A_n.T + cov.sigma_zeta_xi
    s_mat = (A_n @ p_prior @ A_n.T + A_n @ cov.sigma_zeta_xi
             + cov.sigma_zeta_xi.T @ A_n.T + cov.sigma_xi + cov.sigma_mu)
    try:
        gain = np.linalg.solve(s_mat.T, gain_num.T).T
    except np.linalg.LinAlgError as exc:
        raise FilterSingularError(f"innovation covariance singular: {exc}") from exc
    innovation = wrap(alpha_bar_n - A_n @ state.alpha_hat)
    alpha = state.alpha_hat + gain @ innovation
    p_post = p_prior - gain @ (A_n @ p_prior + cov.sigma_zeta_xi.T)
    p_post = 0.5 * (p_post + p_post.T)
    return KalmanState(alpha, p_post, state.n + 1)


def _incidence_connected(B: np.ndarray) -> bool:
    """Connectivity of the measurement graph from the incidence pattern."""
    L = B.shape[1]
    parent = list(range(L))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for row in B:
        nz = np.flatnonzero(row)
        if len(nz) == 2:
            parent[find(nz[0])] = find(nz[1])
    return len({find(v) for v in range(L)}) == 1


def solve_phases(alpha_hat: np.ndarray, P: np.ndarray,
                 B: np.ndarray) -> PhaseSolution:
    """Per-AP phases from edge offsets, up to (and gauged out of) a common constant.

    phi_hat = Z (Z^T B^T P^{-1} B Z)^{-1} Z^T B^T P^{-1} alpha_hat, with Z the
    L-1 eigenvectors of B^T P^{-1} B orthogonal to the all-one vector
    (ascending eigenvalue order, first-substantial-component-positive sign).
    The result has zero projection on the all-one direction.
    """
    L = B.shape[1]
    if not _incidence_connected(B):
        raise UnsolvableError("incidence matrix is rank deficient; "
                              "measurement graph disconnected")
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = np.diag(P)
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        P = P + (JITTER_SCALE * np.trace(P) / P.shape[0]) * np.eye(P.shape[0])
    p_inv_b = np.linalg.solve(P, B)
    t_mat = B.T @ p_inv_b
    _, eigvec = np.linalg.eigh(t_mat)
    z = eigvec[:, 1:]
    for col in range(z.shape[1]):
        v = z[:, col]
        idx = int(np.argmax(np.abs(v) > 1e-12 * np.abs(v).max()))
        if v[idx] < 0:
            z[:, col] = -v
    rhs = z.T @ (p_inv_b.T @ alpha_hat)
    core = z.T @ t_mat @ z
    phi = z @ np.linalg.solve(core, rhs)
    return PhaseSolution(phi, z)


def solution_error_covariance(P: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Covariance Z (Z^T B^T P^{-1} B Z)^{-1} Z^T of the gauged phase estimate."""
    sol = solve_phases(np.zeros(B.shape[0]), P, B)
    z = sol.basis
    p_inv_b = np.linalg.solve(np.asarray(P, dtype=float), B)
    core = z.T @ (B.T @ p_inv_b) @ z
    return z @ np.linalg.solve(core, z.T)


@dataclass
class FilterTrace:
    """Per-update filter internals, exportable as CSV for debugging."""
    rows: list = field(default_factory=list)

    def record(self, n: int, i: int, alpha_hat: np.ndarray, p_post: np.ndarray,
               measured_edges, innovation: np.ndarray) -> None:
        self.rows.append({
            "n": n,
            "i": i,
            "alpha_hat": alpha_hat.copy(),
            "p_diag": np.diag(p_post).copy(),
            "measured_edges": tuple(measured_edges),
            "innovation": np.asarray(innovation).copy(),
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,i,edge,alpha_hat,p_diag,measured,innovation\n")
        for row in self.rows:
            meas = {e: k for k, e in enumerate(row["measured_edges"])}
            for e in range(len(row["alpha_hat"])):
                innov = row["innovation"][meas[e]] if e in meas else math.nan
                buf.write(f"{row['n']},{row['i']},{e},{row['alpha_hat'][e]:.12g},"
                          f"{row['p_diag'][e]:.12g},{int(e in meas)},{innov:.12g}\n")
        return buf.getvalue()
