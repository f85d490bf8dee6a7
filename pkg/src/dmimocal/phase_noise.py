"""Per-AP Wiener local-oscillator phase trajectories on the global sample grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhaseTrajectory:
    """Phase values nu[l, t] for AP l at global sample start + t.

    nu has shape (L, T); column t corresponds to global sample index
    start + t (1-based). sigma_nu_sq is the per-sample increment variance.
    """

    nu: np.ndarray
    sigma_nu_sq: float
    start: int = 1

    @property
    def n_aps(self) -> int:
        return self.nu.shape[0]

    @property
    def last_sample(self) -> int:
        return self.start + self.nu.shape[1] - 1

    def value_at(self, i) -> np.ndarray:
        """Phases of all APs at global sample(s) i (scalar or array)."""
        idx = np.asarray(i) - self.start
        return self.nu[:, idx]

    def tail(self, n: int = 1) -> "PhaseTrajectory":
        """Keep only the last n samples (memory control for long runs)."""
        return PhaseTrajectory(self.nu[:, -n:].copy(), self.sigma_nu_sq,
                               self.last_sample - n + 1)


def initial_trajectory(n_aps: int, sigma_nu_sq: float,
                       rng: np.random.Generator) -> PhaseTrajectory:
    """Trajectory holding sample 1 only, with uniform[-pi, pi) initial phases."""
    nu0 = rng.uniform(-np.pi, np.pi, size=(n_aps, 1))
    return PhaseTrajectory(nu0, sigma_nu_sq, start=1)


def advance_phase(traj: PhaseTrajectory, steps: int,
                  rng: np.random.Generator) -> PhaseTrajectory:
    """Append `steps` Wiener samples per AP: nu_i = nu_{i-1} + N(0, sigma_nu_sq).

    Increments are drawn as unit normals and scaled, so two runs sharing an
    rng stream but differing in sigma_nu_sq see the same underlying noise
    (coupled-seed comparisons across oscillator qualities).
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return traj
    incr = rng.standard_normal((traj.n_aps, steps)) * np.sqrt(traj.sigma_nu_sq)
    walk = np.cumsum(incr, axis=1) + traj.nu[:, -1:]
    return PhaseTrajectory(np.concatenate([traj.nu, walk], axis=1),
                           traj.sigma_nu_sq, traj.start)
