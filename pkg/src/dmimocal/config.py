"""System configuration, slot timing, and oscillator-quality constants.

Conventions used throughout the package:

* Sample indices are 1-based. Slot s (1-based) covers global samples
  (s-1)*tau_c + 1 .. s*tau_c; frame f covers slots (f-1)*F + 1 .. f*F.
* All transmit powers are linear and normalized to a unit-variance noise
  floor (divide radiated power by the noise power before constructing a
  config; `dbm_to_normalized` does this).
* Every random draw goes through a generator obtained from `derive_rng`,
  keyed on (master_seed, context ints, purpose string), so trials and grid
  points are order-independent and reproducible.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidConfigError

# Table-I style defaults, normalized to the -94 dBm noise floor.
DEFAULT_NOISE_DBM = -94.0
DEFAULT_RHO_UE_DBM = 20.0    # 100 mW
DEFAULT_RHO_AP_DBM = 23.010299956639813  # 200 mW


def dbm_to_normalized(power_dbm: float, noise_dbm: float = DEFAULT_NOISE_DBM) -> float:
    """Linear transmit power normalized to the noise floor (unit-variance noise)."""
    return 10.0 ** ((power_dbm - noise_dbm) / 10.0)


def mw_to_dbm(power_mw: float) -> float:
    if power_mw <= 0:
        raise InvalidConfigError(f"power must be positive, got {power_mw} mW")
    return 10.0 * math.log10(power_mw)


@dataclass(frozen=True)
class SystemConfig:
    """All scalar system parameters plus simulation controls.

    Defaults reproduce the common experiment setup: 500 m wrapped square,
    K = 10 UEs with tau_p = K, 100-sample slots split 10/42/3/42/3, 2 GHz
    carrier on 20 MHz, and powers normalized to a -94 dBm noise floor.
    """

    L: int = 2                      # number of APs
    N: int = 64                     # antennas per AP
    K: int = 10                     # single-antenna UEs
    tau_c: int = 100                # slot length in samples
    tau_p: int = 10                 # uplink pilot samples (= K)
    tau_u: int = 42                 # uplink data samples
    tau_d: int = 42                 # downlink data samples
    tau_g: int = 3                  # guard samples (twice per slot)
    F: Optional[int] = None         # frame length in slots; None = n_m + extra_unbroken_slots
    n_m: Optional[int] = None       # measurement slots per frame; None = derived from coloring
    extra_unbroken_slots: int = 0   # slots without measurements inserted per frame
    rho_AP: float = dbm_to_normalized(DEFAULT_RHO_AP_DBM)
    rho_UE: float = dbm_to_normalized(DEFAULT_RHO_UE_DBM)
    s_pn_dbchz: float = -80.0       # phase-noise spectrum level at delta_f offset
    delta_f: float = 1e5            # spectrum offset frequency [Hz]
    f_c: float = 2e9                # carrier frequency [Hz]
    f_s: float = 2e7                # signal bandwidth / sample rate [Hz]
    sigma_nu_sq_override: Optional[float] = None  # rad^2 per sample, wins over the chain
    M_min: Optional[int] = None     # minimum edge count; None = L - 1
    area_side: float = 500.0        # wrapped square side [m]
    min_ap_separation: float = 50.0
    trials: int = 50
    frames_per_trial: int = 200
    master_seed: int = 1234
    compensation_policy: str = "pilot"        # {"genie", "pilot"}
    measurement_slot_placement: str = "even"  # {"even", "head"}
    mu_variance_signal: str = "actual"        # {"actual", "single_beam"}
    g_common_phase: str = "known"             # {"known", "random"}

    def __post_init__(self):
        validate_config(self)

    @property
    def m_min_effective(self) -> int:
        return self.M_min if self.M_min is not None else self.L - 1

    def with_(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


def validate_config(cfg: SystemConfig) -> None:
    """Raise InvalidConfigError with a field-level message on any violation."""
    if cfg.tau_p + cfg.tau_u + cfg.tau_d + 2 * cfg.tau_g != cfg.tau_c:
        raise InvalidConfigError(
            "slot split violated: tau_p + tau_u + tau_d + 2*tau_g = "
            f"{cfg.tau_p}+{cfg.tau_u}+{cfg.tau_d}+2*{cfg.tau_g} != tau_c = {cfg.tau_c}"
        )
    if cfg.tau_p != cfg.K:
        raise InvalidConfigError(f"tau_p must equal K (got tau_p={cfg.tau_p}, K={cfg.K})")
    if cfg.L < 1 or cfg.N < 1 or cfg.K < 1:
        raise InvalidConfigError("L, N, K must be positive")
    for name in ("rho_AP", "rho_UE"):
        if getattr(cfg, name) <= 0:
            raise InvalidConfigError(f"{name} must be positive")
    if cfg.f_c <= 0 or cfg.f_s <= 0 or cfg.delta_f <= 0:
        raise InvalidConfigError("f_c, f_s, delta_f must be positive")
    if cfg.F is not None and cfg.F < 1:
        raise InvalidConfigError(f"F must be >= 1, got {cfg.F}")
    if cfg.n_m is not None and cfg.F is not None and cfg.n_m > cfg.F:
        raise InvalidConfigError(f"n_m={cfg.n_m} exceeds frame length F={cfg.F}")
    if cfg.extra_unbroken_slots < 0:
        raise InvalidConfigError("extra_unbroken_slots must be >= 0")
    if cfg.M_min is not None:
        cap = cfg.L * (cfg.L - 1) // 2
        if cfg.M_min > cap:
            raise InvalidConfigError(f"M_min={cfg.M_min} exceeds L(L-1)/2 = {cap}")
    if cfg.area_side <= 0:
        raise InvalidConfigError("area_side must be positive")
    if cfg.min_ap_separation < 0:
        raise InvalidConfigError("min_ap_separation must be >= 0")
    if cfg.compensation_policy not in ("genie", "pilot"):
        raise InvalidConfigError(f"unknown compensation_policy {cfg.compensation_policy!r}")
    if cfg.measurement_slot_placement not in ("even", "head"):
        raise InvalidConfigError(
            f"unknown measurement_slot_placement {cfg.measurement_slot_placement!r}")
    if cfg.mu_variance_signal not in ("actual", "single_beam"):
        raise InvalidConfigError(f"unknown mu_variance_signal {cfg.mu_variance_signal!r}")
    if cfg.g_common_phase not in ("known", "random"):
        raise InvalidConfigError(f"unknown g_common_phase {cfg.g_common_phase!r}")
    if cfg.sigma_nu_sq_override is not None and cfg.sigma_nu_sq_override < 0:
        raise InvalidConfigError("sigma_nu_sq_override must be >= 0")


@dataclass(frozen=True)
class SlotTiming:
    """Within-slot sample positions of the calibration and pilot events.

    i1 is the last uplink sample of the normal structure (first downlink
    sample of a shifted master); i2 is the last downlink sample of the
    normal structure. mid_pilot is the pilot index used as the common
    reference when forming per-AP phase sums.
    """

    tau_c: int
    i1: int          # = tau_p + tau_u
    i2: int          # = tau_p + tau_u + tau_g + tau_d
    mid_pilot: int   # = floor(K / 2)
    dl_start: int    # first downlink sample of the normal structure
    dl_end: int      # last downlink sample (= i2)
    master_dl_start: int  # first downlink sample of a shifted master (= i1)
    master_dl_end: int    # last downlink sample of a shifted master
    dl_pilot: int    # downlink demodulation pilot sample (= dl_start)
    K: int

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "SlotTiming":
        i1 = cfg.tau_p + cfg.tau_u
        i2 = cfg.tau_p + cfg.tau_u + cfg.tau_g + cfg.tau_d
        dl_start = cfg.tau_p + cfg.tau_u + cfg.tau_g + 1
        return cls(
            tau_c=cfg.tau_c,
            i1=i1,
            i2=i2,
            mid_pilot=cfg.K // 2,
            dl_start=dl_start,
            dl_end=i2,
            master_dl_start=i1,
            master_dl_end=i1 + cfg.tau_d - 1,
            dl_pilot=dl_start,
            K=cfg.K,
        )

    def pilot_index(self, k: int) -> int:
        """Within-slot sample of UE k's uplink pilot (1 <= k <= K)."""
        if not 1 <= k <= self.K:
            raise InvalidConfigError(f"pilot index k={k} outside 1..{self.K}")
        return k


def compute_sigma_nu_sq(cfg: SystemConfig) -> float:
    """Per-sample Wiener increment variance [rad^2] from the printed constant chain.

    Evaluates sigma_nu^2 = 4 pi^2 f_c^2 c_nu / f_s with c_nu = 2 S Δf^2 / f_c
    (S the linear ratio of the dBc/Hz level) exactly as printed. The chain is
    dimensionally suspect (see `sigma_nu_sq_from_level` for the consistent
    variant), so `sigma_nu_sq_override` wins whenever it is set.
    """
    if cfg.sigma_nu_sq_override is not None:
        return cfg.sigma_nu_sq_override
    if cfg.f_s <= 0 or cfg.f_c <= 0:
        raise InvalidConfigError("f_s and f_c must be positive")
    s_lin = 10.0 ** (cfg.s_pn_dbchz / 10.0)
    c_nu = 2.0 * s_lin * cfg.delta_f ** 2 / cfg.f_c
    return 4.0 * math.pi ** 2 * cfg.f_c ** 2 * c_nu / cfg.f_s


def sigma_nu_sq_from_level(s_pn_dbchz: float, delta_f: float, f_s: float) -> float:
    """Per-sample Wiener increment variance consistent with an SSB level S at offset Δf.

    sigma_nu^2 = 8 pi^2 S_lin Δf^2 / f_s — the c_nu = 2 S Δf^2 / f_c^2 reading
    of the constant chain (units of seconds for c_nu). Used to pin
    `sigma_nu_sq_override` when sweeping the spectrum level in experiments.
    """
    s_lin = 10.0 ** (s_pn_dbchz / 10.0)
    return 8.0 * math.pi ** 2 * s_lin * delta_f ** 2 / f_s


_PURPOSE_SALT = 0x5EED


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    """Deterministic, order-independent stream for (master_seed, *keys).

    Integer keys are used as-is; string keys (purposes like "placement",
    "phase") are crc32-hashed. Streams with distinct key tuples are
    statistically independent regardless of the order they are drawn in.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, _PURPOSE_SALT]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            entropy.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
