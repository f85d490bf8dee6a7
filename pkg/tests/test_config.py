import math

import numpy as np
import pytest

from dmimocal.config import (SlotTiming, SystemConfig, compute_sigma_nu_sq,
                             dbm_to_normalized, derive_rng,
                             sigma_nu_sq_from_level)
from dmimocal.errors import InvalidConfigError

# Hand evaluation of the printed constant chain at the default parameters:
# S = 10^(-80/10) = 1e-8; c_nu = 2*1e-8*(1e5)^2/2e9 = 1e-7;
# sigma^2 = 4*pi^2*(2e9)^2*1e-7/2e7 = 4*pi^2*2e4.
PRINTED_CHAIN_DEFAULT = 4.0 * math.pi ** 2 * 2e4


def test_defaults_satisfy_slot_identity():
    cfg = SystemConfig()
    assert cfg.tau_p + cfg.tau_u + cfg.tau_d + 2 * cfg.tau_g == cfg.tau_c
    assert cfg.tau_p == cfg.K


def test_sigma_nu_override_passthrough():
    cfg = SystemConfig(sigma_nu_sq_override=3.95e-4)
    assert compute_sigma_nu_sq(cfg) == 3.95e-4


def test_sigma_nu_zero_spectrum_level():
    cfg = SystemConfig(s_pn_dbchz=-math.inf)
    assert compute_sigma_nu_sq(cfg) == 0.0


def test_sigma_nu_printed_chain_value():
    cfg = SystemConfig(s_pn_dbchz=-80.0, delta_f=1e5, f_c=2e9, f_s=2e7)
    assert compute_sigma_nu_sq(cfg) == pytest.approx(PRINTED_CHAIN_DEFAULT, rel=1e-14)
    assert compute_sigma_nu_sq(cfg) == pytest.approx(789568.3520871486, rel=1e-12)


def test_sigma_nu_from_level_matches_consistent_reading():
    # 8*pi^2*1e-8*(1e5)^2/2e7 = 3.9478e-4, the value the override example uses.
    val = sigma_nu_sq_from_level(-80.0, 1e5, 2e7)
    assert val == pytest.approx(8.0 * math.pi ** 2 * 1e-8 * 1e10 / 2e7, rel=1e-14)
    assert val == pytest.approx(3.95e-4, rel=0.01)


def test_invalid_slot_split_rejected():
    with pytest.raises(InvalidConfigError, match="slot split"):
        SystemConfig(tau_d=43)


def test_pilot_period_must_equal_ue_count():
    with pytest.raises(InvalidConfigError, match="tau_p"):
        SystemConfig(K=9, tau_u=43)


def test_nonpositive_bandwidth_rejected():
    with pytest.raises(InvalidConfigError):
        SystemConfig(f_s=0.0)
    with pytest.raises(InvalidConfigError):
        SystemConfig(f_c=-1.0)


def test_power_normalization_dbm():
    # 200 mW = 23.0103 dBm over a -94 dBm noise floor.
    rho = dbm_to_normalized(10 * math.log10(200.0), -94.0)
    assert rho == pytest.approx(10 ** ((23.010299956639813 + 94) / 10), rel=1e-12)
    assert SystemConfig().rho_AP == pytest.approx(rho, rel=1e-12)
    assert SystemConfig().rho_UE == pytest.approx(100.0 * 10 ** 9.4, rel=1e-12)


def test_slot_timing_positions():
    t = SlotTiming.from_config(SystemConfig())
    assert (t.i1, t.i2) == (52, 97)
    assert t.mid_pilot == 5
    assert t.dl_start == 56 and t.dl_end == 97
    assert t.master_dl_start == 52 and t.master_dl_end == 93
    assert t.pilot_index(3) == 3
    with pytest.raises(InvalidConfigError):
        t.pilot_index(11)


def test_m_min_cap():
    with pytest.raises(InvalidConfigError, match="M_min"):
        SystemConfig(L=4, M_min=7)


def test_derive_rng_deterministic_and_order_independent():
    a1 = derive_rng(7, 1, 2, "phase").standard_normal(4)
    b = derive_rng(7, 9, 9, "other").standard_normal(4)
    a2 = derive_rng(7, 1, 2, "phase").standard_normal(4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_derive_rng_distinct_purposes():
    x = derive_rng(7, 0, "placement").standard_normal(8)
    y = derive_rng(7, 0, "shadow").standard_normal(8)
    assert not np.array_equal(x, y)
