import numpy as np
import pytest

from dmimocal.config import SystemConfig
from dmimocal.errors import PlacementInfeasibleError
from dmimocal.propagation import (Placement, draw_ap_channels, draw_channels,
                                  draw_ue_channels, large_scale_fading,
                                  lmmse_coefficients, lmmse_estimate,
                                  pathloss_db, place_nodes, shadow_covariance,
                                  torus_distance)


def small_cfg(**kw):
    kw.setdefault("L", 2)
    kw.setdefault("N", 4)
    kw.setdefault("K", 10)
    return SystemConfig(**kw)


class TestTorusDistance:
    def test_zero(self):
        assert torus_distance((0.0, 0.0), (0.0, 0.0), 500.0) == 0.0

    def test_wraparound(self):
        assert torus_distance((0.0, 0.0), (499.0, 0.0), 500.0) == pytest.approx(1.0)

    def test_diagonal(self):
        d = torus_distance((0.0, 0.0), (250.0, 250.0), 500.0)
        assert d == pytest.approx(250.0 * np.sqrt(2.0), rel=1e-12)

    def test_symmetry_and_bound(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0, 500, (200, 2))
        q = rng.uniform(0, 500, (200, 2))
        d1 = torus_distance(p, q, 500.0)
        d2 = torus_distance(q, p, 500.0)
        assert np.allclose(d1, d2)
        assert np.all(d1 <= 500.0 / np.sqrt(2.0) + 1e-9)


class TestPlacement:
    def test_single_ap_always_succeeds(self):
        cfg = small_cfg(L=1, M_min=0)
        for seed in range(20):
            p = place_nodes(cfg, np.random.default_rng(seed))
            assert p.ap_positions.shape == (1, 2)
            assert np.all((0 <= p.ap_positions) & (p.ap_positions < 500.0))

    def test_zero_separation_never_rejects(self):
        cfg = small_cfg(L=8, min_ap_separation=0.0)
        p = place_nodes(cfg, np.random.default_rng(1), retry_cap=0)
        assert p.ap_positions.shape == (8, 2)

    def test_separation_enforced(self):
        cfg = small_cfg(L=16, min_ap_separation=50.0)
        p = place_nodes(cfg, np.random.default_rng(2))
        for i in range(16):
            for j in range(i + 1, 16):
                assert torus_distance(p.ap_positions[i], p.ap_positions[j],
                                      500.0) >= 50.0

    def test_feasibility_rate(self):
        # L = 16, side 500, separation 50: at least 99% of seeded attempts work.
        cfg = small_cfg(L=16, min_ap_separation=50.0)
        ok = 0
        for seed in range(1000):
            try:
                place_nodes(cfg, np.random.default_rng(seed))
                ok += 1
            except PlacementInfeasibleError:
                pass
        assert ok >= 990

    def test_infeasible_raises(self):
        cfg = small_cfg(L=16, area_side=100.0, min_ap_separation=90.0)
        with pytest.raises(PlacementInfeasibleError):
            place_nodes(cfg, np.random.default_rng(0), retry_cap=50)


class TestLargeScale:
    def test_pathloss_hand_values(self):
        assert 10 ** (pathloss_db(1.0) / 10) == pytest.approx(10 ** -3.05, rel=1e-12)
        assert 10 ** (pathloss_db(100.0) / 10) == pytest.approx(10 ** -10.39, rel=1e-12)

    def test_pathloss_monotone(self):
        d = np.linspace(1.0, 700.0, 300)
        beta = pathloss_db(d)
        assert np.all(np.diff(beta) < 0)

    def test_colocated_ues_share_shadow(self):
        # d_ue = 0 gives full correlation 4^2: identical S toward every AP.
        pos = np.array([[10.0, 10.0], [10.0, 10.0], [300.0, 40.0]])
        placement = Placement(np.array([[0.0, 0.0], [100.0, 100.0]]), pos, 500.0)
        ls = large_scale_fading(placement, np.random.default_rng(0))
        assert np.allclose(ls.shadow_ue[0], ls.shadow_ue[1], atol=1e-5)
        cov = shadow_covariance(pos, 500.0)
        assert cov[0, 1] == pytest.approx(16.0)

    def test_shadow_covariance_psd_and_marginal(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(0, 500, (10, 2))
        cov = shadow_covariance(pos, 500.0)
        assert np.allclose(cov, cov.T)
        assert np.min(np.linalg.eigvalsh(cov)) > -1e-9
        assert np.allclose(np.diag(cov), 16.0)

    def test_shadow_statistics(self):
        # Marginal std 4 dB; correlation decays with UE distance.
        pos = np.array([[0.0, 0.0], [9.0, 0.0]])
        placement = Placement(np.array([[50.0, 50.0]]), pos, 500.0)
        draws = np.array([
            large_scale_fading(placement, np.random.default_rng(s)).shadow_ue[:, 0]
            for s in range(4000)])
        assert draws.std(axis=0) == pytest.approx([4.0, 4.0], rel=0.06)
        emp = np.mean(draws[:, 0] * draws[:, 1])
        assert emp == pytest.approx(16.0 / 2.0, rel=0.1)  # 2^{-9/9} = 1/2

    def test_beta_ap_symmetric_nan_diagonal(self):
        cfg = small_cfg(L=4)
        placement = place_nodes(cfg, np.random.default_rng(4))
        ls = large_scale_fading(placement, np.random.default_rng(5))
        off = ~np.eye(4, dtype=bool)
        assert np.allclose(ls.beta_ap[off], ls.beta_ap.T[off])
        assert np.all(np.isnan(np.diag(ls.beta_ap)))
        assert np.all(ls.beta_ue > 0)


class TestChannels:
    def test_zero_gain_gives_zero_vector(self):
        h = draw_ue_channels(np.zeros((2, 3)), 4, np.random.default_rng(0))
        assert np.all(h == 0)

    def test_mean_square_norm(self):
        beta = np.array([[0.5]])
        rng = np.random.default_rng(1)
        h = np.stack([draw_ue_channels(beta, 4, rng)[0, 0] for _ in range(10 ** 4)])
        emp = np.mean(np.sum(np.abs(h) ** 2, axis=1))
        assert emp == pytest.approx(4 * 0.5, rel=0.02)

    def test_reciprocity_exact(self):
        beta_ap = np.abs(np.random.default_rng(2).normal(1, 0.1, (4, 4)))
        beta_ap = (beta_ap + beta_ap.T) / 2
        g = draw_ap_channels(beta_ap, 3, np.random.default_rng(3))
        for a in range(4):
            for b in range(4):
                if a != b:
                    assert np.array_equal(g[b, a], g[a, b].T)

    def test_draw_channels_shapes(self):
        cfg = small_cfg(L=3)
        placement = place_nodes(cfg, np.random.default_rng(6))
        ls = large_scale_fading(placement, np.random.default_rng(7))
        ch = draw_channels(ls, cfg, np.random.default_rng(8))
        assert ch.h.shape == (10, 3, 4)
        assert ch.g.shape == (3, 3, 4, 4)


class TestLmmse:
    def test_high_snr_limit(self):
        # rho_UE * K * beta = 1e4 -> gamma/beta > 0.999.
        beta = np.array([[1.0]])
        _, gamma = lmmse_coefficients(beta, 1e3, 10)
        assert gamma[0, 0] / beta[0, 0] > 0.999

    def test_zero_gain(self):
        c, gamma = lmmse_coefficients(np.array([[0.0]]), 10.0, 10)
        assert c[0, 0] == 0.0 and gamma[0, 0] == 0.0

    def test_gamma_below_beta(self):
        beta = np.abs(np.random.default_rng(0).normal(1e-8, 1e-8, (5, 3))) + 1e-12
        _, gamma = lmmse_coefficients(beta, 2.5e11, 10)
        assert np.all(gamma > 0) and np.all(gamma < beta)

    def test_estimate_variance_matches_gamma(self):
        cfg = small_cfg(L=1, rho_UE=0.4)          # rho_UE*K*beta = 4
        beta = np.ones((10, 1))
        _, gamma = lmmse_coefficients(beta, cfg.rho_UE, cfg.K)
        rng = np.random.default_rng(9)
        nu = np.zeros((10, 1))
        samples = []
        for _ in range(2500):
            h = draw_ue_channels(beta, cfg.N, rng)
            est = lmmse_estimate(h, beta, cfg, nu, rng)
            samples.append(est.q_hat)
        q = np.concatenate(samples, axis=0)
        emp = np.mean(np.abs(q) ** 2)
        assert emp == pytest.approx(gamma[0, 0], rel=0.02)


class TestEstimateMoments:
    """Closed-form moments of the LMMSE estimate, checked by Monte Carlo at
    N = 4, beta = 1, gamma = 0.8 (rho_UE*K = 4)."""

    @classmethod
    def setup_class(cls):
        cfg = small_cfg(L=1, rho_UE=0.4)
        beta = np.ones((10, 1))
        _, gamma = lmmse_coefficients(beta, cfg.rho_UE, cfg.K)
        assert gamma[0, 0] == pytest.approx(0.8, rel=1e-12)
        rng = np.random.default_rng(10)
        cross, norm4 = [], []
        for _ in range(12000):                          # 1.2e5 draws total
            h = draw_ue_channels(beta, cfg.N, rng)
            nu = rng.uniform(-np.pi, np.pi, (10, 1))
            est = lmmse_estimate(h, beta, cfg, nu, rng)
            q = np.exp(1j * nu)[:, :, None] * h
            q_err = q - est.q_hat
            cross.append(np.einsum("kln,kln->kl", q_err, est.q_hat.conj()))
            norm4.append(np.sum(np.abs(est.q_hat) ** 2, axis=2) ** 2)
        cls.cross = np.concatenate(cross).ravel()
        cls.norm4 = np.concatenate(norm4).ravel()
        cls.gamma = 0.8
        cls.n_draws = cls.cross.size

    def test_error_orthogonal_to_estimate(self):
        # E[q_err^T q_hat*] = 0; 3-sigma band from the second moment.
        m2 = 4 * self.gamma * (1 - self.gamma)
        band = 3 * np.sqrt(m2 / self.n_draws)
        assert abs(self.cross.mean()) < band * 2  # complex: both parts within band

    def test_cross_second_moment(self):
        expect = 4 * self.gamma * (1 - self.gamma)
        assert np.mean(np.abs(self.cross) ** 2) == pytest.approx(expect, rel=0.02)

    def test_norm_fourth_moment(self):
        expect = 4 * 5 * self.gamma ** 2
        assert np.mean(self.norm4) == pytest.approx(expect, rel=0.02)
