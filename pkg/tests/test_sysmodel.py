import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmrelay.sysmodel import (PAPER_DD, PAPER_DU, ConfigError, PowerAllocation, SystemConfig,
                              db2lin, dft_pilots, draw_channels, draw_estimated, estimate_channels,
                              hat_variances, lin2db, pair_partner, paper_config, partner_index,
                              same_side_mask, ui_matrix)


def small_cfg(**kw):
    args = dict(K=2, N=16, Du=np.array([1.0, 0.5, 0.25, 2.0]), Dd=np.array([0.3, 1.0, 0.7, 1.5]),
                P_rho=10.0, sigma_UI=0.5)
    args.update(kw)
    return SystemConfig(**args)


class TestPairing:
    def test_examples(self):
        assert pair_partner(1) == 2
        assert pair_partner(4) == 3

    @given(st.integers(1, 400))
    def test_involution(self, k):
        assert pair_partner(pair_partner(k)) == k
        assert pair_partner(k) != k

    @pytest.mark.parametrize("k", [0, -1, 11])
    def test_out_of_range(self, k):
        with pytest.raises(IndexError):
            pair_partner(k, K=5)

    def test_zero_based_permutation_matches(self):
        pi = partner_index(5)
        for k in range(10):
            assert pi[k] == pair_partner(k + 1) - 1

    def test_same_side_mask(self):
        m = same_side_mask(3)
        assert m.shape == (6, 6)
        assert np.all(np.diag(m))
        # partners sit on opposite sides
        assert not np.any(m[np.arange(6), partner_index(3)])
        np.testing.assert_array_equal(ui_matrix(3, 2.0), 2.0 * m)


class TestSystemConfig:
    def test_defaults(self):
        cfg = small_cfg()
        assert cfg.tau == 4 and cfg.M == 4
        assert cfg.prelog == pytest.approx(1 - 4 / 200)
        np.testing.assert_array_equal(cfg.sigma_UI, ui_matrix(2, 0.5))

    def test_paper_config_units(self):
        cfg = paper_config(N=128, eta_db=10)
        np.testing.assert_array_equal(cfg.Du, PAPER_DU)
        np.testing.assert_array_equal(cfg.Dd, PAPER_DD)
        assert cfg.P_max == pytest.approx(10.0)
        assert cfg.PR_max == pytest.approx(10 ** 2.3)
        assert cfg.Pc == pytest.approx(1000.0)
        assert cfg.eta == pytest.approx(10.0)
        assert cfg.tau == 10 and cfg.T == 200

    def test_db_roundtrip(self):
        x = np.array([-30.0, 0.0, 17.5])
        np.testing.assert_allclose(lin2db(db2lin(x)), x, atol=1e-12)

    @pytest.mark.parametrize("kw", [
        dict(K=0, Du=np.ones(0), Dd=np.ones(0)),
        dict(Du=np.ones(3)),
        dict(Du=np.array([1.0, -1.0, 1.0, 1.0])),
        dict(tau=300),
        dict(Pc=0.0),
        dict(P_rho=0.0),
        dict(sigma_LIR2=-1.0),
        dict(sigma_UI=np.ones((4, 4))),
        dict(zf_dof="quaternion"),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            small_cfg(**kw)

    def test_zf_guard_and_constant(self):
        assert small_cfg(N=16).zf_constant() == 12
        assert small_cfg(N=16, zf_dof="real").zf_constant() == 11
        with pytest.raises(ConfigError):
            small_cfg(N=5).zf_constant()

    def test_short_pilots_rejected(self):
        cfg = small_cfg(tau=3)
        real = draw_channels(cfg, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            estimate_channels(cfg, real, np.random.default_rng(1))

    def test_allocation_violations(self):
        cfg = small_cfg()
        assert PowerAllocation(np.full(4, 1.0), 2.0).is_feasible(cfg)
        assert "total power exceeded" in PowerAllocation(np.full(4, 2.0), 5.0).violations(cfg)
        assert "user peak power exceeded" in PowerAllocation(np.array([11.0, 0, 0, 0]), 0.0).violations(cfg)


class TestHatVariances:
    def test_symmetric_half(self):
        # tau * P_rho = 1 and unit fading gives an even split
        cfg = small_cfg(Du=np.ones(4), Dd=np.ones(4), P_rho=0.25)
        hv = hat_variances(cfg)
        np.testing.assert_allclose(hv.g, 0.5)
        np.testing.assert_allclose(hv.xi_g, 0.5)

    def test_noiseless_limit(self):
        cfg = small_cfg(P_rho=np.inf)
        hv = hat_variances(cfg)
        np.testing.assert_array_equal(hv.g, cfg.Du)
        np.testing.assert_array_equal(hv.xi_f, 0.0)

    def test_extended_precision(self):
        # oracle: mpmath evaluation at 50 digits
        mpmath.mp.dps = 50
        s2, tau, prho = mpmath.mpf("0.749"), 10, 100
        ref = tau * prho * s2 ** 2 / (tau * prho * s2 + 1)
        cfg = paper_config(K=5, P_rho_dbm=20.0)
        hv = hat_variances(cfg)
        assert hv.g[0] == pytest.approx(float(ref), rel=1e-14)
        assert hv.xi_g[0] == pytest.approx(float(s2 - ref), rel=1e-12)

    @given(st.lists(st.floats(1e-4, 1e3), min_size=4, max_size=4), st.floats(1e-3, 1e4))
    @settings(max_examples=60)
    def test_decomposition(self, d, prho):
        cfg = small_cfg(Du=np.array(d), P_rho=prho)
        hv = hat_variances(cfg)
        np.testing.assert_allclose(hv.g + hv.xi_g, cfg.Du, rtol=1e-14)
        np.testing.assert_allclose(hv.f + hv.xi_f, cfg.Dd, rtol=1e-14)
        assert np.all(hv.g >= 0) and np.all(hv.xi_g >= 0)


class TestDrawChannels:
    def test_shapes_and_determinism(self):
        cfg = small_cfg()
        a = draw_channels(cfg, np.random.default_rng(5))
        b = draw_channels(cfg, np.random.default_rng(5))
        assert a.G.shape == (16, 4) and a.G_RR.shape == (16, 16) and a.Omega.shape == (4, 4)
        for x, y in zip((a.G, a.F, a.G_RR, a.Omega), (b.G, b.F, b.G_RR, b.Omega)):
            np.testing.assert_array_equal(x, y)

    def test_zero_column(self):
        cfg = small_cfg(Du=np.array([1.0, 0.0, 1.0, 1.0]))
        real = draw_channels(cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(real.G[:, 1], 0.0)

    def test_omega_off_mask_zero(self):
        real = draw_channels(small_cfg(), np.random.default_rng(0), batch=(50,))
        assert np.all(real.Omega[:, ~same_side_mask(2)] == 0)

    def test_second_moments(self):
        # MC oracle: per-column mean of |G_nk|^2 within 3 SE of the configured variance
        cfg = small_cfg(N=4)
        real = draw_channels(cfg, np.random.default_rng(2), batch=(25000,))
        for arr, var in ((real.G, cfg.Du), (real.F, cfg.Dd)):
            x = np.abs(arr) ** 2
            x = x.reshape(-1, cfg.M)
            mean = x.mean(axis=0)
            se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
            assert np.all(np.abs(mean - var) < 3 * se), (mean, var)
        x = (np.abs(real.G_RR) ** 2).ravel()
        assert abs(x.mean() - cfg.sigma_LIR2) < 3 * x.std() / np.sqrt(x.size)

    def test_circular(self):
        real = draw_channels(small_cfg(N=8), np.random.default_rng(3), batch=(20000,))
        g = real.G[..., 0].ravel()
        # E[g^2] = 0 for circular symmetry
        assert abs(np.mean(g ** 2)) < 4 * np.sqrt(2.0) / np.sqrt(g.size)


class TestEstimation:
    def test_dft_pilots_orthonormal(self):
        phi = dft_pilots(3, 8)
        np.testing.assert_allclose(phi @ phi.conj().T, np.eye(6), atol=1e-12)

    @pytest.mark.parametrize("mode", ["pilot-sim", "statistical"])
    def test_mmse_variance(self, mode):
        cfg = small_cfg(N=4, P_rho=0.5)
        hv = hat_variances(cfg)
        rng = np.random.default_rng(11)
        real = draw_channels(cfg, rng, batch=(20000,))
        est = estimate_channels(cfg, real, rng, mode=mode)
        for H, Hh, v, xi in ((real.G, est.Ghat, hv.g, hv.xi_g), (real.F, est.Fhat, hv.f, hv.xi_f)):
            x = (np.abs(Hh) ** 2).reshape(-1, cfg.M)
            se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
            assert np.all(np.abs(x.mean(axis=0) - v) < 3 * se)
            e = (np.abs(H - Hh) ** 2).reshape(-1, cfg.M)
            se = e.std(axis=0, ddof=1) / np.sqrt(e.shape[0])
            assert np.all(np.abs(e.mean(axis=0) - xi) < 3 * se)
            # orthogonality: E[Hhat^* (H - Hhat)] = 0
            c = (Hh.conj() * (H - Hh)).reshape(-1, cfg.M)
            assert np.all(np.abs(c.mean(axis=0)) < 4 * np.sqrt(v * xi / c.shape[0]) + 1e-12)

    def test_modes_agree(self):
        # two-sample comparison of E|Ghat|^2 between modes
        cfg = small_cfg(N=4, P_rho=0.2)
        out = []
        for mode, seed in (("pilot-sim", 1), ("statistical", 2)):
            rng = np.random.default_rng(seed)
            real = draw_channels(cfg, rng, batch=(15000,))
            x = (np.abs(estimate_channels(cfg, real, rng, mode=mode).Ghat) ** 2).reshape(-1, cfg.M)
            out.append((x.mean(axis=0), x.var(axis=0, ddof=1) / x.shape[0]))
        (m1, v1), (m2, v2) = out
        assert np.all(np.abs(m1 - m2) < 3 * np.sqrt(v1 + v2))

    def test_noiseless_limit(self):
        cfg = small_cfg(P_rho=np.inf)
        rng = np.random.default_rng(0)
        real = draw_channels(cfg, rng)
        for mode in ("pilot-sim", "statistical"):
            est = estimate_channels(cfg, real, rng, mode=mode)
            np.testing.assert_allclose(est.Ghat, real.G, atol=1e-12)
            np.testing.assert_allclose(est.Fhat, real.F, atol=1e-12)

    def test_ls_error_variance(self):
        cfg = small_cfg(N=4, P_rho=0.5)
        rng = np.random.default_rng(4)
        real = draw_channels(cfg, rng, batch=(20000,))
        est = estimate_channels(cfg, real, rng, method="LS")
        nu = cfg.sigma_nr2 / (cfg.tau * cfg.P_rho)
        np.testing.assert_allclose(est.sig_xi_g2, nu)
        e = (np.abs(real.G - est.Ghat) ** 2).reshape(-1, cfg.M)
        se = e.std(axis=0, ddof=1) / np.sqrt(e.shape[0])
        assert np.all(np.abs(e.mean(axis=0) - nu) < 3 * se)

    def test_bad_method(self):
        cfg = small_cfg()
        real = draw_channels(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            estimate_channels(cfg, real, np.random.default_rng(0), method="ML")

    def test_draw_estimated_consistent(self):
        cfg = small_cfg()
        real, est = draw_estimated(cfg, np.random.default_rng(9), batch=(3,))
        assert real.G.shape == est.Ghat.shape == (3, 16, 4)
        real2, est2 = draw_estimated(cfg, np.random.default_rng(9), batch=(3,))
        np.testing.assert_array_equal(real.G, real2.G)
