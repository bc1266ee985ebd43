import numpy as np
import pytest

from mmrelay.relay import MRC, ZF, alpha_closed, precoder_zf
from mmrelay.rates import (ModelViolationError, PosyTerms, BoundCoefficients, appendix_moment_check,
                           bound_coeffs, energy_efficiency, half_duplex_report, instantaneous_snr,
                           mc_ergodic_sum_rate, rate_report, snr_lower, spectral_efficiency,
                           total_power, user_energy_efficiency)
from mmrelay.sysmodel import (PowerAllocation, SystemConfig, draw_channels, estimate_channels,
                              hat_variances)


def rnd_cfg(K=2, N=32, seed=0, **kw):
    rng = np.random.default_rng(seed)
    args = dict(K=K, N=N, Du=rng.uniform(0.2, 2.0, 2 * K), Dd=rng.uniform(0.2, 2.0, 2 * K),
                P_rho=3.0, sigma_UI=0.4, sigma_LIR2=0.3, sigma_n2=0.8, sigma_nr2=1.3,
                Pt_max=100.0)
    args.update(kw)
    return SystemConfig(**args)


def rnd_alloc(M, seed=1, P_R=6.0):
    return PowerAllocation(np.random.default_rng(seed).uniform(0.2, 3.0, M), P_R)


# Independent per-user loop evaluation of the closed-form bounds, term by term.  Only valid when the
# user-interference variance is one scalar for every same-side pair.
def _hat(D, cfg):
    x = cfg.tau * cfg.P_rho
    h = x * D ** 2 / (x * D + cfg.sigma_nr2)
    return h, D - h


def loop_mrc_snr(cfg, p, PR, s_ui):
    M, N = 2 * cfg.K, cfg.N
    hg, _ = _hat(cfg.Du, cfg)
    hf, _ = _hat(cfg.Dd, cfg)
    sg, sf = cfg.Du, cfg.Dd
    sn, snr_, slir = cfg.sigma_n2, cfg.sigma_nr2, cfg.sigma_LIR2
    par = lambda i: i + 1 if i % 2 == 0 else i - 1
    Phi = sum(hg[i] * hf[par(i)] for i in range(M))
    out = np.zeros(M)
    for k in range(M):
        kp = par(k)
        U = [j for j in range(M) if j % 2 == k % 2]
        a = N ** 2 * hf[k] ** 2 * hg[kp] ** 2
        den = 0.0
        for i in range(M):
            X = Phi * sg[i] + N * hg[i] ** 2 * hf[par(i)]
            b1 = Phi * sf[k] * sg[i] + N * (sf[k] * hg[i] ** 2 * hf[par(i)] + sg[i] * hf[k] ** 2 * hg[kp])
            b2 = sn * X
            b3 = s_ui * X
            den += (b1 + b2 / PR + sum(p[j] for j in U) * b3 / PR) * p[i]
        c = -(Phi * hf[k] * hg[k] + N * (hf[k] ** 2 * hg[k] * hg[kp] + hf[k] * hg[k] ** 2 * hf[kp]))
        den += c * p[k]
        den += (slir * sn + snr_ * sf[k]) * Phi + N * snr_ * hf[k] ** 2 * hg[kp]
        den += slir * (sf[k] * Phi + N * hf[k] ** 2 * hg[kp]) * PR
        den += snr_ * sn * Phi / PR
        for i in U:
            den += p[i] * (snr_ * s_ui * Phi / PR + slir * s_ui * Phi)
        out[k] = a * p[kp] / den
    return out


def loop_zf_snr(cfg, p, PR, s_ui):
    # uses the real-valued constant N - 2K - 1 throughout
    M, N, K = 2 * cfg.K, cfg.N, cfg.K
    c = N - 2 * K - 1
    hg, xg = _hat(cfg.Du, cfg)
    hf, xf = _hat(cfg.Dd, cfg)
    sn, snr_, slir = cfg.sigma_n2, cfg.sigma_nr2, cfg.sigma_LIR2
    par = lambda i: i + 1 if i % 2 == 0 else i - 1
    eta = sum(1 / (c ** 2 * hf[j] * hg[par(j)]) for j in range(M))
    out = np.zeros(M)
    for k in range(M):
        kp = par(k)
        U = [j for j in range(M) if j % 2 == k % 2]
        den = 0.0
        for i in range(M):
            d1 = (xf[k] / hf[par(i)] + xg[i] / hg[kp]) / c + xf[k] * xg[i] * eta
            br = 1 / (c * hf[par(i)]) + eta * xg[i]
            den += (d1 + sn * br / PR + sum(p[j] for j in U) * s_ui * br / PR) * p[i]
        br = 1 / (c * hg[kp]) + xf[k] * eta
        den += snr_ * br + eta * slir * sn + slir * br * PR + eta * snr_ * sn / PR
        for i in U:
            den += p[i] * (eta * s_ui * slir + eta * s_ui * snr_ / PR)
        out[k] = p[kp] / den
    return out


class TestLoopOracle:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("K", [1, 3])
    def test_mrc(self, seed, K):
        cfg = rnd_cfg(K=K, N=40, seed=seed)
        al = rnd_alloc(cfg.M, seed=seed + 10)
        got = snr_lower(bound_coeffs(cfg, scheme=MRC), al)
        np.testing.assert_allclose(got, loop_mrc_snr(cfg, al.p, al.P_R, 0.4), rtol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("K", [1, 3])
    def test_zf_real_dof(self, seed, K):
        cfg = rnd_cfg(K=K, N=40, seed=seed, zf_dof="real")
        al = rnd_alloc(cfg.M, seed=seed + 20)
        got = snr_lower(bound_coeffs(cfg, scheme=ZF), al)
        np.testing.assert_allclose(got, loop_zf_snr(cfg, al.p, al.P_R, 0.4), rtol=1e-12)

    def test_zf_default_dof_differs(self):
        cfg = rnd_cfg(N=12)
        al = rnd_alloc(cfg.M)
        got = snr_lower(bound_coeffs(cfg, scheme=ZF), al)
        # complex constant N-2K is larger, so the bound is a bit more optimistic
        assert np.all(got > loop_zf_snr(cfg, al.p, al.P_R, 0.4))


class TestBoundProperties:
    def test_unit_a(self):
        cfg = SystemConfig(K=1, N=4, Du=np.ones(2), Dd=np.ones(2), P_rho=np.inf)
        co = bound_coeffs(cfg, scheme=MRC)
        np.testing.assert_allclose(co.a, 16.0)

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_zero_partner_power(self, scheme):
        cfg = rnd_cfg()
        p = np.ones(4)
        p[1] = 0.0
        snr = snr_lower(bound_coeffs(cfg, scheme=scheme), PowerAllocation(p, 3.0))
        assert snr[0] == 0.0 and snr[1] > 0

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_increasing_in_partner_power(self, scheme):
        cfg = rnd_cfg()
        co = bound_coeffs(cfg, scheme=scheme)
        al = rnd_alloc(4)
        base = snr_lower(co, al)
        for k in range(4):
            p = al.p.copy()
            p[k ^ 1] *= 1 + 1e-4
            assert snr_lower(co, PowerAllocation(p, al.P_R), k) > base[k]

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_large_relay_power_vanishes(self, scheme):
        cfg = rnd_cfg()
        co = bound_coeffs(cfg, scheme=scheme)
        p = np.ones(4)
        vals = [snr_lower(co, PowerAllocation(p, PR)).max() for PR in (1e2, 1e5, 1e8)]
        assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-5

    def test_zf_perfect_csi(self):
        cfg = rnd_cfg(P_rho=np.inf)
        co = bound_coeffs(cfg, scheme=ZF)
        np.testing.assert_array_equal(co.d1, 0.0)

    def test_coefficients_non_negative(self):
        for scheme in (MRC, ZF):
            t = bound_coeffs(rnd_cfg(K=3), scheme=scheme).terms
            for arr in (t.num, t.lin, t.linR, t.quad, t.const, t.rel, t.inv):
                assert np.all(arr >= 0)

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_pair_relabel(self, scheme):
        # swapping two pairs permutes the SNR vector the same way
        cfg = rnd_cfg(K=3, N=40)
        al = rnd_alloc(6)
        perm = np.array([2, 3, 0, 1, 4, 5])
        cfg2 = cfg.with_(Du=cfg.Du[perm], Dd=cfg.Dd[perm])
        s1 = snr_lower(bound_coeffs(cfg, scheme=scheme), al)
        s2 = snr_lower(bound_coeffs(cfg2, scheme=scheme), PowerAllocation(al.p[perm], al.P_R))
        np.testing.assert_allclose(s2, s1[perm], rtol=1e-12)

    def test_non_positive_denominator(self):
        z = np.zeros((2, 2))
        t = PosyTerms(np.ones(2), z, z, np.zeros((2, 2, 2)), np.zeros(2), np.zeros(2), np.zeros(2))
        co = BoundCoefficients(MRC, 4, 1, t)
        with pytest.raises(ModelViolationError):
            snr_lower(co, PowerAllocation(np.ones(2), 1.0))


class TestSEandEE:
    def test_full_training(self):
        cfg = rnd_cfg(tau=200)
        assert spectral_efficiency(cfg, None, np.ones(4)) == 0.0

    def test_unit_snr(self):
        cfg = rnd_cfg(K=5, tau=10)
        assert spectral_efficiency(cfg, None, np.ones(10)) == pytest.approx(9.5, rel=1e-14)

    def test_ee_examples(self):
        cfg = rnd_cfg(Pc=1.0)
        al = PowerAllocation(np.zeros(4), 0.0)
        assert energy_efficiency(cfg, al, 9.5) == pytest.approx(9.5)
        al = PowerAllocation(np.full(4, 0.25), 0.0)
        assert energy_efficiency(cfg, al, 9.5) == pytest.approx(4.75)
        assert energy_efficiency(cfg, al, 0.0) == 0.0
        with pytest.raises(ValueError):
            energy_efficiency(cfg, al, -1.0)

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_ee_times_power(self, scheme):
        cfg = rnd_cfg()
        al = rnd_alloc(4)
        se = spectral_efficiency(cfg, al, scheme)
        assert energy_efficiency(cfg, al, se) * total_power(cfg, al) == pytest.approx(se, rel=1e-14)

    def test_user_ee_sums_consistently(self):
        cfg = rnd_cfg()
        al = rnd_alloc(4)
        snr = snr_lower(bound_coeffs(cfg), al)
        # the per-user denominators partition the total power
        den = al.p + (al.P_R + cfg.Pc) / 4
        assert den.sum() == pytest.approx(total_power(cfg, al))
        np.testing.assert_allclose(user_energy_efficiency(cfg, al, snr) * den,
                                   cfg.prelog * np.log2(1 + snr))

    def test_report_csv(self):
        cfg = rnd_cfg()
        rep = rate_report(cfg, rnd_alloc(4), ZF)
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == "scheme,k,snr,rate,sum_se,total_power_mw,ee"
        assert len(lines) == 5
        assert float(lines[1].split(",")[4]) == rep.sum_se
        assert rep.sum_se == pytest.approx(cfg.prelog * rep.rate.sum())


class TestHalfDuplex:
    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_twice_when_no_interference(self, scheme):
        cfg = rnd_cfg(sigma_LIR2=0.0, sigma_UI=0.0)
        al = rnd_alloc(4)
        fd = rate_report(cfg, al, scheme)
        hd = half_duplex_report(cfg, al, scheme)
        assert fd.sum_se == pytest.approx(2 * hd.sum_se, rel=1e-14)

    def test_hd_removes_interference(self):
        cfg = rnd_cfg()
        al = rnd_alloc(4)
        full = half_duplex_report(cfg, al, MRC, prelog_half=False)
        assert full.sum_se > rate_report(cfg, al, MRC).sum_se


class TestInstantaneous:
    def test_zf_perfect_csi_noise_only(self):
        # perfect CSI, no loop or user interference: only the scaled user noise remains
        cfg = rnd_cfg(N=16, P_rho=np.inf, sigma_LIR2=0.0, sigma_UI=0.0, sigma_nr2=1.0)
        rng = np.random.default_rng(3)
        real = draw_channels(cfg, rng)
        est = estimate_channels(cfg, real, rng)
        W = precoder_zf(est.Ghat, est.Fhat)
        al = rnd_alloc(4)
        alpha = 0.7
        cfg0 = cfg.with_(sigma_nr2=1e-300)
        for k in range(4):
            got = instantaneous_snr(k, W, alpha, real, est, al, cfg0)
            assert got == pytest.approx(al.p[k ^ 1] * alpha ** 2 / cfg.sigma_n2, rel=1e-9)

    def test_zero_alpha(self):
        cfg = rnd_cfg(N=16)
        rng = np.random.default_rng(0)
        real = draw_channels(cfg, rng)
        est = estimate_channels(cfg, real, rng)
        assert instantaneous_snr(0, np.eye(16), 0.0, real, est, rnd_alloc(4), cfg) == 0.0

    def test_loop_term_isolated(self):
        # raising only the loop variance lowers the SNR
        cfg = rnd_cfg(N=16)
        rng = np.random.default_rng(1)
        real = draw_channels(cfg, rng)
        est = estimate_channels(cfg, real, rng)
        W = precoder_zf(est.Ghat, est.Fhat)
        al = rnd_alloc(4)
        s0 = instantaneous_snr(0, W, 0.5, real, est, al, cfg)
        real2 = type(real)(real.G, real.F, 2 * real.G_RR, real.Omega)
        assert instantaneous_snr(0, W, 0.5, real2, est, al, cfg) < s0


class TestMonteCarlo:
    def test_zero_powers(self):
        cfg = rnd_cfg()
        res = mc_ergodic_sum_rate(cfg, PowerAllocation(np.zeros(4), 1.0), MRC, 20, np.random.default_rng(0))
        assert res.sum_rate == 0.0

    def test_deterministic(self):
        cfg = rnd_cfg()
        al = rnd_alloc(4)
        a = mc_ergodic_sum_rate(cfg, al, ZF, 60, np.random.default_rng(4), chunk=25)
        b = mc_ergodic_sum_rate(cfg, al, ZF, 60, np.random.default_rng(4), chunk=25)
        assert a.sum_rate == b.sum_rate

    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_bound_below_exact(self, scheme):
        cfg = rnd_cfg(N=32)
        al = rnd_alloc(4)
        bound = np.log2(1 + snr_lower(bound_coeffs(cfg, scheme=scheme), al)).sum()
        res = mc_ergodic_sum_rate(cfg, al, scheme, 400, np.random.default_rng(5))
        assert bound <= res.sum_rate + 3 * res.stderr

    def test_ls_runs(self):
        cfg = rnd_cfg(N=16)
        res = mc_ergodic_sum_rate(cfg, rnd_alloc(4), MRC, 40, np.random.default_rng(1), method="LS")
        assert np.isfinite(res.sum_rate) and res.trials == 40

    def test_bad_trials(self):
        with pytest.raises(ValueError):
            mc_ergodic_sum_rate(rnd_cfg(), rnd_alloc(4), MRC, 0, np.random.default_rng(0))


class TestMomentIdentities:
    @pytest.mark.parametrize("scheme", [MRC, ZF])
    def test_all_rows_within_band(self, scheme):
        cfg = rnd_cfg(N=24)
        rows = appendix_moment_check(cfg, scheme, 4000, np.random.default_rng(11), alloc=rnd_alloc(4))
        assert len(rows) == 10
        bad = [(r.identity, round(r.z, 2)) for r in rows if not r.ok]
        assert not bad, bad

    def test_alpha_consistent_with_relay_power(self):
        cfg = rnd_cfg(N=24)
        al = rnd_alloc(4)
        rows = {r.identity: r for r in appendix_moment_check(cfg, MRC, 10, np.random.default_rng(0), alloc=al)}
        den = sum(rows[n].closed_form for n in ("E||W G x||^2", "E||W G_RR x_R||^2", "E||W z_R||^2"))
        a = alpha_closed(cfg, hat_variances(cfg), al, MRC)
        assert a ** 2 * den == pytest.approx(al.P_R, rel=1e-12)
