"""Achievable rates: closed-form lower bounds, Monte-Carlo exact rates, SE and EE."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .relay import (MRC, ZF, PrecoderMatrix, alpha_closed, canon_scheme, eta_hat, lambda_hat,
                    phi_hat, precoder_factors, relay_power_terms, _h)
from .sysmodel import (ChannelEstimate, ChannelRealization, HatVariances, PowerAllocation,
                       SystemConfig, draw_channels, draw_estimated, estimate_channels,
                       hat_variances, partner_index)


class ModelViolationError(ArithmeticError):
    """Closed-form SNR denominator is not positive."""


@dataclass(frozen=True)
class PosyTerms:
    """SNR_k = num_k p_k' / den_k with

    den_k = sum_i lin[k,i] p_i + sum_i linR[k,i] p_i / P_R
            + sum_ij quad[k,i,j] p_i p_j / P_R + const[k] + rel[k] P_R + inv[k] / P_R.

    All coefficients are non-negative, so each den_k is a posynomial in (p, P_R).
    """
    num: np.ndarray
    lin: np.ndarray
    linR: np.ndarray
    quad: np.ndarray
    const: np.ndarray
    rel: np.ndarray
    inv: np.ndarray

    def den(self, p: np.ndarray, P_R: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = self.lin @ p + self.const + self.rel * P_R
        if P_R > 0:
            out = out + (self.linR @ p + np.einsum("kij,i,j->k", self.quad, p, p) + self.inv) / P_R
        elif np.any(self.inv > 0) or np.any(self.linR > 0) or np.any(self.quad > 0):
            out = out + np.inf
        return out


@dataclass(frozen=True)
class BoundCoefficients:
    scheme: str
    N: int
    K: int
    terms: PosyTerms
    named: dict = field(default_factory=dict)

    def __getattr__(self, name):
        named = self.__dict__.get("named", {})
        if name in named:
            return named[name]
        raise AttributeError(name)


def bound_coeffs(cfg: SystemConfig, hv: HatVariances | None = None, scheme: str = MRC) -> BoundCoefficients:
    """Assemble the lower-bound constants of either scheme.

    Index convention: b3[k, i, j] multiplies p_i p_j / P_R with j in U_k, and
    the same for the ZF d3.
    """
    scheme = canon_scheme(scheme)
    hv = hat_variances(cfg) if hv is None else hv
    K, M, N = cfg.K, cfg.M, cfg.N
    pi = partner_index(K)
    s_g, s_f = cfg.Du, cfg.Dd
    h_g, h_f, x_g, x_f = hv
    S = cfg.sigma_UI
    sn, snr_, slir = cfg.sigma_n2, cfg.sigma_nr2, cfg.sigma_LIR2

    if scheme == MRC:
        Phi = phi_hat(hv)
        a = N ** 2 * h_f ** 2 * h_g[pi] ** 2
        # rows k, columns i
        b1 = (Phi * np.outer(s_f, s_g)
              + N * (np.outer(s_f, h_g ** 2 * h_f[pi]) + np.outer(h_f ** 2 * h_g[pi], s_g)))
        X = Phi * s_g + N * h_g ** 2 * h_f[pi]
        b2 = sn * np.tile(X, (M, 1))
        b3 = S[:, None, :] * X[None, :, None]
        c = -(Phi * h_f * h_g + N * (h_f ** 2 * h_g * h_g[pi] + h_f * h_g ** 2 * h_f[pi]))
        d1 = (slir * sn + snr_ * s_f) * Phi + N * snr_ * h_f ** 2 * h_g[pi]
        d2 = slir * (s_f * Phi + N * h_f ** 2 * h_g[pi])
        d3 = np.full(M, snr_ * sn * Phi)
        e1 = snr_ * S * Phi
        e2 = slir * S * Phi
        lin = b1 + np.diag(c) + e2
        merged = np.diag(lin).copy()
        scale = np.maximum(np.diag(b1), 1e-300)
        if np.any(merged < -1e-9 * scale):
            raise ModelViolationError("merged self-interference coefficient b1_kk + c_k is negative")
        lin[np.diag_indices(M)] = np.maximum(merged, 0.0)
        terms = PosyTerms(a, lin, b2 + e1, b3, d1, d2, d3)
        named = dict(a=a, b1=b1, b2=b2, b3=b3, c=c, d1=d1, d2=d2, d3=d3, e1=e1, e2=e2,
                     Phi_hat=Phi)
    else:
        cc = cfg.zf_constant()
        eta = eta_hat(cfg, hv)
        lam_coef = 1.0 / (cc * h_f[pi])  # lambda_hat = sum_i p_i * lam_coef[i]
        u = np.ones(M)
        zd1 = (np.add.outer(x_f, np.zeros(M)) / (cc * h_f[pi])[None, :]
               + np.outer(1.0 / (cc * h_g[pi]), x_g)
               + eta * np.outer(x_f, x_g))
        Y = lam_coef + eta * x_g
        zd2 = sn * np.tile(Y, (M, 1))
        zd3 = S[:, None, :] * Y[None, :, None]
        bracket = 1.0 / (cc * h_g[pi]) + x_f * eta
        v1 = snr_ * bracket + eta * slir * sn
        v2 = slir * bracket
        v3 = np.full(M, eta * snr_ * sn)
        w1 = eta * S * slir
        w2 = eta * S * snr_
        terms = PosyTerms(u, zd1 + w1, zd2 + w2, zd3, v1, v2, v3)
        named = dict(u=u, d1=zd1, d2=zd2, d3=zd3, v1=v1, v2=v2, v3=v3, w1=w1, w2=w2,
                     eta_hat=eta, lambda_coef=lam_coef)
    return BoundCoefficients(scheme, N, K, terms, named)


def snr_lower(coeffs: BoundCoefficients, alloc: PowerAllocation, k: int | None = None):
    """Closed-form SNR lower bound of user k (0-based), or all users if k is None."""
    t = coeffs.terms
    p = alloc.p
    pi = partner_index(coeffs.K)
    den = t.den(p, alloc.P_R)
    if np.any(~(den > 0)):
        bad = np.flatnonzero(~(den > 0)).tolist()
        raise ModelViolationError(f"non-positive SNR denominator for users {bad}")
    snr = t.num * p[pi] / den
    return snr if k is None else float(snr[k])


def _prelog(cfg: SystemConfig, half_duplex: bool = False) -> float:
    return cfg.prelog * (0.5 if half_duplex else 1.0)


def spectral_efficiency(cfg: SystemConfig, alloc: PowerAllocation | None, scheme_or_snr,
                        half_duplex: bool = False) -> float:
    """(1 - tau/T) sum_k log2(1 + SNR_k); SNRs from the bound if a scheme is given."""
    if isinstance(scheme_or_snr, str):
        snr = snr_lower(bound_coeffs(cfg, scheme=scheme_or_snr), alloc)
    else:
        snr = np.asarray(scheme_or_snr, dtype=float)
    return float(_prelog(cfg, half_duplex) * np.sum(np.log2(1.0 + snr)))


def total_power(cfg: SystemConfig, alloc: PowerAllocation) -> float:
    return float(alloc.p.sum() + alloc.P_R + cfg.Pc)


def energy_efficiency(cfg: SystemConfig, alloc: PowerAllocation, SE: float) -> float:
    """SE / (sum p + P_R + P_c), in bits/Hz per unit of the internal power scale (mW)."""
    if SE < 0:
        raise ValueError("SE must be non-negative")
    return float(SE / total_power(cfg, alloc))


def user_energy_efficiency(cfg: SystemConfig, alloc: PowerAllocation, snr: np.ndarray) -> np.ndarray:
    """Per-user EE with the even split p_k + (P_R + P_c)/2K of shared power."""
    den = alloc.p + (alloc.P_R + cfg.Pc) / cfg.M
    return cfg.prelog * np.log2(1.0 + snr) / den


@dataclass(frozen=True)
class RateReport:
    scheme: str
    snr: np.ndarray
    rate: np.ndarray
    sum_se: float
    total_power: float
    ee: float
    half_duplex: bool = False

    def rows(self) -> list[dict]:
        return [dict(scheme=self.scheme, k=k + 1, snr=float(s), rate=float(r), sum_se=self.sum_se,
                     total_power_mw=self.total_power, ee=self.ee)
                for k, (s, r) in enumerate(zip(self.snr, self.rate))]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["scheme", "k", "snr", "rate", "sum_se", "total_power_mw", "ee"],
                           lineterminator="\n")
        if header:
            w.writeheader()
        for r in self.rows():
            w.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.items()})
        return buf.getvalue()


def rate_report(cfg: SystemConfig, alloc: PowerAllocation, scheme: str, half_duplex: bool = False,
                snr: np.ndarray | None = None) -> RateReport:
    """Per-user rates (log2(1+SNR), no pre-log), sum SE and EE at ``alloc``."""
    scheme = canon_scheme(scheme)
    if snr is None:
        snr = snr_lower(bound_coeffs(cfg, scheme=scheme), alloc)
    se = spectral_efficiency(cfg, alloc, snr, half_duplex=half_duplex)
    return RateReport(scheme, np.asarray(snr, dtype=float), np.log2(1.0 + snr), se,
                      total_power(cfg, alloc), energy_efficiency(cfg, alloc, se), half_duplex)


def half_duplex_config(cfg: SystemConfig) -> SystemConfig:
    """Same scenario with the relay loop and user-side interference removed."""
    return cfg.with_(sigma_LIR2=0.0, sigma_UI=np.zeros_like(cfg.sigma_UI))


def half_duplex_report(cfg: SystemConfig, alloc: PowerAllocation, scheme: str,
                       prelog_half: bool = True) -> RateReport:
    """Bound-based report of the half-duplex counterpart (1/2 pre-log unless disabled)."""
    return rate_report(half_duplex_config(cfg), alloc, scheme, half_duplex=prelog_half)


# ----------------------------------------------------------------------------- Monte Carlo

def composite_gains(pre: PrecoderMatrix, F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """F^T W G, a (batched) 2K x 2K matrix, entry (k, i) = f_k^T W g_i."""
    return (np.swapaxes(F, -1, -2) @ pre.left) @ (pre.right @ G)


def _snr_from_channels(pre: PrecoderMatrix, alpha, real: ChannelRealization, est: ChannelEstimate,
                       alloc: PowerAllocation, cfg: SystemConfig) -> np.ndarray:
    p, M = alloc.p, cfg.M
    pi = partner_index(cfg.K)
    C = composite_gains(pre, real.F, real.G)
    Ch = composite_gains(pre, est.Fhat, est.Ghat)
    idx = np.arange(M)
    desired = p[pi] * np.abs(C[..., idx, pi]) ** 2
    lam = C[..., idx, idx] - Ch[..., idx, idx]
    power = np.abs(C) ** 2 * p
    ip = power.sum(axis=-1) - power[..., idx, idx] - power[..., idx, pi]
    fW = np.swapaxes(real.F, -1, -2) @ pre.left @ pre.right  # 2K x N
    loop = np.sum(np.abs(fW @ real.G_RR) ** 2, axis=-1) * alloc.P_R / cfg.N
    nr = np.sum(np.abs(fW) ** 2, axis=-1) * cfg.sigma_nr2
    ui = cfg.sigma_UI @ p + cfg.sigma_n2
    alpha = np.asarray(alpha, dtype=float)
    a2 = alpha[..., None] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        den = p * np.abs(lam) ** 2 + ip + loop + nr + ui / a2
        snr = np.where(a2 > 0, desired / den, 0.0)
    return np.nan_to_num(snr, nan=0.0)


def instantaneous_snr(k: int, W: np.ndarray, alpha: float, real: ChannelRealization,
                      est: ChannelEstimate, alloc: PowerAllocation, cfg: SystemConfig) -> float:
    """Exact SNR of user k (0-based) for one channel realization and relay matrix W."""
    if alpha == 0:
        return 0.0
    p = alloc.p
    kp = k ^ 1
    fW = real.F[:, k] @ W
    gains = fW @ real.G
    desired = p[kp] * abs(gains[kp]) ** 2
    lam = gains[k] - est.Fhat[:, k] @ W @ est.Ghat[:, k]
    mask = np.ones(cfg.M, bool)
    mask[[k, kp]] = False
    ip = float(np.sum(p[mask] * np.abs(gains[mask]) ** 2))
    loop = float(np.sum(np.abs(fW @ real.G_RR) ** 2)) * alloc.P_R / cfg.N
    nr = float(np.sum(np.abs(fW) ** 2)) * cfg.sigma_nr2
    ui = float(cfg.sigma_UI[k] @ p) + cfg.sigma_n2
    den = p[k] * abs(lam) ** 2 + ip + loop + nr + ui / alpha ** 2
    return float(desired / den) if den > 0 else 0.0


class MCResult(NamedTuple):
    sum_rate: float
    stderr: float
    user_rates: np.ndarray
    user_stderr: np.ndarray
    trials: int


def _chunks(trials: int, chunk: int):
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        yield n
        done += n


def mc_ergodic_sum_rate(cfg: SystemConfig, alloc: PowerAllocation, scheme: str, trials: int,
                        rng: np.random.Generator, method: str = "MMSE", mode: str = "statistical",
                        chunk: int = 50) -> MCResult:
    """Monte-Carlo E[sum_k log2(1 + SNR_k)] with its standard error (no pre-log).

    Trials run in fixed-size chunks, each on its own child stream of ``rng``,
    so results depend only on (cfg, alloc, seed, chunk).  The amplification
    factor is the closed form for MMSE; for LS it is the ensemble value
    estimated from the same draws.
    """
    scheme = canon_scheme(scheme)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hv = hat_variances(cfg)
    method = method.upper()
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(-(-trials // chunk))
    draws = []
    powers = []
    for n, ss in zip(_chunks(trials, chunk), seeds):
        r = np.random.default_rng(ss)
        if method == "MMSE" and mode == "statistical":
            real, est = draw_estimated(cfg, r, batch=(n,))
        else:
            real = draw_channels(cfg, r, batch=(n,))
            est = estimate_channels(cfg, real, r, method=method, mode="pilot-sim")
        pre = precoder_factors(est.Ghat, est.Fhat, scheme)
        draws.append((pre, real, est))
        if method == "LS":
            powers.append(relay_power_terms(pre, real, cfg, alloc).sum(axis=-1))
    if method == "LS":
        den = float(np.mean(np.concatenate(powers)))
        alpha = np.sqrt(alloc.P_R / den) if den > 0 else 0.0
    else:
        alpha = alpha_closed(cfg, hv, alloc, scheme)
    rates = np.concatenate([np.log2(1.0 + _snr_from_channels(pre, np.full(pre.left.shape[:-2], alpha),
                                                             real, est, alloc, cfg))
                            for pre, real, est in draws])
    tot = rates.sum(axis=1)
    n = len(tot)
    se = float(tot.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    use = rates.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(cfg.M, np.nan)
    return MCResult(float(tot.mean()), se, rates.mean(axis=0), use, n)


# ------------------------------------------------------------------- moment identities

class MomentRow(NamedTuple):
    identity: str
    closed_form: float
    mc_value: float
    stderr: float

    @property
    def z(self) -> float:
        if self.stderr > 0:
            return abs(self.mc_value - self.closed_form) / self.stderr
        return 0.0 if np.isclose(self.mc_value, self.closed_form, rtol=1e-9, atol=1e-12) else np.inf

    @property
    def ok(self) -> bool:
        return self.z <= 3.0


def appendix_closed_forms(cfg: SystemConfig, scheme: str, alloc: PowerAllocation, k: int = 0) -> dict:
    """Closed-form values of the moment identities for user k (0-based)."""
    scheme = canon_scheme(scheme)
    hv = hat_variances(cfg)
    co = bound_coeffs(cfg, hv, scheme)
    N, p, PR = cfg.N, alloc.p, alloc.P_R
    kp = k ^ 1
    others = [i for i in range(cfg.M) if i not in (k, kp)]
    pi = partner_index(cfg.K)
    if scheme == MRC:
        s = N ** 2
        Phi = co.Phi_hat
        mean = N ** 2 * hv.f[k] * hv.g[kp]
        fw2 = N ** 2 * (N * hv.f[k] ** 2 * hv.g[kp] + cfg.Dd[k] * Phi)
        Psi = float(np.sum(p * cfg.Du))
        Ups = float(np.sum(p * hv.g ** 2 * hv.f[pi]))
        relay_x = N ** 2 * Psi * Phi + N ** 3 * Ups
        wf2 = N ** 2 * Phi
        var = s * co.b1[k, kp]
        si = s * (co.b1[k, k] + co.c[k])
        ip = s * float(np.sum(co.b1[k, others] * p[others]))
    else:
        c = cfg.zf_constant()
        eta = co.eta_hat
        mean = 1.0
        fw2 = 1.0 / (c * hv.g[kp]) + hv.xi_f[k] * eta
        relay_x = lambda_hat(cfg, hv, p) + eta * float(np.sum(p * hv.xi_g))
        wf2 = eta
        var = co.d1[k, kp]
        si = co.d1[k, k]
        ip = float(np.sum(co.d1[k, others] * p[others]))
    return {
        "E[f_k^T W g_k']": mean,
        "var[f_k^T W g_k']": var,
        "SI_k": si,
        "IP_k": ip,
        "NR_k": cfg.sigma_nr2 * fw2,
        "LIR_k": PR * cfg.sigma_LIR2 * fw2,
        "E||W G x||^2": relay_x,
        "E||W G_RR x_R||^2": PR * cfg.sigma_LIR2 * wf2,
        "E||W z_R||^2": cfg.sigma_nr2 * wf2,
        "tr E[W W^H]": wf2,
    }


def appendix_moment_check(cfg: SystemConfig, scheme: str, trials: int, rng: np.random.Generator,
                          alloc: PowerAllocation | None = None, k: int = 0,
                          chunk: int = 200) -> list[MomentRow]:
    """Monte-Carlo check of the ten closed-form moment identities for user k.

    The last row is ||W||_F^2, which for ZF equals tr(Lambda_F^* T Lambda_G T).
    """
    scheme = canon_scheme(scheme)
    if alloc is None:
        alloc = PowerAllocation(np.full(cfg.M, cfg.P_max / 2), cfg.PR_max / 2)
    closed = appendix_closed_forms(cfg, scheme, alloc, k)
    p, PR = alloc.p, alloc.P_R
    kp = k ^ 1
    others = np.array([i for i in range(cfg.M) if i not in (k, kp)], dtype=int)
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(-(-trials // chunk))
    cols: dict[str, list] = {name: [] for name in closed}
    mean_parts = []
    for n, ss in zip(_chunks(trials, chunk), seeds):
        real, est = draw_estimated(cfg, np.random.default_rng(ss), batch=(n,))
        pre = precoder_factors(est.Ghat, est.Fhat, scheme)
        C = composite_gains(pre, real.F, real.G)
        Ch = composite_gains(pre, est.Fhat, est.Ghat)
        fW = np.swapaxes(real.F[..., k:k + 1], -1, -2) @ pre.left @ pre.right  # n x 1 x N
        fw2 = np.sum(np.abs(fW[:, 0]) ** 2, axis=-1)
        loop = np.sum(np.abs((fW @ real.G_RR)[:, 0]) ** 2, axis=-1) * PR / cfg.N
        rp = relay_power_terms(pre, real, cfg, alloc)
        wf2 = np.real(np.trace((_h(pre.left) @ pre.left) @ (pre.right @ _h(pre.right)), axis1=-2, axis2=-1))
        g = C[:, k, kp]
        mean_parts.append(g)
        cols["E[f_k^T W g_k']"].append(np.real(g))
        cols["SI_k"].append(np.abs(C[:, k, k] - Ch[:, k, k]) ** 2)
        cols["IP_k"].append(np.sum(np.abs(C[:, k, others]) ** 2 * p[others], axis=-1))
        cols["NR_k"].append(fw2 * cfg.sigma_nr2)
        cols["LIR_k"].append(loop)
        cols["E||W G x||^2"].append(rp[:, 0])
        cols["E||W G_RR x_R||^2"].append(rp[:, 1])
        cols["E||W z_R||^2"].append(rp[:, 2])
        cols["tr E[W W^H]"].append(wf2)
    g = np.concatenate(mean_parts)
    n = len(g)
    # variance about the closed-form mean; SE from the delta method on |g - mu|^2
    dev2 = np.abs(g - g.mean()) ** 2 * n / (n - 1)
    cols["var[f_k^T W g_k']"] = [dev2]
    rows = []
    for name, value in closed.items():
        x = np.concatenate(cols[name])
        rows.append(MomentRow(name, float(value), float(x.mean()), float(x.std(ddof=1) / np.sqrt(n))))
    return rows
