"""Relay processing: pair-swap map, MRC/MRT and ZF precoders, amplification factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sysmodel import (ChannelRealization, ConfigError, HatVariances, PowerAllocation,
                       SystemConfig, crandn, partner_index)

MRC = "MRC_MRT"
ZF = "ZF"
SCHEMES = (MRC, ZF)
COND_LIMIT = 1e12


class DegenerateChannelError(np.linalg.LinAlgError):
    """Gram matrix too ill-conditioned for zero-forcing."""


def canon_scheme(scheme: str) -> str:
    s = str(scheme).upper().replace("/", "_")
    if s in ("MRC", "MRT", "MRC_MRT", "MR"):
        return MRC
    if s in ("ZF", "ZFR_ZFT", "ZFR", "ZFT"):
        return ZF
    raise ValueError(f"unknown scheme {scheme!r}")


def permutation_map(K: int) -> np.ndarray:
    """Block-diagonal 2K x 2K pair-swap matrix T."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return np.kron(np.eye(K), np.array([[0.0, 1.0], [1.0, 0.0]]))


def _h(A):
    return np.swapaxes(A, -1, -2).conj()


@dataclass(frozen=True)
class PrecoderMatrix:
    """W = left @ right with left N x 2K and right 2K x N (batched on leading axes)."""
    left: np.ndarray
    right: np.ndarray
    scheme: str
    alpha: float = 1.0

    @property
    def W(self) -> np.ndarray:
        return self.left @ self.right

    def scaled(self, alpha: float) -> "PrecoderMatrix":
        if not (alpha > 0 and np.isfinite(alpha)):
            raise ValueError("alpha must be positive and finite")
        return PrecoderMatrix(self.left, self.right, self.scheme, float(alpha))


def _check_shapes(Ghat, Fhat):
    if Ghat.shape != Fhat.shape or Ghat.ndim < 2 or Ghat.shape[-1] % 2:
        raise ValueError(f"Ghat/Fhat must both be N x 2K, got {Ghat.shape} and {Fhat.shape}")


def mrc_factors(Ghat, Fhat) -> PrecoderMatrix:
    _check_shapes(Ghat, Fhat)
    perm = partner_index(Ghat.shape[-1] // 2)
    # F^* T: column k of the product is column k' of F^*
    return PrecoderMatrix(Fhat.conj()[..., perm], _h(Ghat), MRC)


def _pinv_cols(A: np.ndarray) -> np.ndarray:
    """A (A^H A)^-1 via Cholesky, with a condition-number guard."""
    gram = _h(A) @ A
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise DegenerateChannelError(f"Gram matrix condition number {np.max(cond):.3g} exceeds {COND_LIMIT:g}")
    L = np.linalg.cholesky(gram)
    eye = np.broadcast_to(np.eye(gram.shape[-1]), gram.shape)
    Linv = np.linalg.solve(L, eye)
    return A @ (_h(Linv) @ Linv)


def zf_factors(Ghat, Fhat) -> PrecoderMatrix:
    _check_shapes(Ghat, Fhat)
    if Ghat.shape[-2] <= Ghat.shape[-1]:
        raise ValueError("ZF needs N > 2K")
    Gb = _pinv_cols(Ghat)
    Fb = _pinv_cols(Fhat)
    perm = partner_index(Ghat.shape[-1] // 2)
    return PrecoderMatrix(Fb.conj()[..., perm], _h(Gb), ZF)


def precoder_factors(Ghat, Fhat, scheme: str) -> PrecoderMatrix:
    return mrc_factors(Ghat, Fhat) if canon_scheme(scheme) == MRC else zf_factors(Ghat, Fhat)


def precoder_mrc(Ghat, Fhat) -> np.ndarray:
    """Unscaled MRC/MRT relay matrix F^* T G^H."""
    return mrc_factors(Ghat, Fhat).W


def precoder_zf(Ghat, Fhat) -> np.ndarray:
    """Unscaled ZFR/ZFT relay matrix Fbar^* T Gbar^H."""
    return zf_factors(Ghat, Fhat).W


def phi_hat(hv: HatVariances) -> float:
    perm = partner_index(len(hv.g) // 2)
    return float(np.sum(hv.g * hv.f[perm]))


def eta_hat(cfg: SystemConfig, hv: HatVariances) -> float:
    c = cfg.zf_constant()
    perm = partner_index(cfg.K)
    return float(np.sum(1.0 / (c ** 2 * hv.f * hv.g[perm])))


def lambda_hat(cfg: SystemConfig, hv: HatVariances, p: np.ndarray) -> float:
    c = cfg.zf_constant()
    perm = partner_index(cfg.K)
    return float(np.sum(p[perm] / (c * hv.f)))


def alpha_sq_denominator(cfg: SystemConfig, hv: HatVariances, alloc: PowerAllocation, scheme: str) -> float:
    """Expected relay output power per unit alpha^2."""
    p, PR, N = alloc.p, alloc.P_R, cfg.N
    if canon_scheme(scheme) == MRC:
        perm = partner_index(cfg.K)
        Psi = float(np.sum(p * cfg.Du))
        Ups = float(np.sum(p * hv.g ** 2 * hv.f[perm]))
        return N ** 2 * (Psi + cfg.sigma_nr2 + PR * cfg.sigma_LIR2) * phi_hat(hv) + N ** 3 * Ups
    return lambda_hat(cfg, hv, p) + eta_hat(cfg, hv) * (
        float(np.sum(p * hv.xi_g)) + cfg.sigma_nr2 + PR * cfg.sigma_LIR2)


def alpha_closed(cfg: SystemConfig, hv: HatVariances, alloc: PowerAllocation, scheme: str) -> float:
    """Closed-form amplification factor for either scheme."""
    if alloc.P_R == 0:
        return 0.0
    den = alpha_sq_denominator(cfg, hv, alloc, scheme)
    if not den > 0:
        raise ConfigError("alpha denominator is zero: no transmit power, noise or interference")
    return float(np.sqrt(alloc.P_R / den))


def relay_power_terms(pre: PrecoderMatrix, real: ChannelRealization, cfg: SystemConfig,
                      alloc: PowerAllocation) -> np.ndarray:
    """Conditional (given channels) E||W G x||^2, E||W G_RR x_R||^2, E||W z_R||^2.

    Returns an array with a trailing axis of length 3.
    """
    AA = _h(pre.left) @ pre.left

    def fro2(C):
        # ||A C||_F^2 = tr(A^H A C C^H) keeps everything 2K x 2K
        return np.real(np.trace(AA @ (C @ _h(C)), axis1=-2, axis2=-1))

    t1 = fro2((pre.right @ real.G) * np.sqrt(alloc.p))
    t2 = fro2(pre.right @ real.G_RR) * alloc.P_R / cfg.N
    t3 = fro2(pre.right) * cfg.sigma_nr2
    return np.stack(np.broadcast_arrays(t1, t2, t3), axis=-1)


def alpha_empirical(W: np.ndarray, real: ChannelRealization, cfg: SystemConfig,
                    alloc: PowerAllocation, rng: np.random.Generator, trials: int = 1000,
                    return_terms: bool = False):
    """Amplification factor from sample means over symbols, loop residual and relay noise.

    The channel is fixed within a call; average the returned terms across
    calls to get the ensemble value.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    N, M = cfg.N, cfg.M
    x = crandn(rng, (M, trials)) * np.sqrt(alloc.p)[:, None]
    xr = crandn(rng, (N, trials)) * np.sqrt(alloc.P_R / N)
    z = crandn(rng, (N, trials)) * np.sqrt(cfg.sigma_nr2)
    terms = np.array([
        np.mean(np.sum(np.abs(W @ (real.G @ x)) ** 2, axis=0)),
        np.mean(np.sum(np.abs(W @ (real.G_RR @ xr)) ** 2, axis=0)),
        np.mean(np.sum(np.abs(W @ z) ** 2, axis=0)),
    ])
    den = terms.sum()
    alpha = float(np.sqrt(alloc.P_R / den)) if den > 0 else 0.0
    return (alpha, terms) if return_terms else alpha


def sic_coefficient(Ghat, Fhat, W, k: int) -> complex:
    """Self-interference coefficient fhat_k^T W ghat_k fed back to user k (0-based)."""
    return complex(Fhat[:, k] @ W @ Ghat[:, k])
