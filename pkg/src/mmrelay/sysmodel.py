"""System model: scenario parameters, channel sampling and MMSE/LS estimation.

Users are indexed 0..2K-1 internally. Users 2m and 2m+1 form pair m and sit
on opposite sides of the relay, so the users sharing a side with user k are
those with the same parity as k.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

# large-scale fading profiles of the 5-pair evaluation scenario
PAPER_DU = np.array([0.749, 0.045, 0.246, 0.121, 0.125, 0.142, 0.635, 0.256, 0.021, 0.123])
PAPER_DD = np.array([0.257, 0.856, 1.000, 0.899, 0.014, 0.759, 0.315, 0.432, 0.195, 0.562])


class ConfigError(ValueError):
    """Scenario parameters violate a model invariant."""


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def pair_partner(k: int, K: int | None = None) -> int:
    """Partner of 1-based user ``k``: 2m-1 <-> 2m."""
    k = int(k)
    if k < 1 or (K is not None and k > 2 * K):
        raise IndexError(f"user index {k} out of range 1..{'2K' if K is None else 2 * K}")
    return k + 1 if k % 2 == 1 else k - 1


def partner_index(K: int) -> np.ndarray:
    """0-based partner permutation, ``k' = k ^ 1``."""
    return np.arange(2 * K) ^ 1


def same_side_mask(K: int) -> np.ndarray:
    """Boolean 2K x 2K mask of (k, i) with i in U_k (same parity, k included)."""
    idx = np.arange(2 * K)
    return (idx[:, None] % 2) == (idx[None, :] % 2)


def ui_matrix(K: int, level: float) -> np.ndarray:
    """Uniform inter-user/self-loop variance on the same-side mask."""
    return np.where(same_side_mask(K), float(level), 0.0)


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    Du: np.ndarray
    Dd: np.ndarray
    T: int = 200
    tau: int | None = None
    sigma_n2: float = 1.0
    sigma_nr2: float = 1.0
    sigma_LIR2: float = 1.0
    sigma_UI: np.ndarray | None = None
    P_max: float = 10.0
    PR_max: float = 200.0
    Pt_max: float = 10.0
    Pc: float = 1000.0
    P_rho: float = 100.0
    # inverse-Wishart constant for ZF: "complex" -> N-2K, "real" -> N-2K-1
    zf_dof: str = "complex"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        K = int(self.K)
        Du = np.asarray(self.Du, dtype=float).reshape(-1)
        Dd = np.asarray(self.Dd, dtype=float).reshape(-1)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "Du", Du)
        object.__setattr__(self, "Dd", Dd)
        if self.tau is None:
            object.__setattr__(self, "tau", 2 * K)
        if self.sigma_UI is None:
            object.__setattr__(self, "sigma_UI", np.zeros((2 * K, 2 * K)))
        else:
            S = np.asarray(self.sigma_UI, dtype=float)
            if S.ndim == 0:
                S = ui_matrix(K, float(S))
            object.__setattr__(self, "sigma_UI", S)
        self.validate()

    @property
    def M(self) -> int:
        return 2 * self.K

    @property
    def eta(self) -> float:
        return self.Pt_max / self.sigma_n2

    @property
    def prelog(self) -> float:
        return 1.0 - self.tau / self.T

    def validate(self) -> None:
        K, M = self.K, 2 * self.K
        if K < 1:
            raise ConfigError("K must be >= 1")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.Du.shape != (M,) or self.Dd.shape != (M,):
            raise ConfigError(f"Du and Dd must have 2K={M} entries")
        if np.any(self.Du < 0) or np.any(self.Dd < 0):
            raise ConfigError("large-scale fading coefficients must be non-negative")
        if not (1 <= self.tau <= self.T):
            raise ConfigError("need 1 <= tau <= T")
        if self.sigma_UI.shape != (M, M):
            raise ConfigError(f"sigma_UI must be {M}x{M}")
        if np.any(self.sigma_UI < 0) or np.any(self.sigma_UI[~same_side_mask(K)] != 0):
            raise ConfigError("sigma_UI must be non-negative and zero off the same-side mask")
        for name in ("sigma_n2", "sigma_nr2", "sigma_LIR2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("P_max", "PR_max", "Pt_max", "P_rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.Pc > 0:
            raise ConfigError("Pc must be positive")
        if self.zf_dof not in ("complex", "real"):
            raise ConfigError("zf_dof must be 'complex' or 'real'")

    def require_orthogonal_pilots(self) -> None:
        if self.tau < 2 * self.K:
            raise ConfigError(f"tau={self.tau} < 2K={2 * self.K}: non-orthogonal pilots unsupported")

    def zf_constant(self) -> int:
        """Inverse-Wishart mean denominator used by the ZF closed forms."""
        if self.N <= 2 * self.K + 1:
            raise ConfigError(f"ZF needs N > 2K+1 (N={self.N}, K={self.K})")
        c = self.N - 2 * self.K
        return c - 1 if self.zf_dof == "real" else c

    def with_(self, **kw) -> "SystemConfig":
        return replace(self, **kw)


def paper_config(N: int = 128, K: int = 5, eta_db: float = 10.0, P_rho_dbm: float = 20.0,
                 lir_db: float = 0.0, ui_db: float = 0.0, sigma2_dbm: float = 0.0, **kw) -> SystemConfig:
    """Evaluation scenario: T=200, tau=2K, Pmax 10 dBm, PRmax 23 dBm, Pc 30 dBm."""
    s2 = float(db2lin(sigma2_dbm))
    if K == 5:
        Du, Dd = PAPER_DU.copy(), PAPER_DD.copy()
    else:
        Du, Dd = np.resize(PAPER_DU, 2 * K), np.resize(PAPER_DD, 2 * K)
    args = dict(K=K, N=N, Du=Du, Dd=Dd, T=200, tau=2 * K,
                sigma_n2=s2, sigma_nr2=s2, sigma_LIR2=s2 * float(db2lin(lir_db)),
                sigma_UI=ui_matrix(K, s2 * float(db2lin(ui_db))),
                P_max=float(db2lin(10.0)), PR_max=float(db2lin(23.0)),
                Pt_max=s2 * float(db2lin(eta_db)), Pc=float(db2lin(30.0)),
                P_rho=float(db2lin(P_rho_dbm)))
    args.update(kw)
    return SystemConfig(**args)


class HatVariances(NamedTuple):
    g: np.ndarray
    f: np.ndarray
    xi_g: np.ndarray
    xi_f: np.ndarray


def _mmse_split(s2: np.ndarray, snr_p: float, noise: float) -> tuple[np.ndarray, np.ndarray]:
    if np.isinf(snr_p) or noise == 0:
        return s2.copy(), np.zeros_like(s2)
    hat = snr_p * s2 ** 2 / (snr_p * s2 + noise)
    return hat, s2 - hat


def hat_variances(cfg: SystemConfig) -> HatVariances:
    """Per-user estimate and error variances of the MMSE estimator."""
    snr_p = cfg.tau * cfg.P_rho
    g, xg = _mmse_split(cfg.Du, snr_p, cfg.sigma_nr2)
    f, xf = _mmse_split(cfg.Dd, snr_p, cfg.sigma_nr2)
    return HatVariances(g, f, xg, xf)


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class ChannelRealization:
    G: np.ndarray
    F: np.ndarray
    G_RR: np.ndarray
    Omega: np.ndarray


@dataclass(frozen=True)
class ChannelEstimate:
    Ghat: np.ndarray
    Fhat: np.ndarray
    sig_hat_g2: np.ndarray
    sig_hat_f2: np.ndarray
    sig_xi_g2: np.ndarray
    sig_xi_f2: np.ndarray
    method: str = "MMSE"


def draw_channels(cfg: SystemConfig, rng: np.random.Generator, batch: tuple = ()) -> ChannelRealization:
    """Sample G, F (N x 2K), G_RR (N x N) and Omega (2K x 2K).

    ``batch`` prepends leading dimensions for vectorized Monte-Carlo.
    """
    N, M = cfg.N, cfg.M
    batch = tuple(batch)
    G = crandn(rng, batch + (N, M)) * np.sqrt(cfg.Du)
    F = crandn(rng, batch + (N, M)) * np.sqrt(cfg.Dd)
    G_RR = crandn(rng, batch + (N, N)) * np.sqrt(cfg.sigma_LIR2)
    Om = crandn(rng, batch + (M, M)) * np.sqrt(cfg.sigma_UI)
    return ChannelRealization(G, F, G_RR, Om)


def dft_pilots(K: int, tau: int) -> np.ndarray:
    """First 2K rows of the tau x tau unitary DFT matrix (phi phi^H = I)."""
    n = np.arange(tau)
    D = np.exp(-2j * np.pi * np.outer(n, n) / tau) / np.sqrt(tau)
    return D[: 2 * K]


def estimate_channels(cfg: SystemConfig, real: ChannelRealization, rng: np.random.Generator,
                      method: str = "MMSE", mode: str = "statistical") -> ChannelEstimate:
    """Channel estimates for a given realization.

    ``pilot-sim`` passes the pilots through the noisy uplink and filters;
    ``statistical`` draws the estimate from its conditional law given the
    true channel, which has the same joint distribution at a fraction of
    the cost. LS is only available in pilot-sim mode.
    """
    cfg.require_orthogonal_pilots()
    method = method.upper()
    if method not in ("MMSE", "LS"):
        raise ValueError(f"unknown estimation method {method!r}")
    if mode not in ("statistical", "pilot-sim"):
        raise ValueError(f"unknown estimation mode {mode!r}")
    hv = hat_variances(cfg)
    snr_p = cfg.tau * cfg.P_rho
    batch = real.G.shape[:-2]

    if mode == "pilot-sim" or method == "LS":
        phi = dft_pilots(cfg.K, cfg.tau)
        est = []
        for H, s2 in ((real.G, cfg.Du), (real.F, cfg.Dd)):
            if np.isinf(snr_p):
                est.append(H.copy())
                continue
            Z = crandn(rng, batch + (cfg.N, cfg.tau)) * np.sqrt(cfg.sigma_nr2)
            Y = np.sqrt(snr_p) * H @ phi + Z
            Yc = Y @ phi.conj().T  # N x 2K: sqrt(snr_p) H + CN(0, sigma_nr2)
            if method == "LS":
                est.append(Yc / np.sqrt(snr_p))
            else:
                est.append(Yc * (np.sqrt(snr_p) * s2 / (snr_p * s2 + cfg.sigma_nr2)))
        Ghat, Fhat = est
    else:
        out = []
        for H, s2, h2 in ((real.G, cfg.Du, hv.g), (real.F, cfg.Dd, hv.f)):
            ratio = np.divide(h2, s2, out=np.zeros_like(s2), where=s2 > 0)
            cvar = h2 * (1.0 - ratio)
            out.append(ratio * H + np.sqrt(np.maximum(cvar, 0.0)) * crandn(rng, H.shape))
        Ghat, Fhat = out

    if method == "LS":
        nu = cfg.sigma_nr2 / snr_p
        return ChannelEstimate(Ghat, Fhat, cfg.Du + nu, cfg.Dd + nu,
                               np.full(cfg.M, nu), np.full(cfg.M, nu), method="LS")
    return ChannelEstimate(Ghat, Fhat, hv.g, hv.f, hv.xi_g, hv.xi_f)


def draw_estimated(cfg: SystemConfig, rng: np.random.Generator,
                   batch: tuple = ()) -> tuple[ChannelRealization, ChannelEstimate]:
    """Draw estimate and error independently, then G = Ghat + E_g (statistical shortcut)."""
    cfg.require_orthogonal_pilots()
    hv = hat_variances(cfg)
    batch = tuple(batch)
    N, M = cfg.N, cfg.M
    Gh = crandn(rng, batch + (N, M)) * np.sqrt(hv.g)
    Fh = crandn(rng, batch + (N, M)) * np.sqrt(hv.f)
    G = Gh + crandn(rng, batch + (N, M)) * np.sqrt(hv.xi_g)
    F = Fh + crandn(rng, batch + (N, M)) * np.sqrt(hv.xi_f)
    G_RR = crandn(rng, batch + (N, N)) * np.sqrt(cfg.sigma_LIR2)
    Om = crandn(rng, batch + (M, M)) * np.sqrt(cfg.sigma_UI)
    return (ChannelRealization(G, F, G_RR, Om),
            ChannelEstimate(Gh, Fh, hv.g, hv.f, hv.xi_g, hv.xi_f))


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray
    P_R: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        object.__setattr__(self, "P_R", float(self.P_R))

    @property
    def total(self) -> float:
        return float(self.p.sum() + self.P_R)

    def violations(self, cfg: SystemConfig, tol: float = 1e-8) -> list[str]:
        out = []
        if self.p.shape != (cfg.M,):
            return [f"p must have {cfg.M} entries"]
        if np.any(self.p < -tol) or self.P_R < -tol:
            out.append("negative power")
        if np.any(self.p > cfg.P_max * (1 + tol)):
            out.append("user peak power exceeded")
        if self.P_R > cfg.PR_max * (1 + tol):
            out.append("relay peak power exceeded")
        if self.total > cfg.Pt_max * (1 + tol):
            out.append("total power exceeded")
        return out

    def is_feasible(self, cfg: SystemConfig, tol: float = 1e-8) -> bool:
        return not self.violations(cfg, tol)
