"""Power allocation: monomial fits, GP subproblems and Dinkelbach-type outer loops.

Log variables are laid out as v = [log p (2K), log P_R, log Gamma (2K), (t)],
where the optional trailing t is the epigraph variable of the max-min problem.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .gp import (BarrierResult, ExpBlock, InfeasibleError, LSEBlock, NonConvergenceError,
                 barrier_solve, find_feasible)
from .rates import (BoundCoefficients, bound_coeffs, snr_lower, spectral_efficiency,
                    total_power, user_energy_efficiency)
from .relay import canon_scheme
from .sysmodel import PowerAllocation, SystemConfig, partner_index

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
BETA = 1.1


class QoSInfeasibleError(InfeasibleError):
    def __init__(self, msg, users=(), best=None):
        super().__init__(msg, certificate=best)
        self.users = list(users)


# --------------------------------------------------------------------------- monomials

@dataclass(frozen=True)
class MonomialFit:
    """delta * Gamma**alpha, tangent to 1 + Gamma at the anchor."""
    alpha: np.ndarray
    delta: np.ndarray
    anchor: np.ndarray

    @property
    def log_delta(self) -> np.ndarray:
        return np.log1p(self.anchor) - self.alpha * np.log(self.anchor)

    def __call__(self, gamma):
        return np.exp(self.log_delta + self.alpha * np.log(gamma))


def monomial_fit(gamma_anchor) -> MonomialFit:
    g = np.asarray(gamma_anchor, dtype=float)
    if np.any(~(g > 0)) or np.any(~np.isfinite(g)):
        raise ValueError("monomial anchor must be positive and finite")
    a = g / (1.0 + g)
    d = np.exp(np.log1p(g) - a * np.log(g))
    return MonomialFit(a, d, g)


# ------------------------------------------------------------------------ posynomials

@dataclass(frozen=True)
class Posynomial:
    """sum_r coef_r * prod_j var_j ** expo[r, j] over the variables (p_1..p_2K, P_R, Gamma_1..Gamma_2K)."""
    coef: np.ndarray
    expo: np.ndarray

    def __call__(self, p, P_R, gamma):
        logv = np.log(np.r_[np.asarray(p, float), float(P_R), np.asarray(gamma, float)])
        return float(np.sum(self.coef * np.exp(self.expo @ logv)))


def build_isnr_constraint(coeffs: BoundCoefficients, k: int) -> Posynomial:
    """ISNR_k * Gamma_k <= 1 as a posynomial (zero-coefficient monomials dropped)."""
    t = coeffs.terms
    M = 2 * coeffs.K
    n = 2 * M + 1
    y = M
    kp = k ^ 1
    coefs, rows = [], []

    def add(c, idx_pos, idx_neg_y=0):
        if c <= 0:
            return
        r = np.zeros(n)
        for i in idx_pos:
            r[i] += 1.0
        r[y] += idx_neg_y
        r[kp] -= 1.0
        r[M + 1 + k] += 1.0
        coefs.append(c / t.num[k])
        rows.append(r)

    for i in range(M):
        add(t.lin[k, i], [i])
        add(t.linR[k, i], [i], -1)
        for j in range(M):
            add(t.quad[k, i, j], [i, j], -1)
    add(t.const[k], [])
    add(t.rel[k], [], +1)
    add(t.inv[k], [], -1)
    return Posynomial(np.array(coefs), np.array(rows).reshape(-1, n))


# ------------------------------------------------------------------------ subproblem

@dataclass
class GpSubproblem:
    cfg: SystemConfig
    coeffs: BoundCoefficients
    fit: MonomialFit
    lam: float = 0.0
    beta: float = BETA
    mode: str = "ee"  # ee | maxmin
    gamma_min: np.ndarray | None = None
    use_trust: bool = True

    def __post_init__(self):
        if self.use_trust and not self.beta > 1:
            raise ValueError("trust-region beta must exceed 1")


@dataclass
class SubSolution:
    p: np.ndarray
    P_R: float
    gamma: np.ndarray
    objective: float
    kkt: float
    newton_steps: int


def _lin(n, idx_coef, const):
    row = np.zeros(n)
    for i, c in idx_coef:
        row[i] += c
    return row, const


def _build_blocks(sub: GpSubproblem, n: int):
    cfg, K = sub.cfg, sub.cfg.K
    M = 2 * K
    y = M
    z0 = M + 1
    A, b, seg, names = [], [], [], []
    ci = 0
    for k in range(M):
        pos = build_isnr_constraint(sub.coeffs, k)
        for c, r in zip(pos.coef, pos.expo):
            row = np.zeros(n)
            row[: 2 * M + 1] = r
            A.append(row)
            b.append(np.log(c))
            seg.append(ci)
        names.append(f"isnr[{k}]")
        ci += 1
    # total power
    for j in list(range(M)) + [y]:
        row = np.zeros(n)
        row[j] = 1.0
        A.append(row)
        b.append(-np.log(cfg.Pt_max))
        seg.append(ci)
    names.append("total_power")
    ci += 1

    def single(idx_coef, const, name):
        nonlocal ci
        row, c = _lin(n, idx_coef, const)
        A.append(row)
        b.append(c)
        seg.append(ci)
        names.append(name)
        ci += 1

    for k in range(M):
        single([(k, 1.0)], -np.log(cfg.P_max), f"p_max[{k}]")
        single([(k, -1.0)], np.log(cfg.P_max) - 60.0, f"p_floor[{k}]")
    single([(y, 1.0)], -np.log(cfg.PR_max), "PR_max")
    single([(y, -1.0)], np.log(cfg.PR_max) - 60.0, "PR_floor")
    lg = np.log(sub.fit.anchor)
    for k in range(M):
        if sub.use_trust:
            single([(z0 + k, 1.0)], -lg[k] - np.log(sub.beta), f"trust_hi[{k}]")
            single([(z0 + k, -1.0)], lg[k] - np.log(sub.beta), f"trust_lo[{k}]")
        else:
            single([(z0 + k, -1.0)], -60.0, f"gamma_floor[{k}]")
        if sub.gamma_min is not None and sub.gamma_min[k] > 0:
            single([(z0 + k, -1.0)], np.log(sub.gamma_min[k]), f"qos[{k}]")
    blocks = [LSEBlock(np.array(A), np.array(b), np.array(seg), ci, names)]

    if sub.mode == "maxmin":
        # lam*(p_k + (P_R + Pc)/2K) - c*(log delta_k + alpha_k z_k) + t <= 0
        scale = cfg.prelog / LN2
        ld = sub.fit.log_delta
        EA, Eb, Eseg = [], [], []
        G = np.zeros((M, n))
        h = np.zeros(M)
        for k in range(M):
            for j, c in ((k, sub.lam), (y, sub.lam / M)):
                row = np.zeros(n)
                row[j] = 1.0
                EA.append(row)
                Eb.append(np.log(c) if c > 0 else -np.inf)
                Eseg.append(k)
            G[k, z0 + k] = -scale * sub.fit.alpha[k]
            G[k, n - 1] = 1.0
            h[k] = sub.lam * cfg.Pc / M - scale * ld[k]
        blocks.append(ExpBlock(np.array(EA), np.array(Eb), np.array(Eseg), M, G, h,
                               [f"user_ratio[{k}]" for k in range(M)]))
    return blocks


def _objective(sub: GpSubproblem, n: int):
    """Terms of the convex function to minimize."""
    cfg, M = sub.cfg, sub.cfg.M
    z0 = M + 1
    if sub.mode == "maxmin":
        def terms(v):
            g = np.zeros(n)
            g[-1] = -1.0
            return -v[-1], g, np.zeros((n, n))
        return terms
    scale = cfg.prelog / LN2
    rows, bs = [], []
    if sub.lam > 0:
        for j in range(M + 1):
            r = np.zeros(n)
            r[j] = 1.0
            rows.append(r)
            bs.append(np.log(sub.lam))
    G = np.zeros((1, n))
    G[0, z0:z0 + M] = -scale * sub.fit.alpha
    h = np.array([sub.lam * cfg.Pc - scale * np.sum(sub.fit.log_delta)])
    if rows:
        blk = ExpBlock(np.array(rows), np.array(bs), np.zeros(len(rows), int), 1, G, h)
        return blk.objective_terms

    def lin_terms(v):
        return float(G[0] @ v + h[0]), G[0].copy(), np.zeros((n, n))
    return lin_terms


def solve_subproblem(sub: GpSubproblem, start: PowerAllocation | None = None, tol: float = 1e-7,
                     return_raw: bool = False):
    """Solve one log-domain convex subproblem.

    Returns (p, P_R, Gamma, objective). The objective is the maximized value
    (surrogate SE minus lambda times power for "ee", the epigraph t for "maxmin").
    """
    cfg, M = sub.cfg, sub.cfg.M
    n = 2 * M + 1 + (1 if sub.mode == "maxmin" else 0)
    blocks = _build_blocks(sub, n)
    obj = _objective(sub, n)
    if start is None:
        start = PowerAllocation(np.full(M, min(cfg.P_max, cfg.Pt_max / (2 * M))) * 0.5,
                                min(cfg.PR_max, cfg.Pt_max / 2) * 0.5)
    shrink = 1.0 - 1e-6
    p0 = np.maximum(start.p, 1e-300) * shrink
    PR0 = max(start.P_R, 1e-300) * shrink
    g0 = sub.fit.anchor / np.sqrt(sub.beta) if sub.use_trust else np.maximum(
        snr_lower(sub.coeffs, PowerAllocation(p0, PR0)) * 0.5, 1e-20)
    if sub.gamma_min is not None:
        g0 = np.maximum(g0, sub.gamma_min * (1 + 1e-9))
    v0 = np.r_[np.log(p0), np.log(PR0), np.log(g0)]
    if sub.mode == "maxmin":
        fit = sub.fit
        scale = cfg.prelog / LN2
        ratios = scale * (fit.log_delta + fit.alpha * np.log(g0)) - sub.lam * (p0 + (PR0 + cfg.Pc) / M)
        v0 = np.r_[v0, np.min(ratios) - 1.0]
    v0 = find_feasible(blocks, v0)
    res: BarrierResult = barrier_solve(obj, blocks, v0, tol=tol)
    v = res.v
    p = np.exp(v[:M])
    PR = float(np.exp(v[M]))
    gam = np.exp(v[M + 1: 2 * M + 1])
    sol = SubSolution(p, PR, gam, -res.fval, res.kkt, res.newton_steps)
    if return_raw:
        return sol
    return p, PR, gam, sol.objective


# ------------------------------------------------------------------------- outer loops

def equal_power(cfg: SystemConfig) -> PowerAllocation:
    """P_R = Pt_max/2 (capped at PR_max), p_k = P_R/2K (capped at P_max)."""
    PR = min(cfg.Pt_max / 2.0, cfg.PR_max)
    p = np.full(cfg.M, min(PR / cfg.M, cfg.P_max))
    return PowerAllocation(p, PR)


@dataclass
class SolveOutcome:
    allocation: PowerAllocation
    gamma: np.ndarray
    lambda_trace: list
    D_trace: list
    iterations: int
    converged: bool
    scheme: str = ""
    mode: str = ""
    ee: float = float("nan")
    se: float = float("nan")
    se_surrogate: float = float("nan")
    min_user_ee: float = float("nan")
    inner_iterations: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    status: str = "ok"
    # one (lambda, true EE, true min-user EE) entry per GP solve
    step_trace: list = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "lambda", "D_lambda", "ee_true", "se_true", "min_user_ee"])
        for row in self.trace:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()


def _metrics(cfg, coeffs, alloc):
    snr = snr_lower(coeffs, alloc)
    se = spectral_efficiency(cfg, alloc, snr)
    ee = se / total_power(cfg, alloc)
    mu = float(np.min(user_energy_efficiency(cfg, alloc, snr)))
    return snr, se, ee, mu


def _sequential(cfg, coeffs, alloc, lam, mode, beta, gamma_min, tol, max_inner, steps=None):
    """Re-anchor the monomial fit until the SNR vector settles at fixed lambda."""
    gamma = snr_lower(coeffs, alloc)
    fit = monomial_fit(gamma)
    for it in range(1, max_inner + 1):
        sub = GpSubproblem(cfg, coeffs, fit, lam, beta, mode, gamma_min)
        p, PR, _, _ = solve_subproblem(sub, start=alloc)
        new = PowerAllocation(np.minimum(p, cfg.P_max), min(PR, cfg.PR_max))
        g_new = snr_lower(coeffs, new)
        change = np.max(np.abs(g_new - gamma)) / np.max(np.abs(gamma))
        alloc, gamma, last_fit = new, g_new, fit
        fit = monomial_fit(gamma)
        if steps is not None:
            _, _, ee, mu = _metrics(cfg, coeffs, alloc)
            steps.append((lam, ee, mu))
        if change <= tol:
            return alloc, gamma, last_fit, it
    return alloc, gamma, last_fit, max_inner


def _qos_targets(cfg, qos):
    if qos is None:
        return None
    r = np.broadcast_to(np.asarray(qos, dtype=float), (cfg.M,)).copy()
    return np.where(r > 0, 2.0 ** r - 1.0, 0.0)


def qos_feasible_start(cfg: SystemConfig, coeffs: BoundCoefficients, gamma_min: np.ndarray,
                       margin: float = 1e-6) -> PowerAllocation:
    """Allocation maximizing min_k SNR_k / gamma_min_k (exact GP); raises if below one."""
    M = cfg.M
    active = gamma_min > 0
    dummy = monomial_fit(np.ones(M))
    sub = GpSubproblem(cfg, coeffs, dummy, 0.0, BETA, "maxmin", None, use_trust=False)
    n = 2 * M + 2
    blocks = _build_blocks(sub, n)[:1]
    # log Gamma_k >= log gamma_min_k + t   ->   -z_k + t + log gmin <= 0
    A, b = [], []
    for k in np.flatnonzero(active):
        row = np.zeros(n)
        row[M + 1 + k] = -1.0
        row[-1] = 1.0
        A.append(row)
        b.append(np.log(gamma_min[k]))
    row = np.zeros(n)
    row[-1] = 1.0
    A.append(row)  # cap t at 50 nats so the problem stays bounded
    b.append(-50.0)
    blocks.append(LSEBlock(np.array(A), np.array(b), np.arange(len(A)), len(A)))
    start = equal_power(cfg)
    g0 = snr_lower(coeffs, start) * 0.5
    t0 = float(np.min(np.log(g0[active]) - np.log(gamma_min[active]))) - 1.0
    v0 = np.r_[np.log(start.p * (1 - 1e-6)), np.log(start.P_R * (1 - 1e-6)), np.log(g0), t0]

    def obj(v):
        g = np.zeros(n)
        g[-1] = -1.0
        return -v[-1], g, np.zeros((n, n))

    v0 = find_feasible(blocks, v0)
    res = barrier_solve(obj, blocks, v0, tol=1e-9)
    alloc = PowerAllocation(np.minimum(np.exp(res.v[:M]), cfg.P_max), min(np.exp(res.v[M]), cfg.PR_max))
    snr = snr_lower(coeffs, alloc)
    short = np.flatnonzero(active & (snr < gamma_min * (1 + margin)))
    if res.v[-1] <= np.log1p(margin) or short.size:
        users = short if short.size else np.flatnonzero(active)
        raise QoSInfeasibleError(
            f"QoS targets unreachable; best common margin {np.exp(res.v[-1]):.4f}, users {[int(u) + 1 for u in users]}",
            users=[int(u) + 1 for u in users], best=alloc)
    return alloc


def dinkelbach_ee(cfg: SystemConfig, scheme: str, qos=None, eps: float = 1e-3, L: int = 100,
                  beta: float = BETA, inner_tol: float = 1e-4, max_inner: int = 200) -> SolveOutcome:
    """Sum-EE maximization: Dinkelbach on lambda, sequential monomial GPs inside.

    ``qos`` gives per-user rate targets r_k (bits/s/Hz) on log2(1 + SNR_k).
    """
    scheme = canon_scheme(scheme)
    coeffs = bound_coeffs(cfg, scheme=scheme)
    gmin = _qos_targets(cfg, qos)
    alloc = equal_power(cfg) if gmin is None else qos_feasible_start(cfg, coeffs, gmin)
    lam = 0.0
    out = SolveOutcome(alloc, snr_lower(coeffs, alloc), [], [], 0, False, scheme, "ee")
    for m in range(1, L + 1):
        alloc, gamma, fit, inner = _sequential(cfg, coeffs, alloc, lam, "ee", beta, gmin, inner_tol, max_inner,
                                              out.step_trace)
        PT = total_power(cfg, alloc)
        u = cfg.prelog * float(np.sum(np.log(fit(gamma)))) / LN2
        D = u - lam * PT
        snr, se, ee, mu = _metrics(cfg, coeffs, alloc)
        out.lambda_trace.append(lam)
        out.D_trace.append(D)
        out.inner_iterations.append(inner)
        out.trace.append((m, lam, D, ee, se, mu))
        out.iterations = m
        out.se_surrogate = u
        log.debug("ee m=%d lam=%.6g D=%.3e ee=%.6g inner=%d", m, lam, D, ee, inner)
        if m > 1 and abs(D) <= eps:
            out.converged = True
            break
        lam = u / PT
    out.allocation, out.gamma = alloc, gamma
    _, out.se, out.ee, out.min_user_ee = _metrics(cfg, coeffs, alloc)
    return out


def maxmin_ee(cfg: SystemConfig, scheme: str, qos=None, eps: float = 1e-3, L: int = 100,
              beta: float = BETA, inner_tol: float = 1e-4, max_inner: int = 200) -> SolveOutcome:
    """Max-min per-user EE via the generalized Dinkelbach iteration."""
    scheme = canon_scheme(scheme)
    coeffs = bound_coeffs(cfg, scheme=scheme)
    gmin = _qos_targets(cfg, qos)
    alloc = equal_power(cfg) if gmin is None else qos_feasible_start(cfg, coeffs, gmin)
    lam = 0.0
    M = cfg.M
    out = SolveOutcome(alloc, snr_lower(coeffs, alloc), [], [], 0, False, scheme, "maxmin")
    for m in range(1, L + 1):
        alloc, gamma, fit, inner = _sequential(cfg, coeffs, alloc, lam, "maxmin", beta, gmin, inner_tol, max_inner,
                                              out.step_trace)
        den = alloc.p + (alloc.P_R + cfg.Pc) / M
        num = cfg.prelog * np.log(fit(gamma)) / LN2
        D = float(np.min(num - lam * den))
        snr, se, ee, mu = _metrics(cfg, coeffs, alloc)
        out.lambda_trace.append(lam)
        out.D_trace.append(D)
        out.inner_iterations.append(inner)
        out.trace.append((m, lam, D, ee, se, mu))
        out.iterations = m
        if m > 1 and abs(D) <= eps:
            out.converged = True
            break
        lam = float(np.min(num / den))
    out.allocation, out.gamma = alloc, gamma
    _, out.se, out.ee, out.min_user_ee = _metrics(cfg, coeffs, alloc)
    return out


def maximize_se(cfg: SystemConfig, scheme: str, qos=None, eps: float = 1e-3, L: int = 100,
                beta: float = BETA, inner_tol: float = 1e-4, max_inner: int = 400) -> SolveOutcome:
    """Sequential GP on the surrogate SE alone (lambda fixed at zero)."""
    scheme = canon_scheme(scheme)
    coeffs = bound_coeffs(cfg, scheme=scheme)
    gmin = _qos_targets(cfg, qos)
    alloc = equal_power(cfg) if gmin is None else qos_feasible_start(cfg, coeffs, gmin)
    alloc, gamma, fit, inner = _sequential(cfg, coeffs, alloc, 0.0, "ee", beta, gmin, inner_tol, max_inner)
    snr, se, ee, mu = _metrics(cfg, coeffs, alloc)
    u = cfg.prelog * float(np.sum(np.log(fit(gamma)))) / LN2
    return SolveOutcome(alloc, gamma, [0.0], [u], 1, inner < max_inner, scheme, "se", ee, se, u, mu,
                        [inner], [(1, 0.0, u, ee, se, mu)])


def equal_power_outcome(cfg: SystemConfig, scheme: str) -> SolveOutcome:
    scheme = canon_scheme(scheme)
    coeffs = bound_coeffs(cfg, scheme=scheme)
    alloc = equal_power(cfg)
    snr, se, ee, mu = _metrics(cfg, coeffs, alloc)
    return SolveOutcome(alloc, snr, [], [], 0, True, scheme, "equal", ee, se, se, mu)
