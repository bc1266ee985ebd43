"""Small log-barrier interior-point solver for geometric programs in log variables.

Constraints come in stacked blocks so that all rows are evaluated with a
handful of numpy calls:

* ``LSEBlock``: f_i(v) = log sum_{r in i} exp(A_r v + b_r) <= 0
* ``ExpBlock``: f_i(v) = sum_{r in i} exp(A_r v + b_r) + g_i v + h_i <= 0

The objective to minimize is a single-row ``ExpBlock``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleError(RuntimeError):
    """Constraint set has no strictly feasible point."""

    def __init__(self, msg, certificate=None):
        super().__init__(msg)
        self.certificate = certificate


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


def _segments(seg: np.ndarray, n_con: int):
    seg = np.asarray(seg, dtype=int)
    if seg.size and (np.any(np.diff(seg) < 0) or seg[-1] >= n_con):
        raise ValueError("segment ids must be sorted and < n_con")
    starts = np.searchsorted(seg, np.arange(n_con))
    if np.any(np.bincount(seg, minlength=n_con) == 0) and n_con:
        raise ValueError("every constraint needs at least one row")
    return seg, starts


class LSEBlock:
    def __init__(self, A, b, seg, n_con: int, names=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.seg, self.starts = _segments(seg, n_con)
        self.m = n_con
        self.names = list(names) if names is not None else [f"lse{i}" for i in range(n_con)]

    def value(self, v):
        y = self.A @ v + self.b
        ymax = np.maximum.reduceat(y, self.starts)
        s = np.add.reduceat(np.exp(y - ymax[self.seg]), self.starts)
        return ymax + np.log(s)

    def derivs(self, v):
        y = self.A @ v + self.b
        ymax = np.maximum.reduceat(y, self.starts)
        e = np.exp(y - ymax[self.seg])
        s = np.add.reduceat(e, self.starts)
        f = ymax + np.log(s)
        w = e / s[self.seg]
        grad = np.add.reduceat(w[:, None] * self.A, self.starts, axis=0)
        return f, grad, w

    def barrier_terms(self, v, t_scale=None):
        """Value, gradient and Hessian of -sum log(-f_i)."""
        f, grad, w = self.derivs(v)
        if np.any(f >= 0):
            return np.inf, None, None
        inv = 1.0 / (-f)
        g = grad.T @ inv
        # sum_i inv_i * hess_i + inv_i^2 grad_i grad_i^T,  hess_i = A^T diag(w) A - grad grad^T
        H = (self.A * (w * inv[self.seg])[:, None]).T @ self.A
        H += (grad * (inv ** 2 - inv)[:, None]).T @ grad
        return -np.sum(np.log(-f)), g, H

    def grads(self, v):
        return self.derivs(v)[1]


class ExpBlock:
    def __init__(self, A, b, seg, n_con: int, G=None, h=None, names=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.seg, self.starts = _segments(seg, n_con)
        self.m = n_con
        n = self.A.shape[1]
        self.G = np.zeros((n_con, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
        self.h = np.zeros(n_con) if h is None else np.asarray(h, dtype=float).reshape(-1)
        self.names = list(names) if names is not None else [f"exp{i}" for i in range(n_con)]

    def _e(self, v):
        if self.A.shape[0] == 0:
            return np.zeros(0)
        return np.exp(np.minimum(self.A @ v + self.b, 700.0))

    def value(self, v):
        e = self._e(v)
        s = np.add.reduceat(e, self.starts) if e.size else np.zeros(self.m)
        return s + self.G @ v + self.h

    def derivs(self, v):
        e = self._e(v)
        if e.size:
            s = np.add.reduceat(e, self.starts)
            grad = np.add.reduceat(e[:, None] * self.A, self.starts, axis=0) + self.G
        else:
            s = np.zeros(self.m)
            grad = self.G.copy()
        return s + self.G @ v + self.h, grad, e

    def barrier_terms(self, v):
        f, grad, e = self.derivs(v)
        if np.any(f >= 0):
            return np.inf, None, None
        inv = 1.0 / (-f)
        g = grad.T @ inv
        H = (grad * (inv ** 2)[:, None]).T @ grad
        if e.size:
            H += (self.A * (e * inv[self.seg])[:, None]).T @ self.A
        return -np.sum(np.log(-f)), g, H

    def objective_terms(self, v):
        """Value, gradient and Hessian of the single-row block as an objective."""
        f, grad, e = self.derivs(v)
        H = (self.A * e[:, None]).T @ self.A if e.size else np.zeros((len(v), len(v)))
        return float(f[0]), grad[0], H

    def grads(self, v):
        return self.derivs(v)[1]


@dataclass
class BarrierResult:
    v: np.ndarray
    fval: float
    kkt: float
    gap: float
    newton_steps: int
    duals: list


def _max_constraint(blocks, v):
    vals = [blk.value(v) for blk in blocks if blk.m]
    return float(max(np.max(x) for x in vals)) if vals else -np.inf


class _Shift:
    """Wraps a block as f_i(v[:-1]) - v[-1] for phase I."""

    def __init__(self, blk):
        self.blk = blk
        self.m = blk.m

    def value(self, v):
        return self.blk.value(v[:-1]) - v[-1]

    def barrier_terms(self, v):
        x, s = v[:-1], v[-1]
        f, grad = self.blk.derivs(x)[:2]
        f = f - s
        if np.any(f >= 0):
            return np.inf, None, None
        n = len(v)
        inv = 1.0 / (-f)
        gfull = np.hstack([grad, -np.ones((self.m, 1))])
        g = gfull.T @ inv
        H = (gfull * (inv ** 2)[:, None]).T @ gfull
        # curvature of f_i (independent of the shift)
        inner = self.blk.derivs(x)
        if isinstance(self.blk, LSEBlock):
            w = inner[2]
            Hc = (self.blk.A * (w * inv[self.blk.seg])[:, None]).T @ self.blk.A
            Hc -= (grad * inv[:, None]).T @ grad
        else:
            e = inner[2]
            Hc = (self.blk.A * (e * inv[self.blk.seg])[:, None]).T @ self.blk.A if e.size else 0.0
        H[: n - 1, : n - 1] += Hc
        return -np.sum(np.log(-f)), g, H


def _centering(obj_terms, blocks, v, t, max_steps, newton_tol=1e-10, stop=None):
    """Damped Newton on t*f0 - sum log(-f_i). Returns (v, steps, stalled).

    ``stop(v)`` ends centering early once it returns True.
    """
    steps = 0

    def phi(x):
        f0, g0, H0 = obj_terms(x)
        val, g, H = t * f0, t * g0, t * H0
        for blk in blocks:
            bv, bg, bH = blk.barrier_terms(x)
            if not np.isfinite(bv):
                return np.inf, None, None
            val, g, H = val + bv, g + bg, H + bH
        return val, g, H

    val, g, H = phi(v)
    if not np.isfinite(val):
        raise ValueError("centering started at an infeasible point")
    while steps < max_steps:
        n = len(v)
        try:
            dv = -np.linalg.solve(H + 1e-14 * np.trace(H) / n * np.eye(n), g)
        except np.linalg.LinAlgError:
            dv = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec2 = float(-g @ dv)
        if dec2 / 2 <= newton_tol:
            break
        s = 1.0
        while True:
            nv = v + s * dv
            nval = phi_val(obj_terms, blocks, nv, t)
            if np.isfinite(nval) and nval <= val - 0.25 * s * dec2:
                break
            s *= 0.5
            if s < 1e-14:
                return v, steps, True
        v = nv
        prev = val
        val, g, H = phi(v)
        steps += 1
        if stop is not None and stop(v):
            break
        # round-off floor: the decrement stops shrinking once t*f0 dominates
        if prev - val <= 1e-13 * max(1.0, abs(val)):
            break
    return v, steps, False


def phi_val(obj_terms, blocks, v, t):
    for blk in blocks:
        if np.any(blk.value(v) >= 0):
            return np.inf
    val = t * obj_terms(v)[0]
    for blk in blocks:
        val -= np.sum(np.log(-blk.value(v)))
    return val


def _kkt(obj_terms, blocks, v, t):
    g = obj_terms(v)[1].copy()
    duals = []
    for blk in blocks:
        f = blk.value(v)
        mu = 1.0 / (-t * f)
        gr = blk.grads(v) if not isinstance(blk, _Shift) else None
        if gr is not None:
            g += gr.T @ mu
        duals.append(mu)
    return float(np.max(np.abs(g))), duals


def barrier_solve(obj_terms, blocks, v0, tol: float = 1e-7, t0: float = 1.0, mu: float = 10.0,
                  max_newton: int = 400) -> BarrierResult:
    """Minimize a convex objective over the blocks from a strictly feasible ``v0``."""
    m = sum(blk.m for blk in blocks)
    v = np.asarray(v0, dtype=float).copy()
    t = t0
    total = 0
    while True:
        v, steps, stalled = _centering(obj_terms, blocks, v, t, max_newton - total)
        total += steps
        gap = m / t
        # complementarity mu_i * (-f_i) = 1/t for every constraint
        if 1.0 / t <= tol:
            break
        if total >= max_newton:
            raise NonConvergenceError(f"barrier method hit {max_newton} Newton steps (gap {gap:.2e})", best=v)
        t *= mu
    kkt, duals = _kkt(obj_terms, blocks, v, t)
    return BarrierResult(v, obj_terms(v)[0], max(kkt, 1.0 / t), gap, total, duals)


def find_feasible(blocks, v0, margin: float = 1e-3, max_newton: int = 400):
    """Phase I: minimize s subject to f_i(v) <= s. Returns a strictly feasible point."""
    v0 = np.asarray(v0, dtype=float)
    if _max_constraint(blocks, v0) < 0:
        return v0
    s0 = _max_constraint(blocks, v0) + 1.0
    n = len(v0)
    shifted = [_Shift(blk) for blk in blocks]
    # keep s bounded below so the phase-I problem has a minimizer
    floor = LSEBlock(np.r_[np.zeros(n), -1.0][None, :], np.array([-(margin * 10 + 1.0)]), [0], 1)

    def obj(x):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return x[-1], g, np.zeros((n + 1, n + 1))

    x = np.r_[v0, s0]
    t = 1.0
    total = 0
    cons = shifted + [floor]
    mcount = sum(c.m for c in cons)
    def done(x):
        return x[-1] < -margin and _max_constraint(blocks, x[:-1]) < 0

    while True:
        x, steps, _ = _centering(obj, cons, x, t, max_newton - total, stop=done)
        total += steps
        if done(x):
            return x[:-1]
        if mcount / t < 1e-9 or total >= max_newton:
            break
        t *= 10.0
    if _max_constraint(blocks, x[:-1]) < 0:
        return x[:-1]
    raise InfeasibleError(f"no strictly feasible point (phase-I optimum {x[-1]:.3e})", certificate=x[:-1])
