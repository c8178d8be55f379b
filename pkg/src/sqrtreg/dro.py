"""Dual seminorms and the Wasserstein-robust reading of the square-root model.

For the squared loss and a transport cost built from ``p_*``, the worst-case
expected loss over a ball of radius ``delta`` around the empirical
distribution equals ``(||Y - X beta|| / sqrt(N) + sqrt(delta) p(beta))^2``.
With ``delta = lam^2 / N`` this is ``(||Y - X beta|| + lam p(beta))^2 / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import Dataset, Regularizer, penalty_value


def sparse_group_dual_columns(A, reg: Regularizer) -> np.ndarray:
    """``p_*`` of every column of ``A`` for a sparse group penalty.

    The mixed case bisects, per group and column, on the smallest ``t`` with
    ``||soft(alpha_G, t w1)|| <= t w2 omega_G``.
    """
    groups = reg.groups
    w1, w2 = reg.w1, reg.w2
    A = np.abs(np.asarray(A, dtype=float))
    if A.shape[0] == 0:
        return np.zeros(A.shape[1])
    if w2 == 0:
        return A.max(axis=0) / w1
    om = groups.weights[:, None]
    sq = np.add.reduceat((A * A)[groups._perm], groups._starts, axis=0)
    norms = np.sqrt(sq)
    if w1 == 0:
        return np.max(norms / om, axis=0) / w2
    amax = np.maximum.reduceat(A[groups._perm], groups._starts, axis=0)
    lo = np.zeros_like(norms)
    hi = norms / (w2 * om) + amax / w1
    Ap = A[groups._perm]
    lab = groups.labels[groups._perm]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        s = np.maximum(Ap - mid[lab] * w1, 0.0)
        ok = np.sqrt(np.add.reduceat(s * s, groups._starts, axis=0)) <= mid * w2 * om
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi.max(axis=0)


def _sparse_group_dual(alpha, reg: Regularizer) -> float:
    return float(sparse_group_dual_columns(alpha[:, None], reg)[0])


@njit(cache=True)
def _fused_feasible(alpha, t, w1, w2):
    # interval of reachable c_i = w2 b_i with alpha = w1 a + w2 B^T b,
    # |a|, |b| <= t; feasible iff c_n = 0 is reachable
    lo = 0.0
    hi = 0.0
    r1 = t * w1
    r2 = t * w2
    n = alpha.shape[0]
    for i in range(n - 1):
        lo = max(lo + alpha[i] - r1, -r2)
        hi = min(hi + alpha[i] + r1, r2)
        if lo > hi:
            return False
    return lo + alpha[n - 1] - r1 <= 0.0 <= hi + alpha[n - 1] + r1


def _fused_dual(alpha, reg: Regularizer) -> float:
    w1, w2 = reg.w1, reg.w2
    amax = float(np.max(np.abs(alpha), initial=0.0))
    if amax == 0:
        return 0.0
    if w2 == 0:
        return amax / w1
    if w1 == 0:
        total = alpha.sum()
        if abs(total) > 1e-12 * max(1.0, np.abs(alpha).sum()):
            return math.inf
        return float(np.max(np.abs(np.cumsum(alpha)[:-1]), initial=0.0)) / w2
    lo, hi = 0.0, amax / w1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _fused_feasible(alpha, mid, w1, w2):
            hi = mid
        else:
            lo = mid
    return hi


def dual_seminorm(alpha, reg: Regularizer) -> float:
    """``p_*(alpha) = sup {<alpha, beta> : p(beta) <= 1}``; may be ``inf``."""
    alpha = np.ascontiguousarray(alpha, dtype=float).ravel()
    reg.check_dim(alpha.size)
    if reg.is_fused:
        return _fused_dual(alpha, reg)
    return _sparse_group_dual(alpha, reg)


def phi_gamma(Z: float, p_beta: float, gamma: float) -> float:
    """``Z^2 + Z^2 p^2 / (gamma - p^2)`` with ``0/0 = 0`` and ``c/0 = inf``."""
    if gamma < 0 or p_beta < 0:
        raise ValueError("gamma and p_beta must be nonnegative")
    p2 = p_beta * p_beta
    z2 = Z * Z
    if p2 < gamma:
        return z2 + z2 * p2 / (gamma - p2)
    if p2 == gamma and Z * p_beta == 0:
        return z2
    return math.inf


def _check_normalized(reg: Regularizer) -> None:
    if abs(reg.w1 + reg.w2 - 1.0) > 1e-12:
        raise ValueError("the robust formulation requires w1 + w2 = 1")


def worst_case_loss(ds: Dataset, reg: Regularizer, beta, delta: float):
    """Closed-form worst-case expected squared loss and the optimal ``gamma``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    _check_normalized(reg)
    rn = float(np.linalg.norm(ds.Y - ds.X @ beta))
    p = penalty_value(reg, beta)
    N = ds.N
    value = (rn + math.sqrt(delta * N) * p) ** 2 / N
    if rn == 0 or p == 0 or delta == 0:
        gamma = p * p
    else:
        gamma = rn * p / math.sqrt(N * delta) + p * p
    return value, gamma


def _golden(f, a: float, b: float, tol: float = 1e-12, max_iter: int = 400):
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def worst_case_loss_numeric(ds: Dataset, reg: Regularizer, beta, delta: float,
                            gamma_span: float = 1e6) -> float:
    """Infimum over ``gamma`` of ``gamma delta + mean_i phi_gamma(Z_i)`` by
    golden-section search in ``s = log(gamma - p^2)``."""
    Z = ds.Y - ds.X @ beta
    p = penalty_value(reg, beta)
    p2 = p * p

    def obj_gamma(gamma):
        return gamma * delta + float(np.mean([phi_gamma(z, p, gamma) for z in Z]))

    if p == 0 or not np.any(Z):
        # phi does not blow up at the left end, which is then optimal
        return obj_gamma(p2)

    zsq = float(np.mean(Z * Z))

    def obj(s):
        e = math.exp(s)
        # phi_gamma summed in closed form away from the pole
        return (p2 + e) * delta + zsq * (1.0 + p2 / e)

    s, val = _golden(obj, -60.0, math.log(gamma_span))
    # one direct evaluation through phi_gamma for consistency
    direct = obj_gamma(p2 + math.exp(s))
    return min(val, direct) if math.isfinite(direct) else val


@dataclass(frozen=True)
class EquivalenceReport:
    max_deviation: float
    n_samples: int
    passed: bool
    tol: float


def dro_equivalence_check(ds: Dataset, reg: Regularizer, lam: float, betas,
                          tol: float = 1e-9) -> EquivalenceReport:
    """Check ``sqrt(N * worst_case_loss(beta, lam^2/N)) = ||Y - X beta|| + lam p(beta)``."""
    _check_normalized(reg)
    delta = lam * lam / ds.N
    worst = 0.0
    ok = True
    count = 0
    for beta in betas:
        beta = np.asarray(beta, dtype=float)
        val, _ = worst_case_loss(ds, reg, beta, delta)
        obj = float(np.linalg.norm(ds.Y - ds.X @ beta)) + lam * penalty_value(reg, beta)
        dev = abs(math.sqrt(ds.N * val) - obj)
        worst = max(worst, dev)
        ok &= dev <= tol * (1 + obj)
        count += 1
    return EquivalenceReport(worst, count, bool(ok), tol)
