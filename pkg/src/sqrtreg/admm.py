"""ADMM baselines on the primal and dual splittings of the square-root model.

Both variants need the inverse of ``I + X^T X`` (primal) or ``I + X X^T``
(dual). Only the smaller of the two Gram matrices is ever factorized; the
other side goes through the Sherman-Morrison-Woodbury identities

    (I + X^T X)^-1 = I - X^T (I + X X^T)^-1 X
    (I + X X^T)^-1 = I - X (I + X^T X)^-1 X^T.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DimensionMismatch, FactorizationFailure
from .model import (
    Dataset,
    Regularizer,
    SolveResult,
    SolverConfig,
    Status,
    column_sq_norms,
    dual_objective,
    kkt_residual,
    penalty_value,
)
from .prox import project_ball, prox_l2, prox_penalty

N_SIDE = "N"
P_SIDE = "n"


class Variant(str, enum.Enum):
    DIRECT_SMALL = "DirectSmall"
    SMW = "SMW"
    PCG = "PCG"


@dataclass
class LinSolveStrategy:
    """Cached solver for ``(I + X^T X) x = r`` and ``(I + X X^T) x = r``."""

    variant: Variant
    factor_side: str | None = None
    factor: tuple | None = None
    pcg_tol: float = 1e-12
    _x0: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, X, side: str, dense_threshold: int = 4000, pcg_tol: float = 1e-12):
        """Pick the route for systems on ``side`` and factorize once."""
        N, n = X.shape
        if min(N, n) > dense_threshold:
            return cls(Variant.PCG, pcg_tol=pcg_tol)
        fside = P_SIDE if n <= N else N_SIDE
        Xd = X.toarray() if sp.issparse(X) else X
        G = Xd.T @ Xd if fside == P_SIDE else Xd @ Xd.T
        G[np.diag_indices_from(G)] += 1.0
        try:
            fac = sla.cho_factor(G, lower=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FactorizationFailure("Gram matrix factorization failed") from exc
        variant = Variant.DIRECT_SMALL if fside == side else Variant.SMW
        return cls(variant, fside, fac, pcg_tol)


def _gram_apply(X, x, side):
    if side == P_SIDE:
        return x + X.T @ (X @ x)
    return x + X @ (X.T @ x)


def solve_gram_system(strategy: LinSolveStrategy, X, rhs, side: str) -> np.ndarray:
    """Return ``(I + X^T X)^-1 rhs`` (``side="n"``) or ``(I + X X^T)^-1 rhs``
    (``side="N"``)."""
    rhs = np.asarray(rhs, dtype=float)
    dim = X.shape[1] if side == P_SIDE else X.shape[0]
    if rhs.shape != (dim,):
        raise DimensionMismatch(f"rhs has shape {rhs.shape}, expected ({dim},)")
    if strategy.variant is Variant.PCG:
        if side == P_SIDE:
            diag = 1.0 + column_sq_norms(X)
        else:
            diag = 1.0 + (np.asarray(X.multiply(X).sum(axis=1)).ravel() if sp.issparse(X)
                          else np.einsum("ij,ij->i", X, X))
        op = LinearOperator((dim, dim), matvec=lambda v: _gram_apply(X, v, side), dtype=float)
        pre = LinearOperator((dim, dim), matvec=lambda v: v / diag, dtype=float)
        x0 = strategy._x0.get(side)
        x, info = cg(op, rhs, x0=x0, rtol=strategy.pcg_tol, atol=0.0, M=pre, maxiter=10 * dim)
        strategy._x0[side] = x
        return x
    fac = strategy.factor
    if strategy.factor_side == side:
        return sla.cho_solve(fac, rhs)
    if side == P_SIDE:
        return rhs - X.T @ sla.cho_solve(fac, X @ rhs)
    return rhs - X @ sla.cho_solve(fac, X.T @ rhs)


def _balance(mu, rp, rd, lo=1e-4, hi=1e4):
    if rp > 10 * rd:
        return min(2 * mu, hi)
    if rd > 10 * rp:
        return max(mu / 2, lo)
    return mu


def _result(ds, reg, lam, beta, u, status, report, it, t0, history):
    r = ds.X @ beta - ds.Y
    return SolveResult(
        beta=beta,
        residual_y=r,
        dual_u=u,
        status=status,
        criterion=report,
        outer_iters=it,
        inner_iters=0,
        objective_primal=float(np.linalg.norm(r) + lam * penalty_value(reg, beta)),
        objective_dual=dual_objective(ds, reg, lam, u) if u is not None else -math.inf,
        wall_seconds=time.perf_counter() - t0,
        history=history,
    )


def padmm_solve(ds: Dataset, reg: Regularizer, cfg: SolverConfig, init=None) -> SolveResult:
    """ADMM on ``min ||y|| + lam p(alpha)`` s.t. ``X beta - y = Y``, ``beta = alpha``.

    ``init`` optionally supplies ``(beta, y, alpha, u, xi)``.
    """
    t0 = time.perf_counter()
    X, Y, lam = ds.X, ds.Y, cfg.lam
    reg.check_dim(ds.n)
    N, n = ds.N, ds.n
    mu, rho = cfg.admm_mu, cfg.admm_rho
    if init is None:
        beta, y, alpha = np.zeros(n), np.zeros(N), np.zeros(n)
        u, xi = np.zeros(N), np.zeros(n)
    else:
        beta, y, alpha, u, xi = (np.array(v, dtype=float) for v in init)
    strat = LinSolveStrategy.build(X, P_SIDE, cfg.admm_dense_threshold)
    status = Status.MAX_ITERATIONS
    report = None
    history = []
    it = 0
    for it in range(1, cfg.admm_max_iter + 1):
        beta_prev = beta
        beta = solve_gram_system(strat, X, X.T @ (Y + y - u / mu) + (alpha - xi / mu), P_SIDE)
        Xb = X @ beta
        y_old, a_old = y, alpha
        y = prox_l2(Xb - Y + u / mu, 1.0 / mu)
        alpha = prox_penalty(beta + xi / mu, reg, lam / mu)
        rp1 = Xb - Y - y
        rp2 = beta - alpha
        u = u + rho * mu * rp1
        xi = xi + rho * mu * rp2

        rnorm = float(np.linalg.norm(Xb - Y))
        # y collapses to exactly zero once the data are interpolated
        overfit = (not np.any(y)) or rnorm <= cfg.overfit_tol
        report = kkt_residual(ds, reg, lam, beta, dual_u=u, beta_prev=beta_prev,
                              overfit=overfit)
        if report.value <= cfg.tol:
            status = Status.OVERFIT if overfit else Status.CONVERGED
            break
        if it % cfg.admm_adapt_every == 0:
            rp = math.hypot(np.linalg.norm(rp1), np.linalg.norm(rp2))
            rd = mu * float(np.linalg.norm(X.T @ (y - y_old) + (alpha - a_old)))
            history.append({"k": it, "mu": mu, "rp": rp, "rd": rd, "value": report.value})
            mu = _balance(mu, rp, rd)
        if time.perf_counter() - t0 > cfg.max_time_seconds:
            status = Status.TIME_LIMIT
            break
    return _result(ds, reg, lam, beta, u, status, report, it, t0, history)


def dadmm_solve(ds: Dataset, reg: Regularizer, cfg: SolverConfig, init=None) -> SolveResult:
    """ADMM on the dual ``min <Y, u> + delta_B(x) + (lam p)^*(v)``
    s.t. ``X^T u + v = 0``, ``u = x``.

    The primal solution is the multiplier ``beta`` of the first constraint.
    ``init`` optionally supplies ``(u, v, x, beta, y)``.
    """
    t0 = time.perf_counter()
    X, Y, lam = ds.X, ds.Y, cfg.lam
    reg.check_dim(ds.n)
    N, n = ds.N, ds.n
    mu, rho = cfg.admm_mu, cfg.admm_rho
    if init is None:
        u, x, y = np.zeros(N), np.zeros(N), np.zeros(N)
        v, beta = np.zeros(n), np.zeros(n)
    else:
        u, v, x, beta, y = (np.array(w, dtype=float) for w in init)
    strat = LinSolveStrategy.build(X, N_SIDE, cfg.admm_dense_threshold)
    status = Status.MAX_ITERATIONS
    report = None
    history = []
    it = 0
    for it in range(1, cfg.admm_max_iter + 1):
        beta_prev = beta
        u = solve_gram_system(strat, X, -Y / mu + X @ (beta / mu - v) - (y / mu - x), N_SIDE)
        Xtu = X.T @ u
        v_old, x_old = v, x
        z = -Xtu + beta / mu
        v = z - prox_penalty(mu * z, reg, mu * lam) / mu
        x = project_ball(u + y / mu)
        rp1 = -Xtu - v
        rp2 = u - x
        beta = beta + rho * mu * rp1
        y = y + rho * mu * rp2

        rnorm = float(np.linalg.norm(X @ beta - Y))
        # an inactive ball constraint means the dual optimum is interior,
        # which happens exactly when the data are interpolated
        overfit = float(np.linalg.norm(u + y / mu)) < 1.0 or rnorm <= cfg.overfit_tol
        report = kkt_residual(ds, reg, lam, beta, dual_u=u, beta_prev=beta_prev,
                              overfit=overfit)
        if report.value <= cfg.tol:
            status = Status.OVERFIT if overfit else Status.CONVERGED
            break
        if it % cfg.admm_adapt_every == 0:
            rp = math.hypot(np.linalg.norm(rp1), np.linalg.norm(rp2))
            rd = mu * float(np.linalg.norm(X @ (v - v_old) - (x - x_old)))
            history.append({"k": it, "mu": mu, "rp": rp, "rd": rd, "value": report.value})
            mu = _balance(mu, rp, rd)
        if time.perf_counter() - t0 > cfg.max_time_seconds:
            status = Status.TIME_LIMIT
            break
    return _result(ds, reg, lam, beta, u, status, report, it, t0, history)
