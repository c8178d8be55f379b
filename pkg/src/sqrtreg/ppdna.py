"""Proximal point method with a semismooth Newton inner solver.

Each outer step solves

    min_{beta, y}  ||y|| + lam p(beta) + sigma/2 ||beta - beta_k||^2
                   + tau/2 ||y - y_k||^2   s.t.  X beta - y = Y

through its smooth convex dual in the multiplier ``u``, and recovers
``(beta, y)`` from the two proximal maps evaluated at the dual solution.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import FactorizationFailure, LineSearchStall
from .model import (
    Dataset,
    Regularizer,
    SolveResult,
    SolverConfig,
    Status,
    dual_objective,
    kkt_residual,
    penalty_value,
)
from .prox import (
    LOSS,
    JacobianElement,
    jacobian_element,
    moreau_envelope,
    prox_l2,
    prox_penalty,
)

log = logging.getLogger(__name__)

# keep an explicit N x k factor below this many entries
_FACTOR_BUDGET = 50_000_000


@dataclass
class PpaState:
    beta: np.ndarray
    y: np.ndarray
    sigma: float
    tau: float
    k: int = 0
    inner_total: int = 0
    last_u: np.ndarray = None


@dataclass
class DualSubproblem:
    X: object
    Y: np.ndarray
    reg: Regularizer
    lam: float
    sigma: float
    tau: float
    beta_k: np.ndarray
    y_k: np.ndarray
    _shift: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # linear term <u, X beta_k - y_k - Y>
        self._shift = self.X @ self.beta_k - self.y_k - self.Y

    def evaluate(self, u):
        """Return ``(psi, grad, beta, y)`` at ``u``; ``beta`` and ``y`` are the
        prox outputs reused for primal recovery.

        ``psi`` is computed in the cancellation-free form
        ``<u, grad> - lam p(beta) - ||y|| - sigma/2 ||beta_k - beta||^2
        - tau/2 ||y_k - y||^2``, algebraically equal to the Moreau-envelope
        expression but free of the O(1/sigma) terms that cancel there.
        """
        u = np.asarray(u, dtype=float)
        s, t = self.sigma, self.tau
        bt = self.beta_k - (self.X.T @ u) / s
        yt = self.y_k + u / t
        beta = prox_penalty(bt, self.reg, self.lam / s)
        y = prox_l2(yt, 1.0 / t)
        grad = self.Y - self.X @ beta + y
        db = self.beta_k - beta
        dy = self.y_k - y
        psi = (u @ grad - self.lam * penalty_value(self.reg, beta) - np.linalg.norm(y)
               - 0.5 * s * (db @ db) - 0.5 * t * (dy @ dy))
        return float(psi), grad, beta, y

    def tilde(self, u):
        u = np.asarray(u, dtype=float)
        return self.beta_k - (self.X.T @ u) / self.sigma, self.y_k + u / self.tau

    def jacobian(self, u) -> JacobianElement:
        bt, yt = self.tilde(u)
        return jacobian_element(self.X, bt, yt, self.reg, self.lam, self.sigma, self.tau)


def psi_value(sub: DualSubproblem, u) -> float:
    """Dual subproblem objective evaluated literally through Moreau envelopes."""
    u = np.asarray(u, dtype=float)
    s, t = sub.sigma, sub.tau
    Xtu = sub.X.T @ u
    bt, yt = sub.tilde(u)
    return float(u @ u / (2 * t) + Xtu @ Xtu / (2 * s) - u @ sub._shift
                 - s * moreau_envelope(sub.reg, bt, sub.lam / s)
                 - t * moreau_envelope(LOSS, yt, 1.0 / t))


def psi_gradient(sub: DualSubproblem, u):
    """Return ``(grad, beta, y)``."""
    _, g, beta, y = sub.evaluate(u)
    return g, beta, y


def _penalty_factor(H: JacobianElement):
    """``C`` with ``X M X^T / sigma = C C^T``, or ``None`` if too large."""
    k = H.penalty.rank_bound()
    if H.N * max(k, 1) > _FACTOR_BUDGET:
        return None
    return H.penalty.factor(H.X) / math.sqrt(H.sigma)


def _trace(H: JacobianElement, C) -> float:
    if C is not None:
        tr = float(np.sum(C * C))
    else:
        tr = 0.0
        for b in H.penalty.blocks:
            XI = H.X[:, b.index]
            fro = XI.multiply(XI).sum() if sp.issparse(XI) else np.sum(XI * XI)
            tr += b.a * fro + b.c * float(np.sum((XI @ b.z) ** 2))
        tr /= H.sigma
    a, b, _ = H.loss.coefficients()
    return tr + (a * H.N + b) / H.tau


def newton_direction(H: JacobianElement, g, cfg: SolverConfig) -> np.ndarray:
    """Approximate solution of ``H d = -g``.

    A low-rank penalty part is handled by the Woodbury identity, small
    systems by a dense Cholesky factorization and everything else by
    conjugate gradients on the structured operator.
    """
    g = np.asarray(g, dtype=float)
    N = g.size
    if H.is_zero:
        # no curvature anywhere: scaled gradient step
        return -H.tau * g
    gnorm = float(np.linalg.norm(g))
    target = min(cfg.ssn_eta, gnorm ** (1 + cfg.ssn_varrho))
    C = _penalty_factor(H)
    eps = cfg.damping * _trace(H, C) / N
    a, b, yh = H.loss.coefficients()
    a, b = a / H.tau, b / H.tau

    if C is not None and C.shape[1] + 1 < N:
        alpha = a if a > 0 else eps
        if b > 0:
            C = np.hstack([C, math.sqrt(b) * yh[:, None]])

        def solve(r):
            if C.shape[1] == 0:
                return r / alpha
            K = alpha * np.eye(C.shape[1]) + C.T @ C
            fac = sla.cho_factor(K, lower=True, check_finite=False)
            return (r - C @ sla.cho_solve(fac, C.T @ r, check_finite=False)) / alpha

        def apply(x):
            return alpha * x + C @ (C.T @ x)

        d = solve(-g)
        res = apply(d) + g
        if np.linalg.norm(res) > target:
            d -= solve(res)
        return d

    if N <= cfg.dense_threshold:
        if C is None:
            C = H.penalty.factor(H.X) / math.sqrt(H.sigma)
        M = C @ C.T
        if b > 0 or a > 0:
            M += a * np.eye(N) + b * np.outer(yh, yh)
        M[np.diag_indices(N)] += eps
        try:
            fac = sla.cho_factor(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            M[np.diag_indices(N)] += max(eps, 1e-10) * 1e3
            try:
                fac = sla.cho_factor(M, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise FactorizationFailure("Newton matrix is not positive definite") from exc
        return sla.cho_solve(fac, -g, check_finite=False)

    if C is not None:
        def matvec(x):
            return C @ (C.T @ x) + a * x + (b * (yh @ x)) * yh + eps * x
    else:
        def matvec(x):
            return H.apply(x) + eps * x
    op = LinearOperator((N, N), matvec=matvec, dtype=float)
    d, _ = cg(op, -g, rtol=min(0.5, target / max(gnorm, 1e-300)), atol=0.0,
              maxiter=cfg.cg_max_iters)
    return d


def _armijo(sub, u, psi, d, gd, cfg):
    """Backtrack from the unit step; return ``(step, psi, grad, beta, y)``."""
    slack = 1e-13 * max(1.0, abs(psi))
    alpha = 1.0
    for _ in range(cfg.ls_max_backtracks + 1):
        trial = sub.evaluate(u + alpha * d)
        if trial[0] <= psi + cfg.ls_mu * alpha * gd + slack:
            return (alpha,) + trial
        alpha *= cfg.ls_rho
        if alpha < 1e-16:
            break
    raise LineSearchStall("Armijo backtracking underflowed")


def ssn_solve(sub: DualSubproblem, u0, inner_tol: float, cfg: SolverConfig,
              max_iters: int | None = None, trace: list | None = None):
    """Semismooth Newton with Armijo backtracking on the dual subproblem.

    Returns ``(u, beta, y, iters)``. ``trace`` collects gradient norms.
    """
    if inner_tol <= 0:
        raise ValueError("inner_tol must be positive")
    cap = cfg.max_inner if max_iters is None else max_iters
    u = np.array(u0, dtype=float)
    psi, g, beta, y = sub.evaluate(u)
    it = 0
    while True:
        gnorm = float(np.linalg.norm(g))
        if trace is not None:
            trace.append(gnorm)
        if gnorm <= inner_tol or it >= cap:
            break
        H = sub.jacobian(u)
        d = newton_direction(H, g, cfg)
        gd = float(g @ d)
        if not np.all(np.isfinite(d)) or gd >= 0:
            d = -sub.tau * g
            gd = float(g @ d)
        try:
            alpha, psi, g, beta, y = _armijo(sub, u, psi, d, gd, cfg)
        except LineSearchStall:
            # defective element: retry with a damped gradient step
            d = -sub.tau * g
            try:
                alpha, psi, g, beta, y = _armijo(sub, u, psi, d, float(g @ d), cfg)
            except LineSearchStall:
                log.warning("line search stalled at |grad|=%.3e", gnorm)
                it += 1
                break
        u = u + alpha * d
        it += 1
    return u, beta, y, it


def ppa_solve(ds: Dataset, reg: Regularizer, cfg: SolverConfig) -> SolveResult:
    """Solve ``min ||Y - X beta|| + lam p(beta)`` by the proximal point method."""
    t0 = time.perf_counter()
    X, Y = ds.X, ds.Y
    reg.check_dim(ds.n)
    lam = cfg.lam
    st = PpaState(beta=np.zeros(ds.n), y=-Y.copy(), sigma=cfg.sigma0, tau=cfg.tau0,
                  last_u=np.zeros(ds.N))
    report = kkt_residual(ds, reg, lam, st.beta)
    delta = report.value if math.isfinite(report.value) else 1.0
    status = Status.MAX_ITERATIONS
    history = []
    for k in range(cfg.max_outer):
        st.k = k
        inner_tol = max(min(0.5 * delta, 0.5 ** k) * cfg.inner_c0, 0.1 * cfg.tol)
        sub = DualSubproblem(X, Y, reg, lam, st.sigma, st.tau, st.beta, st.y)
        u0 = st.last_u if cfg.warm_start else np.zeros(ds.N)
        budget = min(cfg.max_inner, max(cfg.max_inner_total - st.inner_total, 0))
        u, beta, y, it = ssn_solve(sub, u0, inner_tol, cfg, max_iters=budget)
        st.inner_total += it
        beta_prev = st.beta
        st.beta, st.y, st.last_u = beta, y, u

        rnorm = float(np.linalg.norm(X @ beta - Y))
        overfit = (not np.any(y)) or rnorm <= cfg.overfit_tol
        report = kkt_residual(ds, reg, lam, beta, dual_u=u, beta_prev=beta_prev,
                              overfit=overfit)
        history.append({"k": k + 1, "sigma": st.sigma, "tau": st.tau, "inner": it,
                        "criterion": report.kind.value, "value": report.value,
                        "objective": rnorm + lam * penalty_value(reg, beta)})
        log.debug("outer %d: %s=%.3e inner=%d", k + 1, report.kind.value, report.value, it)
        if math.isfinite(report.value):
            delta = report.value
        if report.value <= cfg.tol:
            status = Status.OVERFIT if overfit else Status.CONVERGED
            break
        if time.perf_counter() - t0 > cfg.max_time_seconds:
            status = Status.TIME_LIMIT
            break
        if st.inner_total >= cfg.max_inner_total:
            break
        st.sigma = max(cfg.sigma_decay * st.sigma, cfg.sigma_floor)
        st.tau = max(cfg.sigma_decay * st.tau, cfg.tau_floor)

    r = X @ st.beta - Y
    return SolveResult(
        beta=st.beta,
        residual_y=r,
        dual_u=st.last_u,
        status=status,
        criterion=report,
        outer_iters=len(history),
        inner_iters=st.inner_total,
        objective_primal=float(np.linalg.norm(r) + lam * penalty_value(reg, st.beta)),
        objective_dual=dual_objective(ds, reg, lam, st.last_u),
        wall_seconds=time.perf_counter() - t0,
        history=history,
    )
