"""Proximal maps, Moreau envelopes and explicit generalized-Jacobian elements.

Penalty-side Jacobians are block diagonal with blocks ``a I + c z z^T`` on an
index set, which covers both penalties:

* sparse group Lasso: one block per group whose soft-thresholded part survives
  the group threshold, restricted to the coordinates that survive the l1
  threshold, ``a = 1 - k2/||z||``, ``c = k2/||z||^3``;
* fused Lasso: one block per maximal run of fused coordinates whose common
  value survives the l1 threshold, ``a = 0``, ``c = 1/m``, ``z = 1``
  (within-run averaging).

So ``X M X^T = A A^T`` for an explicit ``N x k`` factor ``A`` where ``k`` is
(active coordinates + active groups) or (active runs). Newton systems exploit
that low rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import DimensionMismatch
from .model import Regularizer, first_differences, penalty_value


def prox_l1(x, kappa: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if kappa == 0:
        return x.copy()
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def prox_l2(x, kappa: float) -> np.ndarray:
    """Block soft threshold ``(1 - kappa/||x||)^+ x``; zero when ``||x|| <= kappa``."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm <= kappa:
        return np.zeros_like(x)
    return (1.0 - kappa / nrm) * x


prox_sqrt_loss = prox_l2


def project_ball(x) -> np.ndarray:
    """Euclidean projection onto the unit ball."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    return x / nrm if nrm > 1 else x.copy()


def _group_shrink_factors(z: np.ndarray, groups, thresholds: np.ndarray):
    norms = groups.group_norms(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(norms > thresholds, 1.0 - thresholds / norms, 0.0)
    return norms, f


def prox_sparse_group(x, reg: Regularizer, kappa: float) -> np.ndarray:
    """prox of ``kappa * p`` for the sparse group penalty: soft threshold by
    ``kappa*w1`` then group-wise block threshold by ``kappa*w2*omega_l``."""
    x = np.asarray(x, dtype=float)
    reg.check_dim(x.size)
    z = prox_l1(x, kappa * reg.w1)
    if reg.w2 == 0:
        return z
    groups = reg.groups
    _, f = _group_shrink_factors(z, groups, kappa * reg.w2 * groups.weights)
    return z * f[groups.labels]


@njit(cache=True)
def _tv1d(y, lam):
    # direct (taut-string type) solver of min_x 0.5||y-x||^2 + lam sum|x_{k+1}-x_k|
    n = y.shape[0]
    x = np.empty(n)
    if n == 0:
        return x
    if lam <= 0.0 or n == 1:
        for i in range(n):
            x[i] = y[i]
        return x
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    x[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    x[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    x[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return x
        umin += y[k + 1] - vmin
        if umin < minlam:
            while True:
                x[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kplus = k0
            kminus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += y[k + 1] - vmax
            if umax > lam:
                while True:
                    x[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                kminus = k0
                vmax = y[k0]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


def prox_tv(x, kappa: float) -> np.ndarray:
    """prox of ``kappa * ||B .||_1`` (1-D total variation denoising)."""
    x = np.ascontiguousarray(x, dtype=float)
    return _tv1d(x, float(kappa))


def prox_fused(x, reg: Regularizer, kappa: float) -> np.ndarray:
    """prox of ``kappa * p`` for the fused penalty: TV step then soft threshold."""
    z = prox_tv(x, kappa * reg.w2) if reg.w2 else np.array(x, dtype=float)
    return prox_l1(z, kappa * reg.w1)


def prox_penalty(x, reg: Regularizer, kappa: float) -> np.ndarray:
    if kappa == 0:
        return np.array(x, dtype=float)
    if reg.is_fused:
        return prox_fused(x, reg, kappa)
    return prox_sparse_group(x, reg, kappa)


LOSS = "loss"


def moreau_envelope(f: Union[Regularizer, str], x, kappa: float) -> float:
    """``M_{kappa f}(x) = kappa f(prox) + 0.5 ||x - prox||^2``.

    ``f`` is a :class:`Regularizer` or ``"loss"`` for the Euclidean norm.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(f, str):
        if f != LOSS:
            raise ValueError(f"unknown function tag {f!r}")
        p = prox_l2(x, kappa)
        fval = np.linalg.norm(p)
    else:
        p = prox_penalty(x, f, kappa)
        fval = penalty_value(f, p)
    return float(kappa * fval + 0.5 * np.sum((x - p) ** 2))


# --------------------------------------------------------------------------
# Jacobian elements


@dataclass(frozen=True)
class Block:
    """``a I + c z z^T`` acting on the coordinates ``index``."""

    index: np.ndarray
    a: float
    c: float
    z: np.ndarray


@dataclass(frozen=True)
class PenaltyJacobian:
    n: int
    blocks: tuple

    @property
    def is_zero(self) -> bool:
        return len(self.blocks) == 0

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.n)
        for b in self.blocks:
            xi = x[b.index]
            out[b.index] = b.a * xi + (b.c * (b.z @ xi)) * b.z
        return out

    def dense(self) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        for b in self.blocks:
            M[np.ix_(b.index, b.index)] = b.a * np.eye(b.index.size) + b.c * np.outer(b.z, b.z)
        return M

    def factor(self, X) -> np.ndarray:
        """Dense ``A`` with ``X M X^T = A A^T``."""
        cols = []
        for b in self.blocks:
            XI = X[:, b.index]
            if sp.issparse(XI):
                XI = XI.toarray()
            if b.a > 0:
                cols.append(math.sqrt(b.a) * XI)
            if b.c > 0:
                cols.append((math.sqrt(b.c) * (XI @ b.z))[:, None])
        if not cols:
            return np.zeros((X.shape[0], 0))
        return np.hstack(cols)

    def rank_bound(self) -> int:
        return sum((b.index.size if b.a > 0 else 0) + (1 if b.c > 0 else 0)
                   for b in self.blocks)

    def apply_XMXt(self, X, w) -> np.ndarray:
        """``X M X^T w`` touching only the active columns."""
        out = np.zeros(X.shape[0])
        for b in self.blocks:
            XI = X[:, b.index]
            t = XI.T @ w
            out += XI @ (b.a * t + (b.c * (b.z @ t)) * b.z)
        return out


@dataclass(frozen=True)
class LossJacobian:
    """Element of the Jacobian of ``prox_{kappa ||.||}`` at ``y``:
    ``(1 - kappa/||y||) I + (kappa/||y||^3) y y^T`` or zero when
    ``||y|| <= kappa``."""

    kappa: float
    y: Optional[np.ndarray]
    dim: int

    @property
    def is_zero(self) -> bool:
        return self.y is None

    def coefficients(self):
        """``(a, b, yhat)`` with the matrix equal to ``a I + b yhat yhat^T``."""
        if self.y is None:
            return 0.0, 0.0, np.zeros(self.dim)
        r = np.linalg.norm(self.y)
        c = self.kappa / r
        return 1.0 - c, c, self.y / r

    def apply(self, w) -> np.ndarray:
        a, b, yh = self.coefficients()
        return a * w + (b * (yh @ w)) * yh

    def dense(self) -> np.ndarray:
        a, b, yh = self.coefficients()
        return a * np.eye(self.dim) + b * np.outer(yh, yh)


def jac_loss(y_tilde, tau: float) -> LossJacobian:
    y_tilde = np.asarray(y_tilde, dtype=float)
    kappa = 1.0 / tau
    if np.linalg.norm(y_tilde) <= kappa:
        return LossJacobian(kappa, None, y_tilde.size)
    return LossJacobian(kappa, y_tilde.copy(), y_tilde.size)


def jac_prox_sparse_group(x, reg: Regularizer, kappa: float) -> PenaltyJacobian:
    """Jacobian element of ``prox_{kappa p}`` at ``x``: ``V(prox_l1(x)) U(x)``
    per group."""
    x = np.asarray(x, dtype=float)
    reg.check_dim(x.size)
    k1 = kappa * reg.w1
    z = prox_l1(x, k1)
    groups = reg.groups
    k2 = kappa * reg.w2 * groups.weights
    norms, _ = _group_shrink_factors(z, groups, k2)
    blocks = []
    for l in np.flatnonzero(norms > k2):
        g = groups.groups[l]
        act = g[np.abs(x[g]) > k1]
        zl = z[act]
        r = norms[l]
        blocks.append(Block(act, 1.0 - k2[l] / r, k2[l] / r ** 3, zl))
    return PenaltyJacobian(x.size, tuple(blocks))


def fused_runs(z, rtol: float = 1e-12):
    """Maximal runs of coordinates with ``(B z)_i == 0`` (up to
    ``rtol * (1 + ||z||_inf)``), as ``(starts, ends)`` with exclusive ends."""
    z = np.asarray(z, dtype=float)
    n = z.size
    if n == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    tol = rtol * (1.0 + np.max(np.abs(z)))
    breaks = np.flatnonzero(np.abs(first_differences(z)) > tol) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [n]])
    return starts, ends


def jac_prox_fused(x, reg: Regularizer, kappa: float) -> PenaltyJacobian:
    """Jacobian element ``U(z) W(x)`` of ``prox_{kappa p}``, ``z`` the TV step
    output and ``W`` the run-averaging projector."""
    x = np.asarray(x, dtype=float)
    k1 = kappa * reg.w1
    z = prox_tv(x, kappa * reg.w2) if reg.w2 else x.copy()
    starts, ends = fused_runs(z)
    # runs share one value, so the l1 mask is constant on each run
    keep = np.abs(z[starts]) > k1
    blocks = tuple(Block(np.arange(s, e), 0.0, 1.0 / (e - s), np.ones(e - s))
                   for s, e in zip(starts[keep], ends[keep]))
    return PenaltyJacobian(x.size, blocks)


def jac_prox_penalty(x, reg: Regularizer, kappa: float) -> PenaltyJacobian:
    if reg.is_fused:
        return jac_prox_fused(x, reg, kappa)
    return jac_prox_sparse_group(x, reg, kappa)


def dense_fused_W(z, rtol: float = 1e-12) -> np.ndarray:
    """``I - B^T (S B B^T S)^+ B`` assembled densely (reference formula)."""
    z = np.asarray(z, dtype=float)
    n = z.size
    B = np.eye(n - 1, n) - np.eye(n - 1, n, k=1)
    tol = rtol * (1.0 + np.max(np.abs(z)))
    S = np.diag((np.abs(B @ z) <= tol).astype(float))
    return np.eye(n) - B.T @ np.linalg.pinv(S @ B @ B.T @ S) @ B


@dataclass(frozen=True)
class JacobianElement:
    """``H = sigma^-1 X M X^T + tau^-1 V`` from the dual subproblem."""

    X: object
    sigma: float
    tau: float
    penalty: PenaltyJacobian
    loss: LossJacobian

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.penalty.is_zero and self.loss.is_zero

    def apply(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.penalty.apply_XMXt(self.X, w) / self.sigma + self.loss.apply(w) / self.tau

    def dense(self) -> np.ndarray:
        X = self.X.toarray() if sp.issparse(self.X) else self.X
        return X @ self.penalty.dense() @ X.T / self.sigma + self.loss.dense() / self.tau


def jacobian_element(X, x_tilde, y_tilde, reg: Regularizer, lam: float,
                     sigma: float, tau: float) -> JacobianElement:
    pen = jac_prox_penalty(x_tilde, reg, lam / sigma)
    if X.shape[1] != pen.n:
        raise DimensionMismatch("X and x_tilde disagree in dimension")
    return JacobianElement(X, sigma, tau, pen, jac_loss(y_tilde, tau))


def jac_sparse_group(X, x_tilde, y_tilde, reg, lam, sigma, tau) -> JacobianElement:
    if reg.is_fused:
        raise ValueError("expected a sparse group penalty")
    return jacobian_element(X, x_tilde, y_tilde, reg, lam, sigma, tau)


def jac_fused(X, x_tilde, y_tilde, reg, lam, sigma, tau) -> JacobianElement:
    if not reg.is_fused:
        raise ValueError("expected a fused penalty")
    return jacobian_element(X, x_tilde, y_tilde, reg, lam, sigma, tau)
