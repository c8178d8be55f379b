"""Reference oracles and self-checks for the numerical kernels.

The oracles are deliberately slow and structurally different from the fast
paths: proximal maps are recomputed by exact coordinate ascent on their dual,
Jacobian elements are compared with dense matrix formulas and with central
differences, and the robust-loss identity is checked against a scalar search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dro import dro_equivalence_check, worst_case_loss, worst_case_loss_numeric
from .model import Dataset, GroupStructure, Regularizer, penalty_value
from .prox import (
    dense_fused_W,
    jac_prox_penalty,
    moreau_envelope,
    prox_l1,
    prox_penalty,
)


def prox_oracle(x, reg: Regularizer, kappa: float, max_sweeps: int = 100_000) -> np.ndarray:
    """prox of ``kappa * p`` by block coordinate ascent on the dual

        max_z  0.5||x||^2 - 0.5||x - K z||^2,

    ``K z = kappa (w1 a + w2 D^T c)`` with ``|a_i| <= 1`` and ``c`` either in
    per-group balls scaled by ``omega_l`` or in a box (fused). The primal
    point is ``b = x - K z``; iteration stops once a full sweep leaves ``b``
    unchanged or the duality gap (an upper bound on ``0.5||b - prox||^2``)
    drops below ``1e-24``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    k1, k2 = kappa * reg.w1, kappa * reg.w2
    a = np.zeros(n)
    b = x.copy()
    if reg.is_fused:
        c = np.zeros(max(n - 1, 0))
    else:
        groups = reg.groups.groups
        c = [np.zeros(g.size) for g in groups]
    for _ in range(max_sweeps):
        b_old = b.copy()
        if k1:
            for i in range(n):
                r = b[i] + k1 * a[i]
                new = min(max(r / k1, -1.0), 1.0)
                b[i] = r - k1 * new
                a[i] = new
        if k2:
            if reg.is_fused:
                for i in range(n - 1):
                    # column of D^T for c_i is e_i - e_{i+1}
                    ri = b[i] + k2 * c[i]
                    rj = b[i + 1] - k2 * c[i]
                    new = min(max((ri - rj) / (2 * k2), -1.0), 1.0)
                    b[i] = ri - k2 * new
                    b[i + 1] = rj + k2 * new
                    c[i] = new
            else:
                for l, g in enumerate(groups):
                    s = k2 * reg.groups.weights[l]
                    r = b[g] + s * c[l]
                    v = r / s
                    nv = np.linalg.norm(v)
                    c[l] = v / nv if nv > 1 else v
                    b[g] = r - s * c[l]
        if np.array_equal(b, b_old):
            break
        primal = 0.5 * np.sum((b - x) ** 2) + kappa * penalty_value(reg, b)
        dual = 0.5 * (x @ x - b @ b)
        if primal - dual <= 1e-24:
            break
    return b


def jacobian_dense_formula(x, reg: Regularizer, kappa: float) -> np.ndarray:
    """Dense element of the generalized Jacobian of ``prox_{kappa p}`` at ``x``
    assembled from masks and projectors."""
    x = np.asarray(x, dtype=float)
    n = x.size
    k1 = kappa * reg.w1
    if reg.is_fused:
        from .prox import prox_tv

        z = prox_tv(x, kappa * reg.w2) if reg.w2 else x.copy()
        U = np.diag((np.abs(z) > k1).astype(float))
        W = dense_fused_W(z) if n > 1 else np.eye(n)
        return U @ W
    J = np.zeros((n, n))
    U = (np.abs(x) > k1).astype(float)
    z = prox_l1(x, k1)
    for l, g in enumerate(reg.groups.groups):
        k2 = kappa * reg.w2 * reg.groups.weights[l]
        zg = z[g]
        r = np.linalg.norm(zg)
        if r > k2:
            V = (1 - k2 / r) * np.eye(g.size) + (k2 / r ** 3) * np.outer(zg, zg)
            J[np.ix_(g, g)] = V * U[g][None, :]
    return J


def jacobian_fd(x, reg: Regularizer, kappa: float, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (prox_penalty(x + e, reg, kappa) - prox_penalty(x - e, reg, kappa)) / (2 * h)
    return J


def _random_reg(rng, n, fused: bool) -> Regularizer:
    w1 = float(rng.uniform(0.0, 1.0))
    if fused:
        return Regularizer.fused(w1, 1.0 - w1)
    labels = rng.integers(0, max(1, n // 3), size=n)
    return Regularizer.sparse_group(GroupStructure.from_labels(labels), w1, 1.0 - w1)


def _differentiable(x, reg, kappa, margin=1e-4) -> bool:
    """True when no threshold in the prox is within ``margin`` of a kink."""
    x = np.asarray(x, dtype=float)
    k1 = kappa * reg.w1
    if reg.is_fused:
        from .prox import fused_runs, prox_tv

        k2 = kappa * reg.w2
        z = prox_tv(x, k2) if k2 else x
        if np.any(np.abs(np.abs(z) - k1) < margin):
            return False
        if not k2 or x.size < 2:
            return True
        # TV dual c = cumsum(x - z) / k2 must be strictly inside [-1, 1]
        # wherever neighbours are fused
        c = np.cumsum(x - z)[:-1] / k2
        starts, _ = fused_runs(z)
        fused = np.ones(x.size - 1, dtype=bool)
        fused[starts[1:] - 1] = False
        return not np.any(fused & (np.abs(c) > 1 - margin))
    if np.any(np.abs(np.abs(x) - k1) < margin):
        return False
    z = prox_l1(x, k1)
    norms = reg.groups.group_norms(z)
    return not np.any(np.abs(norms - kappa * reg.w2 * reg.groups.weights) < margin)


@dataclass(frozen=True)
class CheckResult:
    family: str
    trials: int
    max_deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{self.family:<16} {flag}  trials={self.trials}  "
                f"max_dev={self.max_deviation:.3e}  tol={self.tol:.0e}")


def check_prox(trials: int, seed: int, fused: bool) -> CheckResult:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 13))
        reg = _random_reg(rng, n, fused)
        x = rng.normal(size=n) * rng.uniform(0.5, 3.0)
        kappa = float(rng.uniform(0.05, 1.5))
        worst = max(worst, float(np.max(np.abs(prox_penalty(x, reg, kappa)
                                               - prox_oracle(x, reg, kappa)))))
    return CheckResult("prox-fused" if fused else "prox-sgl", trials, worst, 1e-6)


def check_jacobian(trials: int, seed: int, fused: bool) -> list:
    """Dense-formula agreement (tol 1e-10) and central differences (tol 1e-5)."""
    rng = np.random.Generator(np.random.Philox(seed))
    dense_dev = fd_dev = 0.0
    done = 0
    while done < trials:
        n = int(rng.integers(2, 21))
        reg = _random_reg(rng, n, fused)
        x = rng.normal(size=n) * 2.0
        kappa = float(rng.uniform(0.05, 1.0))
        if not _differentiable(x, reg, kappa):
            continue
        J = jac_prox_penalty(x, reg, kappa).dense()
        dense_dev = max(dense_dev, float(np.max(np.abs(J - jacobian_dense_formula(x, reg, kappa)))))
        fd_dev = max(fd_dev, float(np.max(np.abs(J - jacobian_fd(x, reg, kappa)))))
        done += 1
    tag = "jac-fused" if fused else "jac-sgl"
    return [CheckResult(tag + "-dense", trials, dense_dev, 1e-10),
            CheckResult(tag + "-fd", trials, fd_dev, 1e-5)]


def check_gradient(trials: int, seed: int) -> list:
    """Finite differences of the dual subproblem objective (relative, tol
    1e-4) and the Moreau-envelope gradient identity (tol 1e-6 under central
    differences with step 1e-5)."""
    from .ppdna import DualSubproblem, psi_gradient, psi_value

    rng = np.random.Generator(np.random.Philox(seed))
    gdev = mdev = 0.0
    h = 1e-5
    for t in range(trials):
        N, n = int(rng.integers(3, 12)), int(rng.integers(3, 15))
        reg = _random_reg(rng, n, fused=bool(t % 2))
        X = rng.normal(size=(N, n))
        Y = rng.normal(size=N)
        sub = DualSubproblem(X, Y, reg, float(rng.uniform(0.1, 2.0)),
                             float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 2.0)),
                             rng.normal(size=n), rng.normal(size=N))
        u = rng.normal(size=N)
        g, _, _ = psi_gradient(sub, u)
        fd = np.array([(psi_value(sub, u + h * e) - psi_value(sub, u - h * e)) / (2 * h)
                       for e in np.eye(N)])
        gdev = max(gdev, float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g))))
        x = rng.normal(size=n)
        kap = float(rng.uniform(0.1, 2.0))
        fdm = np.array([(moreau_envelope(reg, x + h * e, kap)
                         - moreau_envelope(reg, x - h * e, kap)) / (2 * h) for e in np.eye(n)])
        mdev = max(mdev, float(np.max(np.abs(fdm - (x - prox_penalty(x, reg, kap))))))
    return [CheckResult("gradient-psi", trials, gdev, 1e-4),
            CheckResult("gradient-moreau", trials, mdev, 1e-6)]


def check_dro(trials: int, seed: int, instances: int = 10) -> list:
    """Closed form against the objective (``dev / (1 + obj)``, tol 1e-9) and
    against the scalar search (relative, tol 1e-8)."""
    rng = np.random.Generator(np.random.Philox(seed))
    ident = orc = 0.0
    per = max(1, math.ceil(trials / instances))
    for inst in range(instances):
        N, n = 10, 15
        X = rng.normal(size=(N, n))
        Y = rng.normal(size=N)
        ds = Dataset(X, Y)
        reg = _random_reg(rng, n, fused=bool(inst % 2))
        lam = float(rng.uniform(0.1, 3.0))
        delta = lam * lam / N
        for _ in range(per):
            b = rng.normal(size=n) * rng.uniform(0, 2)
            obj = float(np.linalg.norm(Y - X @ b)) + lam * penalty_value(reg, b)
            rep = dro_equivalence_check(ds, reg, lam, [b])
            ident = max(ident, rep.max_deviation / (1 + obj))
            closed, _ = worst_case_loss(ds, reg, b, delta)
            num = worst_case_loss_numeric(ds, reg, b, delta)
            orc = max(orc, abs(num - closed) / max(abs(closed), 1e-300))
    return [CheckResult("dro-identity", per * instances, ident, 1e-9),
            CheckResult("dro-oracle", per * instances, orc, 1e-8)]


FAMILIES = ("dro", "prox", "jacobian", "gradient")


def run_family(family: str, trials: int, seed: int) -> list:
    if family == "dro":
        return check_dro(trials, seed)
    if family == "prox":
        return [check_prox(trials, seed, False), check_prox(trials, seed + 1, True)]
    if family == "jacobian":
        return check_jacobian(trials, seed, False) + check_jacobian(trials, seed + 1, True)
    if family == "gradient":
        return check_gradient(trials, seed)
    raise ValueError(f"unknown family {family!r}")
