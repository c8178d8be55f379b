"""Problem data, penalties, solver settings and the reporting helpers every
solver shares.

The solved problem is

    min_beta  ||Y - X beta|| + lambda * p(beta)

with ``p`` either the sparse group Lasso penalty
``w1 ||beta||_1 + w2 sum_l omega_l ||beta_{G_l}||`` or the fused Lasso penalty
``w1 ||beta||_1 + w2 sum_i |beta_i - beta_{i+1}|``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, ZeroColumnError

Matrix = Union[np.ndarray, sp.csc_matrix]


def _as_matrix(X) -> Matrix:
    if sp.issparse(X):
        X = sp.csc_matrix(X, dtype=float)
        X.sort_indices()
        return X
    return np.ascontiguousarray(np.asarray(X, dtype=float))


def column_sq_norms(X: Matrix) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=0)).ravel()
    return np.einsum("ij,ij->j", X, X)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix ``X`` (N x n, dense or CSC) and response ``Y`` (N,)."""

    X: Matrix
    Y: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        X = _as_matrix(self.X)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim != 2:
            raise DimensionMismatch("X must be two dimensional")
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        data = X.data if sp.issparse(X) else X
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(Y))):
            raise ValueError("X and Y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.X)

    def zero_columns(self) -> np.ndarray:
        return np.flatnonzero(column_sq_norms(self.X) == 0)

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        X = self.X[idx, :]
        return Dataset(X, self.Y[idx], self.normalized)

    def dense_X(self) -> np.ndarray:
        return self.X.toarray() if self.is_sparse else self.X


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """A partition of ``{0, ..., n-1}`` into groups with positive weights."""

    groups: tuple
    weights: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.intp).ravel() for g in self.groups)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(groups) == 0:
            raise ValueError("at least one group is required")
        if weights.shape[0] != len(groups):
            raise DimensionMismatch("one weight per group is required")
        if np.any(weights <= 0):
            raise ValueError("group weights must be positive")
        sizes = np.array([g.size for g in groups])
        if np.any(sizes == 0):
            raise ValueError("groups must be nonempty")
        perm = np.concatenate(groups)
        n = perm.size
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("groups must partition {0, ..., n-1}")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "_perm", perm)
        object.__setattr__(self, "_starts", np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        object.__setattr__(self, "_sizes", sizes)
        labels = np.empty(n, dtype=np.intp)
        for l, g in enumerate(groups):
            labels[g] = l
        object.__setattr__(self, "_labels", labels)

    @property
    def g(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return self._sizes

    @property
    def labels(self) -> np.ndarray:
        """Group index of every coordinate."""
        return self._labels

    def group_norms(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(np.add.reduceat(x[self._perm] ** 2, self._starts))

    @classmethod
    def from_labels(cls, labels, weights=None) -> "GroupStructure":
        """Build groups from a label per coordinate; weights default to
        sqrt(group size)."""
        labels = np.asarray(labels)
        uniq = np.unique(labels)
        groups = [np.flatnonzero(labels == u) for u in uniq]
        if weights is None:
            weights = [math.sqrt(g.size) for g in groups]
        return cls(tuple(groups), np.asarray(weights, dtype=float))

    @classmethod
    def contiguous(cls, n: int, size: int) -> "GroupStructure":
        """Consecutive blocks ``{0..size-1}, {size..2size-1}, ...``."""
        groups = [np.arange(s, min(s + size, n)) for s in range(0, n, size)]
        return cls(tuple(groups), np.sqrt([g.size for g in groups]))


class PenaltyKind(str, enum.Enum):
    SPARSE_GROUP = "sparse_group"
    FUSED = "fused"


@dataclass(frozen=True, eq=False)
class Regularizer:
    """Penalty descriptor. Use :meth:`sparse_group` or :meth:`fused`."""

    kind: PenaltyKind
    w1: float
    w2: float
    groups: Optional[GroupStructure] = None

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("need w1 >= 0, w2 >= 0 and w1 + w2 > 0")
        if self.kind == PenaltyKind.SPARSE_GROUP and self.groups is None:
            raise ValueError("sparse group penalty needs a GroupStructure")
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        object.__setattr__(self, "w1", float(self.w1))
        object.__setattr__(self, "w2", float(self.w2))

    @classmethod
    def sparse_group(cls, groups: GroupStructure, w1: float, w2: float) -> "Regularizer":
        return cls(PenaltyKind.SPARSE_GROUP, w1, w2, groups)

    @classmethod
    def fused(cls, w1: float, w2: float) -> "Regularizer":
        return cls(PenaltyKind.FUSED, w1, w2)

    @property
    def is_fused(self) -> bool:
        return self.kind == PenaltyKind.FUSED

    def check_dim(self, n: int) -> None:
        if self.groups is not None and self.groups.n != n:
            raise DimensionMismatch(
                f"vector has length {n} but the groups cover {self.groups.n} coordinates")

    def __call__(self, beta) -> float:
        return penalty_value(self, beta)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    TIME_LIMIT = "TimeLimit"
    OVERFIT = "Overfit"


class CriterionKind(str, enum.Enum):
    KKT = "Kkt"
    PD_GAP = "PdGap"
    VAR_GAP = "VarGap"


@dataclass(frozen=True)
class KKTReport:
    kind: CriterionKind
    value: float

    @property
    def marker(self) -> str:
        """Table prefix: none for the KKT residual, ``*`` for the duality gap,
        ``#`` for the successive change."""
        return {CriterionKind.KKT: "", CriterionKind.PD_GAP: "*",
                CriterionKind.VAR_GAP: "#"}[self.kind]


@dataclass
class SolverConfig:
    """Parameters shared by PPDNA and the two ADMM baselines.

    Defaults: ``tol=1e-7``, at most 100 outer PPA iterations and 30 minutes
    of wall time. The semismooth Newton constants follow the usual ranges
    ``eta in (0,1)``, ``varrho in (0,1]``, ``rho in (0,1)``, ``mu in (0, 1/2)``.
    """

    lam: float
    tol: float = 1e-7
    max_outer: int = 100
    max_inner_total: int = 5000
    max_inner: int = 50
    max_time_seconds: float = 1800.0
    sigma0: float = 1.0
    tau0: float = 1.0
    sigma_floor: float = 1e-4
    tau_floor: float = 1e-4
    sigma_decay: float = 0.7
    inner_c0: float = 1e-2
    ssn_eta: float = 0.1
    ssn_varrho: float = 0.5
    ls_rho: float = 0.5
    ls_mu: float = 1e-4
    ls_max_backtracks: int = 60
    warm_start: bool = True
    dense_threshold: int = 500
    cg_max_iters: int = 300
    damping: float = 1e-12
    admm_mu: float = 1.0
    admm_rho: float = 1.618
    admm_max_iter: int = 1_000_000
    admm_adapt_every: int = 50
    admm_dense_threshold: int = 4000
    overfit_tol: float = 0.0

    def __post_init__(self):
        checks = [
            (self.lam > 0, "lambda must be positive"),
            (self.tol > 0, "tol must be positive"),
            (self.max_outer >= 1, "max_outer must be >= 1"),
            (self.max_inner >= 1 and self.max_inner_total >= 1, "inner caps must be >= 1"),
            (self.max_time_seconds > 0, "max_time_seconds must be positive"),
            (self.sigma0 > 0 and self.tau0 > 0, "sigma0, tau0 must be positive"),
            (0 < self.sigma_floor <= self.sigma0, "need 0 < sigma_floor <= sigma0"),
            (0 < self.tau_floor <= self.tau0, "need 0 < tau_floor <= tau0"),
            (0 < self.sigma_decay <= 1, "sigma_decay must lie in (0, 1]"),
            (0 < self.ssn_eta < 1, "ssn_eta must lie in (0, 1)"),
            (0 < self.ssn_varrho <= 1, "ssn_varrho must lie in (0, 1]"),
            (0 < self.ls_rho < 1, "ls_rho must lie in (0, 1)"),
            (0 < self.ls_mu < 0.5, "ls_mu must lie in (0, 0.5)"),
            (self.damping >= 0, "damping must be nonnegative"),
            (self.admm_mu > 0, "admm_mu must be positive"),
            (0 < self.admm_rho < (1 + math.sqrt(5)) / 2 + 1e-12,
             "admm_rho must lie in (0, (1+sqrt 5)/2)"),
            (self.cg_max_iters >= 1, "cg_max_iters must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolveResult:
    beta: np.ndarray
    residual_y: np.ndarray
    dual_u: Optional[np.ndarray]
    status: Status
    criterion: KKTReport
    outer_iters: int
    inner_iters: int
    objective_primal: float
    objective_dual: float
    wall_seconds: float
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in (Status.CONVERGED, Status.OVERFIT)


def normalize_columns(ds: Dataset) -> Dataset:
    """Scale columns so that ``diag(X^T X / N) = 1``.

    Raises :class:`ZeroColumnError` on the first all-zero column.
    """
    sq = column_sq_norms(ds.X)
    zero = np.flatnonzero(sq == 0)
    if zero.size:
        raise ZeroColumnError(int(zero[0]))
    d = np.sqrt(ds.N / sq)
    if ds.is_sparse:
        X = ds.X @ sp.diags(d)
    else:
        X = ds.X * d[None, :]
    return Dataset(X, ds.Y.copy(), normalized=True)


def first_differences(beta: np.ndarray) -> np.ndarray:
    """``B beta = (beta_1 - beta_2, ..., beta_{n-1} - beta_n)``."""
    return beta[:-1] - beta[1:]


def penalty_value(reg: Regularizer, beta) -> float:
    beta = np.asarray(beta, dtype=float).ravel()
    reg.check_dim(beta.size)
    val = reg.w1 * np.abs(beta).sum() if reg.w1 else 0.0
    if reg.w2:
        if reg.is_fused:
            val += reg.w2 * np.abs(first_differences(beta)).sum()
        else:
            val += reg.w2 * float(reg.groups.weights @ reg.groups.group_norms(beta))
    return float(val)


def nnz_estimate(v) -> int:
    """Smallest ``j`` such that the ``j`` largest magnitudes carry 99.9% of
    the l1 mass; 0 for the zero vector."""
    a = np.abs(np.asarray(v, dtype=float).ravel())
    if a.size == 0 or not np.any(a):
        return 0
    order = np.argsort(-a, kind="stable")
    cs = np.cumsum(a[order])
    return int(np.searchsorted(cs, 0.999 * cs[-1], side="left")) + 1


def nnz_stats(beta, reg: Regularizer) -> tuple:
    """Return ``(nnz, nnzgrp)`` for sparse group penalties and
    ``(nnz, nnzB)`` for fused ones."""
    beta = np.asarray(beta, dtype=float).ravel()
    if reg.is_fused:
        return nnz_estimate(beta), nnz_estimate(first_differences(beta))
    return nnz_estimate(beta), nnz_estimate(reg.groups.group_norms(beta))


def primal_objective(ds: Dataset, reg: Regularizer, lam: float, beta) -> float:
    return float(np.linalg.norm(ds.X @ beta - ds.Y) + lam * penalty_value(reg, beta))


def dual_objective(ds: Dataset, reg: Regularizer, lam: float, u) -> float:
    """Objective of the dual problem at ``u`` after scaling ``u`` into the
    feasible set ``{||u|| <= 1, p_*(X^T u) <= lambda}``.

    Returns ``-inf`` if no finite scaling exists (pure fused penalty with
    ``X^T u`` outside the range of ``B^T``).
    """
    from .dro import dual_seminorm

    u = np.asarray(u, dtype=float)
    ps = dual_seminorm(ds.X.T @ u, reg)
    if not math.isfinite(ps):
        return -math.inf
    scale = max(1.0, float(np.linalg.norm(u)), ps / lam)
    return float(-(ds.Y @ u) / scale)


def kkt_residual(ds: Dataset, reg: Regularizer, lam: float, beta, *,
                 dual_u=None, beta_prev=None, overfit: Optional[bool] = None,
                 zero_tol: float = 0.0) -> KKTReport:
    """Termination measure at ``beta``.

    When the residual ``X beta - Y`` is nonzero this is the relative KKT
    residual ``||beta - prox_{lambda p}(beta - b)|| / (1 + ||beta|| + ||b||)``
    with ``b = X^T r / ||r||``. On an exact fit it falls back to the relative
    duality gap (needs ``dual_u``) or the relative successive change (needs
    ``beta_prev``; reported as ``inf`` without it). ``overfit`` forces the branch.
    """
    from .prox import prox_penalty

    beta = np.asarray(beta, dtype=float).ravel()
    r = ds.X @ beta - ds.Y
    rnorm = float(np.linalg.norm(r))
    if overfit is None:
        overfit = rnorm <= zero_tol
    if not overfit and rnorm > 0:
        bbar = ds.X.T @ (r / rnorm)
        p = prox_penalty(beta - bbar, reg, lam)
        val = np.linalg.norm(beta - p) / (1 + np.linalg.norm(beta) + np.linalg.norm(bbar))
        return KKTReport(CriterionKind.KKT, float(val))
    if dual_u is not None:
        pobj = rnorm + lam * penalty_value(reg, beta)
        try:
            dobj = dual_objective(ds, reg, lam, dual_u)
        except NotImplementedError:
            dobj = -math.inf
        if math.isfinite(dobj):
            val = (pobj - dobj) / (1 + abs(pobj) + abs(dobj))
            return KKTReport(CriterionKind.PD_GAP, float(max(val, 0.0)))
    if beta_prev is None:
        return KKTReport(CriterionKind.VAR_GAP, math.inf)
    beta_prev = np.asarray(beta_prev, dtype=float).ravel()
    val = np.linalg.norm(beta - beta_prev) / (
        1 + np.linalg.norm(beta) + np.linalg.norm(beta_prev))
    return KKTReport(CriterionKind.VAR_GAP, float(val))
