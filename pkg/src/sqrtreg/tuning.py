"""Closed-form and Monte Carlo rules for the regularization level, and
k-fold cross validation."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import fdtri, ndtri

from .errors import InvalidRegime
from .model import Dataset, GroupStructure, Regularizer, SolverConfig

MC_DEFAULT = 100_000
MC_MAX_ROWS = 10_000


class Rule(str, enum.Enum):
    BEL = "Bel"
    STS = "StS"
    BLS = "BlS"
    BUN = "Bun"
    STG = "StG"
    BLG = "BlG"
    JIA = "Jia"


@dataclass(frozen=True)
class LambdaRule:
    rule: Rule
    a: float = 0.05
    mc_samples: int = MC_DEFAULT

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError("a must lie in (0, 1)")
        if self.mc_samples < 1000:
            raise ValueError("mc_samples must be at least 1000")


def _check_level(a: float) -> None:
    if not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")


def norm_ppf(q):
    """Standard normal quantile."""
    return ndtri(q)


def f_ppf(q, d1: float, d2: float):
    """Quantile of the F distribution with ``(d1, d2)`` degrees of freedom."""
    return fdtri(d1, d2, q)


def lambda_bel(n: int, a: float = 0.05) -> float:
    """``1.1 * Phi^-1(1 - a / (2n))``."""
    if n < 1:
        raise ValueError("n must be positive")
    _check_level(a)
    return float(1.1 * norm_ppf(1.0 - a / (2.0 * n)))


def lambda_st(count: int, N: int, a: float = 0.05) -> float:
    """``sqrt(2) t / Delta + sqrt(2) (2 + sqrt(log count))`` with
    ``t = sqrt(log(4/a))`` and ``Delta = sqrt(1 - t sqrt(4/N))``.

    ``count`` is ``n`` for the coordinate-wise rule and ``g`` for the group rule.
    """
    _check_level(a)
    t = math.sqrt(math.log(4.0 / a))
    d2 = 1.0 - t * math.sqrt(4.0 / N)
    if d2 <= 0:
        raise InvalidRegime(f"1 - t*sqrt(4/N) = {d2:.4g} <= 0; N is too small for a={a}")
    return math.sqrt(2.0) * t / math.sqrt(d2) + math.sqrt(2.0) * (2.0 + math.sqrt(math.log(count)))


def lambda_jia(n: int, N: int, a: float = 0.05) -> float:
    """``2.2 sqrt(2 log n / (1 + t))``, ``t = sqrt(4 log(1/a)/N) + 4 log(1/a)/N``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    _check_level(a)
    s = 4.0 * math.log(1.0 / a) / N
    t = math.sqrt(s) + s
    return 2.2 * math.sqrt(2.0 * math.log(n) / (1.0 + t))


def _block_gram(X, idx) -> np.ndarray:
    XG = X[:, idx]
    if sp.issparse(XG):
        XG = XG.toarray()
    if XG.shape[1] <= XG.shape[0]:
        return XG.T @ XG
    return XG @ XG.T


def zeta_max(X, groups: GroupStructure) -> float:
    """``max_l ||X_{G_l}||_2^2 / N`` with the spectral norm."""
    N = X.shape[0]
    return max(float(np.linalg.eigvalsh(_block_gram(X, g))[-1]) for g in groups.groups) / N


def lambda_bun(ds: Dataset, groups: GroupStructure, a: float = 0.05) -> float:
    """``sqrt(zeta_max tau0 / (T_min tau0 + N - T_max)) sqrt(N)`` with
    ``tau0 = F^-1_{T_min, N - T_min}(1 - a/g)``."""
    _check_level(a)
    N = ds.N
    sizes = groups.sizes
    tmin, tmax = int(sizes.min()), int(sizes.max())
    if N <= tmax:
        raise InvalidRegime(f"N={N} must exceed the largest group size {tmax}")
    tau0 = float(f_ppf(1.0 - a / groups.g, tmin, N - tmin))
    den = tmin * tau0 + N - tmax
    if den <= 0:
        raise InvalidRegime("T_min tau0 + N - T_max must be positive")
    return math.sqrt(zeta_max(ds.X, groups) * tau0 / den) * math.sqrt(N)


def _mc_statistic(Z: np.ndarray, reg: Optional[Regularizer]) -> np.ndarray:
    """``p_*(z)^2`` for each column ``z`` of ``Z``."""
    if reg is None:
        return np.max(np.abs(Z), axis=0) ** 2
    from .dro import dual_seminorm, sparse_group_dual_columns

    if not reg.is_fused:
        return sparse_group_dual_columns(Z, reg) ** 2
    if reg.w2 == 0:
        return (np.max(np.abs(Z), axis=0) / reg.w1) ** 2
    return np.array([dual_seminorm(Z[:, j], reg) ** 2 for j in range(Z.shape[1])])


def lambda_blanchet(ds: Dataset, reg: Optional[Regularizer] = None, a: float = 0.05,
                    mc_samples: int = MC_DEFAULT, seed: int = 0,
                    batch: int = 4096) -> float:
    """Square root of the ``(1 - a)``-quantile of ``pi/(pi-2) p_*(Z)^2`` with
    ``Z ~ N(0, X^T X / N)``.

    ``reg=None`` uses the l_inf norm. ``Z`` is drawn as ``X^T w / sqrt(N)``
    (or through the Cholesky factor of the Gram when ``n < N``) so that its
    covariance is the empirical one exactly. Rows are subsampled to ``10^4``
    when ``N`` is larger.
    """
    _check_level(a)
    rng = np.random.Generator(np.random.Philox(seed))
    X = ds.X
    if ds.N > MC_MAX_ROWS:
        X = X[np.sort(rng.choice(ds.N, MC_MAX_ROWS, replace=False))]
    if sp.issparse(X):
        X = X.toarray()
    N, n = X.shape
    if n < N:
        S = X.T @ X / N
        ridge = 1e-10 * np.trace(S) / n
        L = np.linalg.cholesky(S + ridge * np.eye(n))
    else:
        L = X.T / math.sqrt(N)
    stats = np.empty(mc_samples)
    for s in range(0, mc_samples, batch):
        m = min(batch, mc_samples - s)
        W = rng.standard_normal((L.shape[1], m))
        stats[s:s + m] = _mc_statistic(L @ W, reg)
    stats *= math.pi / (math.pi - 2)
    eta = np.quantile(stats, 1.0 - a, method="inverted_cdf")
    return float(math.sqrt(eta))


def cv2_grid() -> np.ndarray:
    """``10^-1, 10^-0.95, ..., 10^1``."""
    return 10.0 ** np.round(np.arange(-1.0, 1.0 + 1e-9, 0.05), 10)


def cv1_grid() -> np.ndarray:
    """``w1 = 0, 0.1, ..., 1``."""
    return np.round(np.arange(0.0, 1.0 + 1e-9, 0.1), 10)


def fold_assignment(N: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    lab = np.empty(N, dtype=np.intp)
    lab[rng.permutation(N)] = np.arange(N) % folds
    return lab


@dataclass
class CVResult:
    best: tuple
    curve: dict = field(default_factory=dict)


def cross_validate(ds: Dataset, make_reg: Callable[[float], Regularizer],
                   grid: Sequence[tuple], folds: int = 8, seed: int = 0,
                   solver=None, cfg: Optional[SolverConfig] = None,
                   n_jobs: int = 1) -> CVResult:
    """Pick the ``(lam, w1)`` cell with the smallest mean validation MSE.

    ``make_reg(w1)`` builds the penalty for a cell. Ties go to the smaller
    ``lam`` and then the smaller ``w1``.
    """
    if ds.N < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold CV")
    if solver is None:
        from .ppdna import ppa_solve as solver
    base = cfg if cfg is not None else SolverConfig(lam=1.0)
    lab = fold_assignment(ds.N, folds, seed)
    splits = [(ds.rows(np.flatnonzero(lab != f)), ds.rows(np.flatnonzero(lab == f)))
              for f in range(folds)]

    def cell_loss(cell):
        lam, w1 = cell
        reg = make_reg(w1)
        losses = []
        for train, test in splits:
            res = solver(train, reg, base.with_(lam=float(lam)))
            r = test.X @ res.beta - test.Y
            losses.append(float(r @ r) / test.N)
        return float(np.mean(losses))

    cells = [(float(l), float(w)) for l, w in grid]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            losses = list(ex.map(cell_loss, cells))
    else:
        losses = [cell_loss(c) for c in cells]
    curve = dict(zip(cells, losses))
    best = min(cells, key=lambda c: (curve[c], c[0], c[1]))
    return CVResult(best, curve)


def classification_accuracy(beta, X_test, Y_test) -> float:
    """Percentage of test labels matched by ``sign(X_test beta)``; a zero
    prediction counts as a miss."""
    Y_test = np.asarray(Y_test, dtype=float)
    pred = np.sign(X_test @ np.asarray(beta, dtype=float))
    return float((1.0 - np.count_nonzero(pred - Y_test) / Y_test.size) * 100.0)
