"""Synthetic examples, file loaders and splitting utilities.

All randomness goes through ``numpy.random.Generator(numpy.random.Philox(seed))``
so seeds are portable across platforms.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from .errors import EmptyDataset, ParseError
from .model import Dataset, GroupStructure

log = logging.getLogger(__name__)

TOEPLITZ_BASE = 0.5


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


class Example(str, enum.Enum):
    EX1 = "ex1"
    EX2 = "ex2"
    EX3 = "ex3"


@dataclass(frozen=True)
class SyntheticSpec:
    example: Example
    N: int
    g: int
    seed: int = 0
    toeplitz_base: float = TOEPLITZ_BASE

    def __post_init__(self):
        if self.N <= 0 or self.g <= 0:
            raise ValueError("N and g must be positive")

    @property
    def n(self) -> int:
        return 3 * self.g

    def generate(self):
        fn = {Example.EX1: generate_example1, Example.EX2: generate_example2,
              Example.EX3: generate_example3}[Example(self.example)]
        return fn(self.N, self.g, self.seed, rho=self.toeplitz_base)


def toeplitz_gaussian(rng: np.random.Generator, N: int, d: int,
                      rho: float = TOEPLITZ_BASE) -> np.ndarray:
    """``N`` rows from ``N(0, Sigma)``, ``Sigma_ij = rho^|i-j|``.

    The lower Cholesky factor of this Toeplitz matrix is the AR(1) filter
    ``x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j``, applied here column by column.
    """
    Z = rng.standard_normal((N, d))
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        X[:, j] = rho * X[:, j - 1] + c * Z[:, j]
    return X


def generate_example1(N: int, g: int, seed: int, rho: float = TOEPLITZ_BASE):
    """Gaussian design with Toeplitz correlation, groups of three adjacent
    coordinates, ``beta0 = 2.5`` on groups 1, 3 and 4 (1-based), unit noise."""
    if g < 4:
        raise ValueError("example 1 needs g >= 4")
    rng = make_rng(seed)
    n = 3 * g
    X = toeplitz_gaussian(rng, N, n, rho)
    beta0 = np.zeros(n)
    for l in (0, 2, 3):
        beta0[3 * l:3 * l + 3] = 2.5
    Y = X @ beta0 + rng.standard_normal(N)
    return Dataset(X, Y), GroupStructure.contiguous(n, 3), beta0


def _polynomial_design(rng, N, g, rho):
    Z = toeplitz_gaussian(rng, N, g, rho)
    omega = rng.standard_normal()
    A = (Z + omega) / math.sqrt(2.0)
    return np.hstack([A, A * A, A * A * A])


def _strided_groups(g: int) -> GroupStructure:
    groups = tuple(np.array([l, l + g, l + 2 * g]) for l in range(g))
    return GroupStructure(groups, np.full(g, math.sqrt(3.0)))


def _place(beta0, g, l, triple):
    # group l (1-based) holds coordinates l, l+g, l+2g
    for k, v in enumerate(triple):
        beta0[(l - 1) + k * g] = v


def generate_example2(N: int, g: int, seed: int, rho: float = TOEPLITZ_BASE):
    """Cubic expansion ``[A, A^2, A^3]`` of a shifted Toeplitz Gaussian with one
    shared shift per dataset; groups ``{l, l+g, l+2g}``; noise level 2."""
    if g < 6:
        raise ValueError("example 2 needs g >= 6")
    rng = make_rng(seed)
    X = _polynomial_design(rng, N, g, rho)
    beta0 = np.zeros(3 * g)
    _place(beta0, g, 3, (1.0, 1.0, 1.0))
    _place(beta0, g, 6, (2.0 / 3.0, -1.0, 0.5))
    Y = X @ beta0 + 2.0 * rng.standard_normal(N)
    return Dataset(X, Y), _strided_groups(g), beta0


def generate_example3(N: int, g: int, seed: int, rho: float = TOEPLITZ_BASE):
    """Same design as example 2 with four active groups that are themselves
    sparse."""
    if g < 12:
        raise ValueError("example 3 needs g >= 12")
    rng = make_rng(seed)
    X = _polynomial_design(rng, N, g, rho)
    beta0 = np.zeros(3 * g)
    _place(beta0, g, 3, (1.0, 0.0, 1.0))
    _place(beta0, g, 6, (2.0 / 3.0, -1.0, 0.0))
    _place(beta0, g, 9, (-1.0, 0.0, -0.5))
    _place(beta0, g, 12, (0.0, -1.0, 0.0))
    Y = X @ beta0 + 2.0 * rng.standard_normal(N)
    return Dataset(X, Y), _strided_groups(g), beta0


def _warn_zero_columns(ds: Dataset) -> Dataset:
    zc = ds.zero_columns()
    if zc.size:
        log.warning("%d all-zero columns (first: %d)", zc.size, zc[0])
    return ds


def load_libsvm(path: Union[str, Path], n_features: int | None = None) -> Dataset:
    """Read ``<label> <index>:<value> ...`` lines (1-based indices) into a CSC
    design matrix."""
    labels, rows, cols, vals = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                y = float(tok[0])
            except ValueError:
                raise ParseError(lineno, f"bad label {tok[0]!r}") from None
            if not math.isfinite(y):
                raise ParseError(lineno, "non-finite label")
            i = len(labels)
            labels.append(y)
            for t in tok[1:]:
                k, sep, v = t.partition(":")
                if not sep:
                    raise ParseError(lineno, f"expected index:value, got {t!r}")
                try:
                    j, x = int(k), float(v)
                except ValueError:
                    raise ParseError(lineno, f"bad entry {t!r}") from None
                if j < 1:
                    raise ParseError(lineno, f"indices are 1-based, got {j}")
                if not math.isfinite(x):
                    raise ParseError(lineno, "non-finite value")
                rows.append(i)
                cols.append(j - 1)
                vals.append(x)
    if not labels:
        raise EmptyDataset(f"{path} contains no samples")
    n = max(cols, default=-1) + 1
    if n_features is not None:
        if n_features < n:
            raise ValueError(f"file uses {n} features but n_features={n_features}")
        n = n_features
    X = sp.csc_matrix((vals, (rows, cols)), shape=(len(labels), max(n, 1)))
    X.sum_duplicates()
    return _warn_zero_columns(Dataset(X, np.array(labels)))


def write_libsvm(ds: Dataset, path: Union[str, Path]) -> None:
    """Write in the sparse text format with round-trip precision."""
    X = sp.csr_matrix(ds.X)
    with open(path, "w") as fh:
        for i in range(ds.N):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            ents = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi])
                            if v != 0)
            fh.write(f"{float(ds.Y[i])!r} {ents}".rstrip() + "\n")


def load_csv(path: Union[str, Path], response_column: Union[int, str] = 0,
             header: bool = False, delimiter: str = ",") -> Dataset:
    """Dense dataset from a CSV file; the response is picked by index or by
    header name."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if any(c.strip() for c in r)]
    start = 1 if header else 0
    names = rows[0] if header and rows else None
    body = rows[start:]
    if not body:
        raise EmptyDataset(f"{path} contains no samples")
    if isinstance(response_column, str):
        if names is None:
            raise ValueError("a column name needs header=True")
        try:
            col = [c.strip() for c in names].index(response_column)
        except ValueError:
            raise ValueError(f"no column named {response_column!r}") from None
    else:
        col = response_column
    width = len(body[0])
    data = np.empty((len(body), width))
    for i, r in enumerate(body, start + 1):
        if len(r) != width:
            raise ParseError(i, f"expected {width} fields, got {len(r)}")
        try:
            data[i - start - 1] = [float(c) for c in r]
        except ValueError as exc:
            raise ParseError(i, str(exc)) from None
        if not np.all(np.isfinite(data[i - start - 1])):
            raise ParseError(i, "non-finite value")
    Y = data[:, col]
    X = np.delete(data, col, axis=1)
    return _warn_zero_columns(Dataset(X, Y))


def random_group_assignment(n: int, g: int, seed: int) -> GroupStructure:
    """Assign each feature to one of ``g`` groups uniformly at random; empty
    groups are dropped and weights are ``sqrt(group size)``."""
    if not 1 <= g <= n:
        raise ValueError("need 1 <= g <= n")
    labels = make_rng(seed).integers(0, g, size=n)
    return GroupStructure.from_labels(labels)


def train_test_split(ds: Dataset, seed: int, train_fraction: float = 2.0 / 3.0):
    """Random split with ``ceil(train_fraction * N)`` training rows."""
    if ds.N < 3:
        raise ValueError("need at least 3 samples")
    perm = make_rng(seed).permutation(ds.N)
    k = math.ceil(round(train_fraction * ds.N, 9))
    return ds.rows(np.sort(perm[:k])), ds.rows(np.sort(perm[k:]))
