import numpy as np
import pytest

from sqrtreg import Dataset, GroupStructure, Regularizer, normalize_columns


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


def random_instance(seed, N=30, n=45, fused=False, w1=0.5, k=4, noise=0.3):
    """Normalized random regression problem with a sparse truth."""
    rng = philox(seed)
    X = rng.standard_normal((N, n))
    beta = np.zeros(n)
    beta[:k] = rng.choice([-2.0, 2.0], size=k)
    Y = X @ beta + noise * rng.standard_normal(N)
    ds = normalize_columns(Dataset(X, Y))
    if fused:
        reg = Regularizer.fused(w1, 1.0 - w1)
    else:
        reg = Regularizer.sparse_group(GroupStructure.contiguous(n, 3), w1, 1.0 - w1)
    return ds, reg


@pytest.fixture
def rng():
    return philox(12345)


_ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
