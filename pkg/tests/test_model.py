import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sqrtreg import (
    CriterionKind,
    Dataset,
    DimensionMismatch,
    GroupStructure,
    Regularizer,
    SolverConfig,
    ZeroColumnError,
    kkt_residual,
    nnz_estimate,
    nnz_stats,
    normalize_columns,
    penalty_value,
)
from sqrtreg.model import dual_objective, first_differences


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_dataset_validates_shapes_and_values():
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 1.0]]), np.ones(1))
    ds = Dataset(sp.random(5, 4, density=0.5, random_state=0), np.arange(5.0))
    assert ds.is_sparse and sp.isspmatrix_csc(ds.X)
    assert (ds.N, ds.n) == (5, 4)


def test_group_structure_must_partition():
    with pytest.raises(ValueError):
        GroupStructure((np.array([0, 1]), np.array([1, 2])), np.ones(2))
    with pytest.raises(ValueError):
        GroupStructure((np.array([0]), np.array([2])), np.ones(2))
    G = GroupStructure.from_labels([2, 0, 2, 1, 0])
    assert G.g == 3
    assert np.allclose(G.weights, np.sqrt([2, 1, 2]))
    assert np.array_equal(G.labels, [2, 0, 2, 1, 0])


def test_normalize_columns_scaling_and_idempotence(rng):
    X = rng.standard_normal((20, 6)) * rng.uniform(0.1, 10, size=6)
    ds = normalize_columns(Dataset(X, rng.standard_normal(20)))
    assert np.allclose((ds.X ** 2).sum(axis=0) / ds.N, 1.0, atol=1e-14)
    again = normalize_columns(ds)
    assert np.max(np.abs(again.X - ds.X)) <= 1e-14
    Xs = normalize_columns(Dataset(sp.csc_matrix(X), ds.Y))
    assert np.allclose(Xs.X.toarray(), ds.X, atol=1e-14)


def test_normalize_rejects_zero_column():
    X = np.ones((4, 3))
    X[:, 1] = 0
    with pytest.raises(ZeroColumnError) as exc:
        normalize_columns(Dataset(X, np.ones(4)))
    assert exc.value.column == 1


def test_penalty_values_by_hand():
    G = GroupStructure((np.array([0, 1]), np.array([2])), np.array([2.0, 1.0]))
    reg = Regularizer.sparse_group(G, 0.5, 0.5)
    # 0.5*(3+4+1) + 0.5*(2*5 + 1*1)
    assert penalty_value(reg, [3.0, -4.0, 1.0]) == pytest.approx(9.5)
    fl = Regularizer.fused(0.25, 0.75)
    # 0.25*6 + 0.75*(|1-(-2)| + |-2-3|)
    assert penalty_value(fl, [1.0, -2.0, 3.0]) == pytest.approx(1.5 + 6.0)
    assert np.array_equal(first_differences(np.array([1.0, -2.0, 3.0])), [3.0, -5.0])


@settings(max_examples=60, deadline=None)
@given(arrays(float, 9, elements=finite), arrays(float, 9, elements=finite),
       st.floats(-50, 50), st.sampled_from(["sgl", "fused"]))
def test_penalty_is_a_seminorm(x, y, a, kind):
    reg = (Regularizer.fused(0.3, 0.7) if kind == "fused"
           else Regularizer.sparse_group(GroupStructure.contiguous(9, 3), 0.3, 0.7))
    px, py = penalty_value(reg, x), penalty_value(reg, y)
    assert penalty_value(reg, x + y) <= px + py + 1e-9 * (1 + px + py)
    assert penalty_value(reg, a * x) == pytest.approx(abs(a) * px, rel=1e-12, abs=1e-12)


def test_nnz_estimator_examples():
    assert nnz_estimate([0.5, 0.5, 0.0]) == 2
    assert nnz_estimate(np.zeros(5)) == 0
    assert nnz_estimate([1.0, 1e-6, 0.0]) == 1
    assert nnz_estimate([3.0, -3.0, 3.0]) == 3


@settings(max_examples=40, deadline=None)
@given(arrays(float, 12, elements=finite), st.randoms(use_true_random=False))
def test_nnz_permutation_invariant(v, r):
    p = list(range(12))
    r.shuffle(p)
    assert nnz_estimate(v) == nnz_estimate(v[p])


def test_nnz_stats_pairs():
    G = GroupStructure.contiguous(6, 3)
    reg = Regularizer.sparse_group(G, 0, 1)
    assert nnz_stats(np.array([1.0, 1.0, 1.0, 0, 0, 0]), reg) == (3, 1)
    assert nnz_stats(np.array([2.0, 2.0, 0, 0]), Regularizer.fused(0, 1)) == (2, 1)


def test_kkt_zero_at_one_dimensional_optimum():
    ds = Dataset(np.array([[1.0]]), np.array([1.0]))
    reg = Regularizer.sparse_group(GroupStructure.contiguous(1, 1), 1.0, 0.0)
    for lam in (1.0, 2.5):
        rep = kkt_residual(ds, reg, lam, np.zeros(1))
        assert rep.kind is CriterionKind.KKT and rep.value == 0.0
    # below the threshold zero is no longer optimal
    assert kkt_residual(ds, reg, 0.5, np.zeros(1)).value > 0


def test_kkt_at_zero_without_penalty_effect(rng):
    X = rng.standard_normal((8, 5))
    Y = rng.standard_normal(8)
    ds = Dataset(X, Y)
    reg = Regularizer.fused(0.5, 0.5)
    # a tiny lambda leaves the prox input essentially unchanged
    bbar = np.linalg.norm(X.T @ Y / np.linalg.norm(Y))
    rep = kkt_residual(ds, reg, 1e-300, np.zeros(5))
    assert rep.value == pytest.approx(bbar / (1 + bbar), rel=1e-12)


def test_overfit_branch_selection():
    X = np.eye(3)
    Y = np.array([1.0, 2.0, 3.0])
    ds = Dataset(X, Y)
    reg = Regularizer.sparse_group(GroupStructure.contiguous(3, 1), 1.0, 0.0)
    beta = Y.copy()
    rep = kkt_residual(ds, reg, 0.1, beta)
    assert rep.kind is CriterionKind.VAR_GAP and math.isinf(rep.value)
    rep = kkt_residual(ds, reg, 0.1, beta, beta_prev=beta)
    assert rep.kind is CriterionKind.VAR_GAP and rep.value == 0.0
    u = np.array([0.0, 0.0, 1.0])
    rep = kkt_residual(ds, reg, 0.1, beta, dual_u=u)
    assert rep.kind is CriterionKind.PD_GAP
    # u is scaled by p_*(X^T u)/lam = 10, dual value -0.3, primal 0.6
    assert rep.value == pytest.approx((0.6 + 0.3) / (1 + 0.6 + 0.3))
    assert rep.marker == "*"


def test_dual_objective_scaling():
    ds = Dataset(np.eye(2), np.array([1.0, 0.0]))
    reg = Regularizer.sparse_group(GroupStructure.contiguous(2, 1), 1.0, 0.0)
    assert dual_objective(ds, reg, 1.0, np.array([-1.0, 0.0])) == pytest.approx(1.0)
    assert dual_objective(ds, reg, 0.5, np.array([-1.0, 0.0])) == pytest.approx(0.5)
    fused = Regularizer.fused(0.0, 1.0)
    assert dual_objective(ds, fused, 1.0, np.array([1.0, 0.0])) == -math.inf


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(lam=0.0)
    with pytest.raises(ValueError):
        SolverConfig(lam=1.0, admm_rho=1.7)
    cfg = SolverConfig(lam=1.0).with_(tol=1e-9)
    assert cfg.tol == 1e-9 and cfg.lam == 1.0
