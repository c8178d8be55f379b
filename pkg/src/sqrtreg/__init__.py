"""Square-root regularized regression.

Solves ``min ||Y - X beta|| + lam p(beta)`` for sparse group Lasso and fused
Lasso penalties with a proximal point / semismooth Newton method, two ADMM
baselines, tuning rules for ``lam`` and a Wasserstein-robust reading of the
model.
"""

from .admm import dadmm_solve, padmm_solve
from .data import (
    generate_example1,
    generate_example2,
    generate_example3,
    load_csv,
    load_libsvm,
    random_group_assignment,
    train_test_split,
    write_libsvm,
)
from .dro import dro_equivalence_check, dual_seminorm, phi_gamma, worst_case_loss
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    FactorizationFailure,
    InvalidRegime,
    LineSearchStall,
    ParseError,
    SqrtRegError,
    Unsupported,
    ZeroColumnError,
)
from .model import (
    CriterionKind,
    Dataset,
    GroupStructure,
    KKTReport,
    PenaltyKind,
    Regularizer,
    SolveResult,
    SolverConfig,
    Status,
    kkt_residual,
    nnz_estimate,
    nnz_stats,
    normalize_columns,
    penalty_value,
    primal_objective,
)
from .ppdna import ppa_solve
from .prox import moreau_envelope, prox_fused, prox_penalty, prox_sparse_group
from .tuning import (
    classification_accuracy,
    cross_validate,
    lambda_bel,
    lambda_blanchet,
    lambda_bun,
    lambda_jia,
    lambda_st,
)

__version__ = "0.1.0"
