"""Inexact successive quadratic approximation for regularized optimization."""

from .dataio import Dataset, column_blocks, dump_libsvm, load_libsvm, parse_libsvm, synthetic_dataset
from .estimators import L1LogisticRegression, SquaredHingeSVC
from .models import (
    BlockDiagonalModel,
    DenseModel,
    FixedModelSource,
    IdentityModel,
    LbfgsModelSource,
    LbfgsState,
    block_diagonal_model,
    identity_model,
)
from .outer import (
    OuterConfig,
    OuterTrace,
    solve,
    solve_exact_linesearch_quadratic,
    solve_linesearch,
    solve_modify_h,
)
from .problems import (
    CompositeProblem,
    make_indefinite_quadratic_l1,
    make_l1_logreg,
    make_squared_hinge_dual,
    prox_l1,
    random_indefinite_quadratic,
)
from .subsolvers import Fixed, GapCheck, Increasing, reference_qstar, rpcd_solve, sparsa_solve

__version__ = "0.1.0"
