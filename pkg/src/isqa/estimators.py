"""scikit-learn compatible wrappers around the solvers."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataio import Dataset, column_blocks
from .models import FixedModelSource, LbfgsModelSource, block_diagonal_model
from .outer import OuterConfig, solve
from .problems import make_l1_logreg, make_squared_hinge_dual
from .subsolvers import Fixed, Increasing, rpcd_solve, sparsa_solve

__all__ = ["L1LogisticRegression", "SquaredHingeSVC"]


def _policy(inner_iters):
    if inner_iters == "increasing":
        return Increasing()
    return Fixed(int(inner_iters))


class _BinaryLinearClassifier(ClassifierMixin, BaseEstimator):
    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only; got {len(self.classes_)} classes")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self.n_features_in_ = X.shape[1]
        return Dataset(sp.csr_matrix(X), signs)

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.asarray(X @ self.coef_).ravel()

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class L1LogisticRegression(_BinaryLinearClassifier):
    """l1-regularized logistic regression, no intercept.

    Minimizes ``C * sum log(1 + exp(-y_i x_i^T w)) + ||w||_1`` with an
    L-BFGS quadratic model and SpaRSA inner solves.

    Parameters
    ----------
    C : float
        Loss weight.
    algorithm : {"ls", "mod1", "mod2"}
        Step-size backtracking, or modification of the quadratic term.
    memory : int
        Number of L-BFGS curvature pairs.
    inner_iters : int or "increasing"
        SpaRSA iterations per subproblem.
    """

    def __init__(self, C=1.0, algorithm="ls", memory=10, inner_iters=10,
                 beta=0.5, gamma=1e-4, max_iter=500, tol=1e-6, random_state=0):
        self.C = C
        self.algorithm = algorithm
        self.memory = memory
        self.inner_iters = inner_iters
        self.beta = beta
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        ds = self._validate_fit(X, y)
        problem = make_l1_logreg(ds, self.C)
        cfg = OuterConfig(beta=self.beta, gamma=self.gamma, max_outer=self.max_iter,
                          stop_tol=self.tol, algorithm=self.algorithm)
        trace = solve(problem, LbfgsModelSource(problem.dimension, self.memory), sparsa_solve,
                      _policy(self.inner_iters), cfg, seed=self.random_state)
        self.coef_ = trace.x.copy()
        self.n_iter_ = trace.n_iter
        self.objective_ = trace.F_final
        self.trace_ = trace
        return self

    def predict_proba(self, X):
        z = self.decision_function(X)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.column_stack([1.0 - p, p])


class SquaredHingeSVC(_BinaryLinearClassifier):
    """Linear SVM with squared hinge loss, trained through its dual.

    The quadratic model keeps ``n_blocks`` diagonal blocks of the dual
    Hessian; each subproblem is solved by randomized coordinate descent and
    the step is chosen by exact line search. ``coef_`` is recovered from the
    dual variables as ``sum_i alpha_i y_i x_i``.
    """

    def __init__(self, C=1.0, n_blocks=16, inner_iters=10, max_iter=500, tol=1e-6,
                 random_state=0):
        self.C = C
        self.n_blocks = n_blocks
        self.inner_iters = inner_iters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        ds = self._validate_fit(X, y)
        problem = make_squared_hinge_dual(ds, self.C)
        ranges = column_blocks(ds, min(self.n_blocks, ds.n_samples))
        source = FixedModelSource(block_diagonal_model(problem, ranges))
        cfg = OuterConfig(max_outer=self.max_iter, stop_tol=self.tol, algorithm="exact-ls")
        trace = solve(problem, source, rpcd_solve, _policy(self.inner_iters), cfg,
                      seed=self.random_state)
        self.dual_coef_ = trace.x.copy()
        self.coef_ = problem.smooth.primal_weights(trace.x)
        self.n_iter_ = trace.n_iter
        self.trace_ = trace
        return self
