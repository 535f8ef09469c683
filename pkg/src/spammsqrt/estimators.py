"""scikit-learn style wrappers.

``fit`` takes a symmetric positive definite matrix ``s``; ``transform`` maps
columns ``X`` (shape ``(n, m)``) to ``s^(-1/2) X``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import precond, qtree
from . import sqrt_iter as si


def _check_spd_input(s) -> np.ndarray:
    s = check_array(s, dtype=np.float64, ensure_2d=True)
    if s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    if not np.allclose(s, s.T, rtol=1e-12, atol=0.0):
        raise ValueError("matrix is not symmetric")
    return s


class InverseSqrt(TransformerMixin, BaseEstimator):
    """Newton-Schulz inverse square root with SpAMM products.

    Attributes
    ----------
    z_, y_ : ndarray
        Approximate ``s^(-1/2)`` and ``s^(1/2)``.
    history_ : list of StepRecord
    converged_ : bool
    """

    def __init__(self, mode="dual", tau=0.0, tau_s=None, block_size=16, max_iter=100,
                 tol=1e-10, scaling=True):
        self.mode = mode
        self.tau = tau
        self.tau_s = tau_s
        self.block_size = block_size
        self.max_iter = max_iter
        self.tol = tol
        self.scaling = scaling

    def fit(self, s, y=None):
        s = _check_spd_input(s)
        cfg = si.IterationConfig(mode=self.mode, tau=self.tau, tau_s=self.tau_s,
                                 block_size=self.block_size, max_iter=self.max_iter,
                                 convergence_tol=self.tol,
                                 scaling_enabled=self.scaling)
        res = si.run(qtree.build(s, self.block_size), cfg)
        self.z_ = qtree.to_dense(res.z)
        self.y_ = qtree.to_dense(res.y)
        self.history_ = res.history
        self.converged_ = res.converged
        self.n_iter_ = res.iterations
        self.n_features_in_ = s.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "z_")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[0]} rows, expected {self.n_features_in_}")
        return self.z_ @ X


class RegularizedInverseFactor(TransformerMixin, BaseEstimator):
    """Product of Tikhonov-regularized slices over a decreasing shift ladder."""

    def __init__(self, mu_ladder=(0.1, 0.01, 0.001), tau0=0.1, tau_apply=None,
                 tau_s=None, block_size=16):
        self.mu_ladder = mu_ladder
        self.tau0 = tau0
        self.tau_apply = tau_apply
        self.tau_s = tau_s
        self.block_size = block_size

    def fit(self, s, y=None):
        s = _check_spd_input(s)
        self.representation_ = precond.ladder(qtree.build(s, self.block_size),
                                              self.mu_ladder, self.tau0,
                                              self.tau_apply, self.tau_s)
        self.factor_ = precond.compose(self.representation_)
        self.n_features_in_ = s.shape[0]
        return self

    def transform(self, X):
        # Z^T X, the left action of the composed factor
        check_is_fitted(self, "factor_")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[0]} rows, expected {self.n_features_in_}")
        return self.factor_.T @ X
