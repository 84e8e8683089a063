"""Estimator-style wrappers around the policy tables and the cost oracle.

``ThresholdPolicy`` is fitted on a network (it synthesizes the policy
tables) and predicts allocation rows for queue states. ``CostGapTransformer``
maps queue vectors to ``[h.q, hhat(K M q), h.q - hhat(K M q)]``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cost import HhatVertices
from .kernel import synthesize, z_index
from .model import NetworkSpec, make_instance

__all__ = ["ThresholdPolicy", "CostGapTransformer"]


def _queues(X, J: int) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_min_samples=1)
    if X.shape[1] != J:
        raise ValueError(f"expected {J} columns (one per class), got {X.shape[1]}")
    if (X < 0).any():
        raise ValueError("queue lengths must be nonnegative")
    return X


class ThresholdPolicy(BaseEstimator):
    """Allocation rule for the r-th system.

    ``fit(spec)`` takes a :class:`NetworkSpec` in place of a data matrix.
    ``predict(Q, E)`` returns one allocation row per queue row; ``E``
    defaults to the flags a fresh excursion would set (``Q < lower``).
    """

    def __init__(self, r: float = 16.0, c1: float = 1.0, c2: float = 2.0, kappa: float = 0.2):
        self.r = r
        self.c1 = c1
        self.c2 = c2
        self.kappa = kappa

    def fit(self, X: NetworkSpec, y=None):
        if not isinstance(X, NetworkSpec):
            raise TypeError("ThresholdPolicy.fit expects a NetworkSpec")
        if not (0 < self.c1 < self.c2 and 0 < self.kappa < 0.25):
            raise ValueError("need 0 < c1 < c2 and 0 < kappa < 1/4")
        self.spec_ = X
        self.instance_ = make_instance(X, self.r)
        self.tables_ = synthesize(X)
        scale = float(self.r) ** self.kappa * float(X.beta.min())
        self.lower_ = self.c1 * scale
        self.upper_ = self.c2 * scale
        self.allocation_table_ = self.tables_.allocation_table(X.rho)
        self.n_features_in_ = X.J
        return self

    def configurations(self, Q) -> np.ndarray:
        check_is_fitted(self, "tables_")
        Q = _queues(Q, self.n_features_in_)
        return (Q < self.upper_).astype(int)

    def predict(self, Q, E=None) -> np.ndarray:
        check_is_fitted(self, "tables_")
        Q = _queues(Q, self.n_features_in_)
        if E is None:
            E = (Q < self.lower_).astype(int)
        E = check_array(E, dtype=int)
        if E.shape != Q.shape:
            raise ValueError("E must have the same shape as Q")
        Z = (Q < self.upper_).astype(int)
        idx = np.array([z_index(z) for z in Z])
        return np.where(E == 0, self.allocation_table_[idx], 0.0)


class CostGapTransformer(TransformerMixin, BaseEstimator):
    """Queue vectors to holding cost, minimal cost for their workload and the gap.

    ``beta`` selects the service rates that define the workload ``K M q``
    (the limiting rates by default; pass ``instance.beta_r`` for finite r).
    """

    def __init__(self, spec: NetworkSpec | None = None, beta=None):
        self.spec = spec
        self.beta = beta

    def fit(self, X=None, y=None):
        if not isinstance(self.spec, NetworkSpec):
            raise TypeError("CostGapTransformer needs a NetworkSpec")
        beta = self.spec.beta if self.beta is None else np.asarray(self.beta, dtype=float)
        self.hhat_ = HhatVertices(self.spec, beta=beta)
        self.KM_ = self.spec.K / beta[None, :]
        self.n_features_in_ = self.spec.J
        if X is not None:
            _queues(X, self.n_features_in_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "hhat_")
        Q = _queues(X, self.n_features_in_)
        cost = Q @ self.spec.h
        best = self.hhat_(Q @ self.KM_.T)
        return np.column_stack([cost, best, cost - best])

    def get_feature_names_out(self, input_features=None):
        return np.array(["holding_cost", "min_cost", "cost_gap"], dtype=object)
