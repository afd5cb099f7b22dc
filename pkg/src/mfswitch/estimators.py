"""scikit-learn style wrappers around the averaging, simulation and trading-rule code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .chain import TwoScaleSpec, aggregate_chain_law, averaged_generator, block_stationary
from .flow import SwitchPolicy, gain, simulate
from .measure import DiscreteLaw


def law_from_array(X, n_modes=2):
    """Rows ``(x_1, ..., x_d, mode, weight)`` to a DiscreteLaw."""
    X = check_array(X, ensure_min_features=3)
    modes = X[:, -2]
    if np.any(modes != np.round(modes)):
        raise ValueError("mode column must hold integers")
    return DiscreteLaw(X[:, :-2], modes.astype(np.int64), X[:, -1], n_modes)


def law_to_array(m):
    return np.column_stack([m.x, m.modes.astype(float), m.weights])


class TwoScaleAverager(TransformerMixin, BaseEstimator):
    """Aggregate chain laws over fine states into laws over blocks.

    Parameters
    ----------
    spec : TwoScaleSpec
        Block structure with fast and slow generators.

    Attributes
    ----------
    stationary_ : list of ndarray
        Stationary law of each fast block.
    averaged_generator_ : ndarray of shape (n_blocks, n_blocks)
    """

    def __init__(self, spec=None):
        self.spec = spec

    def fit(self, X=None, y=None):
        if not isinstance(self.spec, TwoScaleSpec):
            raise ValueError("spec must be a TwoScaleSpec")
        if X is not None:
            self._check(X)
        self.stationary_ = block_stationary(self.spec)
        self.averaged_generator_ = averaged_generator(self.spec)
        self.n_features_in_ = self.spec.size
        return self

    def _check(self, X):
        X = check_array(X)
        if X.shape[1] != self.spec.size:
            raise ValueError(f"expected {self.spec.size} chain states, got {X.shape[1]}")
        if np.any(X < 0) or np.any(np.abs(X.sum(axis=1) - 1) > 1e-12):
            raise ValueError("rows must be chain laws")
        return X

    def transform(self, X):
        check_is_fitted(self, "averaged_generator_")
        X = self._check(X)
        return np.vstack([aggregate_chain_law(self.spec, row) for row in X])


class TradingRule(ClassifierMixin, BaseEstimator):
    """Threshold switching rule on moment pairs ``(v1, v0)`` for one chain state.

    ``predict`` returns ``long_out + 2 * short_out`` where ``long_out`` flags
    ``v1 > a1[regime]`` and ``short_out`` flags ``v0 > a0[regime]``.
    """

    def __init__(self, a1=(1.0,), a0=(1.0,), regime=0):
        self.a1 = a1
        self.a0 = a0
        self.regime = regime

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have columns (v1, v0)")
        a1 = np.atleast_1d(np.asarray(self.a1, float))
        a0 = np.atleast_1d(np.asarray(self.a0, float))
        if a1.shape != a0.shape or not 0 <= self.regime < a1.size:
            raise ValueError("thresholds and regime are inconsistent")
        self.threshold_ = (a1[self.regime], a0[self.regime])
        self.classes_ = np.arange(4)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        X = check_array(X)
        return (X[:, 0] > self.threshold_[0]).astype(int) + 2 * (X[:, 1] > self.threshold_[1]).astype(int)

    def long_set(self, X):
        """Cells where the position ends up long: long kept or short switched to long."""
        p = self.predict(X)
        return ((p & 1) == 0) | ((p & 2) == 2)


class ParticleSimulator(BaseEstimator):
    """Particle flow under a switching policy, fitted from an initial law.

    ``fit(X, chain_law)`` takes rows ``(x..., mode, weight)``; ``score``
    returns the estimated gain.
    """

    def __init__(self, coeffs=None, rates=None, costs=None, policy=None, n_particles=1000,
                 dt=0.01, horizon=1.0, seed=0):
        self.coeffs = coeffs
        self.rates = rates
        self.costs = costs
        self.policy = policy
        self.n_particles = n_particles
        self.dt = dt
        self.horizon = horizon
        self.seed = seed

    def fit(self, X, y=None, chain_law=None):
        m0 = law_from_array(X, self.coeffs.n_modes)
        l0 = np.full(self.coeffs.n_chain, 1.0 / self.coeffs.n_chain) if chain_law is None else chain_law
        self.flow_ = simulate(
            self.coeffs, self.rates, self.costs, self.policy or SwitchPolicy.none(), m0, l0,
            self.n_particles, self.dt, self.horizon, self.seed,
        )
        return self

    def score(self, X=None, y=None):
        check_is_fitted(self, "flow_")
        return gain(self.flow_, self.coeffs).value
