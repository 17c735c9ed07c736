"""scikit-learn style front ends for the equilibrium solvers.

Rows of ``X`` are agent types ``(x0, delta, theta, mu, nu, sigma)``.

>>> import numpy as np
>>> est = MeanFieldNash().fit(np.array([[0, 1, 0.5, 1, 0, 1]]))
>>> float(est.predict(np.array([[0, 1, 0.5, 1, 0, 1]]))[0])
2.0
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionMismatch
from .market import AgentType, PopulationSpec, TypeDistribution, _check_columns
from .meanfield import mf_equilibrium, mf_lambda
from .nplayer import best_response_iteration, equilibrium_n, nash_residual


def check_types(X) -> np.ndarray:
    """Validate an agent-type matrix of shape ``(k, 6)``.

    Accepts arrays, nested lists, a :class:`PopulationSpec`, a
    :class:`TypeDistribution` or a sequence of :class:`AgentType`.
    """
    if isinstance(X, (PopulationSpec, TypeDistribution)):
        return np.array(X.params())
    if isinstance(X, AgentType):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], AgentType):
        X = [a.as_tuple() for a in X]
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != 6:
        raise DimensionMismatch(f"agent types have 6 columns, got {X.shape[1]}")
    _check_columns(*X.T)
    return X


class NPlayerNash(BaseEstimator):
    """Constant forward Nash equilibrium of a finite population.

    Parameters
    ----------
    solver : {"closed_form", "iteration"}
        ``"iteration"`` runs damped best-response dynamics instead of the
        closed form.
    damping, tol, max_iter : passed to the best-response iteration.

    Attributes
    ----------
    equilibrium_ : EquilibriumN
    strategies_ : ndarray of shape (n,)
    lambdas_ : ndarray of shape (n,)
    """

    def __init__(self, solver="closed_form", damping=0.5, tol=1e-12, max_iter=10_000):
        self.solver = solver
        self.damping = damping
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.population_ = PopulationSpec(check_types(X))
        self.equilibrium_ = equilibrium_n(self.population_)
        if self.solver == "iteration":
            res = best_response_iteration(
                self.population_, damping=self.damping, tol=self.tol, max_iter=self.max_iter, raise_on_failure=True
            )
            self.strategies_ = res.strategies
            self.n_iter_ = res.n_iter
        elif self.solver == "closed_form":
            self.strategies_ = np.array(self.equilibrium_.strategies)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.lambdas_ = np.array(self.equilibrium_.lambdas)
        self.n_features_in_ = 6
        return self

    def predict(self, X):
        """Best response of agent ``i`` with type ``X[i]`` to everybody else at equilibrium."""
        check_is_fitted(self, "strategies_")
        X = check_types(X)
        pop = self.population_
        if X.shape[0] != pop.n:
            raise DimensionMismatch(f"expected {pop.n} rows, one per agent, got {X.shape[0]}")
        exposure = self.strategies_ * pop.sigma
        others_sigma = (exposure.sum() - exposure) / (pop.n - 1)
        _, delta, theta, mu, nu, sigma = X.T
        return (theta * sigma * others_sigma + mu * delta) / (nu**2 + sigma**2)

    def residual(self):
        check_is_fitted(self, "strategies_")
        return nash_residual(self.strategies_, self.population_)


class MeanFieldNash(BaseEstimator):
    """Constant MF-equilibrium for a finite-support type law.

    ``fit`` takes the atoms as rows and optional ``sample_weight`` (normalised
    to probabilities).  ``predict`` returns the equilibrium strategy of any
    type facing the fitted population.
    """

    def fit(self, X, y=None, sample_weight=None):
        X = check_types(X)
        if sample_weight is None:
            w = np.full(X.shape[0], 1.0 / X.shape[0])
        else:
            w = np.asarray(sample_weight, dtype=np.float64)
            w = w / w.sum()
        self.distribution_ = TypeDistribution(X, w)
        self.equilibrium_ = mf_equilibrium(self.distribution_)
        self.aggregates_ = self.equilibrium_.aggregates
        self.n_features_in_ = 6
        return self

    def predict(self, X):
        check_is_fitted(self, "equilibrium_")
        X = check_types(X)
        _, delta, theta, mu, nu, sigma = X.T
        return (theta * sigma * self.equilibrium_.sigma_pi_bar + mu * delta) / (nu**2 + sigma**2)

    def predict_lambda(self, X):
        check_is_fitted(self, "equilibrium_")
        return np.array([mf_lambda(AgentType(*row), self.equilibrium_) for row in check_types(X).tolist()])
