"""scikit-learn style front ends for the SBL solvers.

``fit(A, y)`` recovers the unknown vector and stores it as ``coef_``;
``predict(A_new)`` returns ``A_new @ coef_``. Hyper-parameters are constructor
arguments so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..expfam import BernoulliGaussian
from ._validation import check_design, check_is_fitted, check_observations
from .problem import HierarchicalGamma, SblProblem, SolverConfig
from .solvers import solve_amp, solve_ep, solve_ep_variant, solve_hybrid


class _SblEstimator(RegressorMixin, BaseEstimator):
    def _config(self):
        return SolverConfig(max_iter=self.max_iter, tol=self.tol, damping=self.damping,
                            var_floor=self.var_floor)

    def _solve(self, problem, config):
        raise NotImplementedError

    def _problem(self, A, y):
        return SblProblem(A, y, lam=self.noise_precision, prior=BernoulliGaussian(self.rho, self.v0))

    def fit(self, A, y):
        A, y = check_observations(A, y)
        result = self._solve(self._problem(A, y), self._config())
        self.coef_ = result.x_hat
        self.coef_var_ = result.var
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.n_skips_ = result.skips
        self.n_features_in_ = A.shape[1]
        self.result_ = result
        return self

    def predict(self, A):
        check_is_fitted(self)
        A = check_design(A)
        if A.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {A.shape[1]}")
        return A @ self.coef_

    def score(self, A, y):
        """Negative mean squared residual (complex data rules out the R^2 default)."""
        A, y = check_observations(A, y)
        return -float(np.mean(np.abs(y - self.predict(A)) ** 2))


class EPRegressor(_SblEstimator):
    """Bernoulli-Gaussian recovery by full EP, optionally damped."""

    def __init__(self, rho=0.1, v0=1.0, noise_precision=1.0, damping=1.0, max_iter=None,
                 tol=1e-8, var_floor=1e-12):
        self.rho = rho
        self.v0 = v0
        self.noise_precision = noise_precision
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor

    def _solve(self, problem, config):
        return solve_ep(problem, config)


class EPVariantRegressor(_SblEstimator):
    """Bernoulli-Gaussian recovery by the variance-consistency EP variant."""

    def __init__(self, rho=0.1, v0=1.0, noise_precision=1.0, damping=1.0, max_iter=None,
                 tol=1e-8, var_floor=1e-12):
        self.rho = rho
        self.v0 = v0
        self.noise_precision = noise_precision
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor

    def _solve(self, problem, config):
        return solve_ep_variant(problem, config)


class AMPRegressor(_SblEstimator):
    def __init__(self, rho=0.1, v0=1.0, noise_precision=1.0, damping=1.0, max_iter=None,
                 tol=1e-8, var_floor=1e-12, finite_n_correction=False):
        self.rho = rho
        self.v0 = v0
        self.noise_precision = noise_precision
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.finite_n_correction = finite_n_correction

    def _config(self):
        cfg = super()._config()
        cfg.finite_n_correction = self.finite_n_correction
        return cfg

    def _solve(self, problem, config):
        return solve_amp(problem, config)


class HybridSBLRegressor(_SblEstimator):
    """Recovery with unknown noise level and a hierarchical Gamma prior.

    After ``fit``, ``noise_precision_`` and ``alpha_`` hold the learned model.
    """

    def __init__(self, eps=1.5, eta=1.0, damping=1.0, max_iter=None, tol=1e-8, var_floor=1e-12):
        self.eps = eps
        self.eta = eta
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor

    def _problem(self, A, y):
        return SblProblem(A, y, prior=HierarchicalGamma(self.eps, self.eta))

    def _solve(self, problem, config):
        return solve_hybrid(problem, config)

    def fit(self, A, y):
        super().fit(A, y)
        self.noise_precision_ = self.result_.lam_hat
        self.alpha_ = self.result_.alpha_hat
        return self
