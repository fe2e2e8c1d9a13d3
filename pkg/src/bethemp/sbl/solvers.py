"""Array-based message passing solvers for ``y = A x + w``.

Four solvers share the state layout below. Row index ``n`` runs over the
observations, column index ``m`` over the unknowns; the prior-side quantities
carry the suffix ``0``.

    tau_t[n, m], alpha_t[n, m]  extrinsic precision / precision-mean from row n to x_m
    tau_c[n, m], alpha_c[n, m]  cavity of x_m as seen by row n
    gamma[n], mu_z[n], beta[n]  variance, mean and scaled residual on the z side
    tau0[m], mu_x[m]            precision and mean of the pseudo-observation of x_m

Cavity sums use "total minus own term", which is O(NM) per iteration.
"""

import numpy as np

from ..exceptions import DegenerateCavityError
from ..expfam import BernoulliGaussian, ZeroMeanGaussianVec
from .denoise import denoise_bg
from .problem import HierarchicalGamma, SolverConfig, SolverResult


def _prior_params(prior, M):
    if isinstance(prior, BernoulliGaussian):
        return float(prior.rho), np.full(M, float(prior.v0))
    if isinstance(prior, ZeroMeanGaussianVec):
        alpha = np.asarray(prior.alpha, dtype=float)
        if alpha.size == 1:
            alpha = np.full(M, alpha[0])
        if alpha.size != M:
            raise ValueError("prior variance vector does not match M")
        return 1.0, alpha
    raise TypeError(f"known-model solvers need a Bernoulli-Gaussian or Gaussian prior, got {type(prior).__name__}")


def _check_known(problem):
    if problem.lam is None:
        raise ValueError("this solver needs the noise precision")
    if problem.prior is None:
        raise ValueError("this solver needs a prior")


def _noise_var(lam):
    return 0.0 if np.isinf(lam) else 1.0 / lam


class _Posterior:
    """Current belief b_x summarized by per-entry moments."""

    def __init__(self, rho, v0):
        self.rho = rho
        self.v0 = v0
        self.mean = np.zeros(v0.shape, dtype=complex)
        self.var = rho * v0
        self.second = rho * v0

    def refresh(self, mu_x, tau0, floor):
        """Combine the prior with ``CN(x; mu_x, 1/tau0)``; entries with bad precision keep their old moments."""
        ok = np.isfinite(tau0) & (tau0 > floor) & np.isfinite(mu_x)
        if np.all(ok):
            self.mean, self.var, self.second = denoise_bg(self.rho, self.v0, mu_x, 1.0 / tau0)
            return 0
        if np.any(ok):
            mean, var, second = denoise_bg(self.rho, self.v0[ok], mu_x[ok], 1.0 / tau0[ok])
            self.mean = self.mean.copy()
            self.var = self.var.copy()
            self.second = self.second.copy()
            self.mean[ok], self.var[ok], self.second[ok] = mean, var, second
        return int(np.count_nonzero(~ok))


def _beta(residual, noise_var, gamma):
    """Scaled residual ``(y - mu_z) / (1/lambda + gamma)``."""
    return residual / (noise_var + gamma)


def _converged(new, old, tol):
    return bool(np.max(np.abs(new - old), initial=0.0) < tol)


def _snapshot(**arrays):
    return {k: np.array(v, copy=True) for k, v in arrays.items()}


def solve_ep(problem, config=None):
    """Expectation propagation with first/second-moment matching on every (row, entry) pair.

    Damping acts on the extrinsic row messages: ``new = (1 - k) old + k proposed``.
    Row updates whose cavity has a non-positive precision, and entry updates with a
    non-positive denominator, are skipped and counted.
    """
    config = config or SolverConfig()
    _check_known(problem)
    A, y = problem.A, problem.y
    N, M = A.shape
    rho, v0 = _prior_params(problem.prior, M)
    max_iter = config.max_iter or M
    kappa, floor = config.damping, config.var_floor
    noise_var = _noise_var(problem.lam)

    abs2 = A.real**2 + A.imag**2
    Aconj = A.conj()
    post = _Posterior(rho, v0)
    alpha_t = np.zeros((N, M), dtype=complex)
    tau_t = np.zeros((N, M))
    alpha0 = np.zeros(M, dtype=complex)
    tau0 = np.zeros(M)
    skips = 0
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_old = post.mean
        var_f = np.maximum(post.var, floor)
        # prior-side extrinsic terms; the totals they imply are mean/var and 1/var
        alpha_t0 = post.mean / var_f - alpha0
        tau_t0 = 1.0 / var_f - tau0
        alpha_c = (alpha_t0 + alpha_t.sum(axis=0)) - alpha_t
        tau_c = (tau_t0 + tau_t.sum(axis=0)) - tau_t

        row_ok = np.all(tau_c > floor, axis=1)
        all_rows = bool(row_ok.all())
        safe_tau_c = tau_c if all_rows else np.where(row_ok[:, None], tau_c, 1.0)
        ratio = abs2 / safe_tau_c
        gamma = ratio.sum(axis=1)
        mu_z = (A * (alpha_c / safe_tau_c)).sum(axis=1)
        denom = (noise_var + gamma)[:, None] - ratio
        ok = row_ok[:, None] & (denom > floor)
        n_ok = np.count_nonzero(ok)
        safe_denom = denom if n_ok == ok.size else np.where(ok, denom, 1.0)
        alpha_c *= ratio
        alpha_c += Aconj * (y - mu_z)[:, None]
        prop_alpha = alpha_c / safe_denom
        prop_tau = abs2 / safe_denom
        if kappa != 1.0:
            prop_alpha = (1.0 - kappa) * alpha_t + kappa * prop_alpha
            prop_tau = (1.0 - kappa) * tau_t + kappa * prop_tau
        if n_ok == ok.size:
            alpha_t, tau_t = prop_alpha, prop_tau
        else:
            alpha_t = np.where(ok, prop_alpha, alpha_t)
            tau_t = np.where(ok, prop_tau, tau_t)
        skips += int(ok.size - n_ok)

        alpha0 = alpha_t.sum(axis=0)
        tau0 = tau_t.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_x = alpha0 / tau0
        skips += post.refresh(mu_x, tau0, floor)
        if config.record_trace:
            trace.append(_snapshot(x=post.mean, var=post.var, alpha_t=alpha_t, tau_t=tau_t,
                                   gamma=gamma, mu_z=mu_z, tau0=tau0, mu_x=mu_x))
        if _converged(post.mean, x_old, config.tol):
            converged = True
            break
    return SolverResult(post.mean, post.var, it, converged, skips=skips, trace=trace)


def _variant_iteration(state, A, abs2, Aconj, y, noise_var, post, floor, kappa, self_terms):
    """One pass of the mean/variance-consistency updates; mutates ``state``.

    With ``self_terms=False`` the own-row contributions are dropped from the
    cavity precision and from the extrinsic precision denominator.
    """
    tau_t, tau0, beta = state["tau_t"], state["tau0"], state["beta"]
    var_f = np.maximum(post.var, floor)
    skips = 0
    if self_terms:
        tau_t0 = 1.0 / var_f - tau0
        tau_c = (tau_t0 + tau_t.sum(axis=0)) - tau_t
        row_ok = np.all(tau_c > floor, axis=1)
        ratio = abs2 / np.where(row_ok[:, None], tau_c, 1.0)
    else:
        tau_t0 = 1.0 / var_f
        row_ok = np.ones(A.shape[0], dtype=bool)
        ratio = abs2 / tau_t0
    gamma = ratio.sum(axis=1)
    mu_z = A @ post.mean - beta * gamma
    prop_beta = _beta(y - mu_z, noise_var, gamma)
    if self_terms:
        denom = gamma[:, None] + noise_var - ratio
    else:
        denom = np.broadcast_to((gamma + noise_var)[:, None], abs2.shape)
    ok = row_ok[:, None] & (denom > floor)
    prop_tau = abs2 / np.where(ok, denom, 1.0)
    if kappa != 1.0:
        prop_beta = (1.0 - kappa) * beta + kappa * prop_beta
        prop_tau = (1.0 - kappa) * tau_t + kappa * prop_tau
    beta = np.where(row_ok, prop_beta, beta)
    tau_t = np.where(ok, prop_tau, tau_t)
    skips += int(ok.size - np.count_nonzero(ok))
    tau0 = tau_t.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu_x = post.mean + (Aconj.T @ beta) / tau0
    skips += post.refresh(mu_x, tau0, floor)
    state.update(tau_t=tau_t, tau0=tau0, beta=beta, gamma=gamma, mu_z=mu_z, mu_x=mu_x)
    return skips


def solve_ep_variant(problem, config=None, *, self_terms=True):
    """EP variant with mean and variance consistency (no precision-mean messages).

    ``self_terms=False`` removes the own-row cavity corrections; the iteration then
    coincides with :func:`solve_amp`.
    """
    config = config or SolverConfig()
    _check_known(problem)
    A, y = problem.A, problem.y
    N, M = A.shape
    rho, v0 = _prior_params(problem.prior, M)
    max_iter = config.max_iter or M
    noise_var = _noise_var(problem.lam)
    abs2 = A.real**2 + A.imag**2
    Aconj = A.conj()
    post = _Posterior(rho, v0)
    state = {"tau_t": np.zeros((N, M)), "tau0": np.zeros(M), "beta": np.zeros(N, dtype=complex)}
    skips = 0
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_old = post.mean
        skips += _variant_iteration(state, A, abs2, Aconj, y, noise_var, post,
                                    config.var_floor, config.damping, self_terms)
        if config.record_trace:
            trace.append(_snapshot(x=post.mean, var=post.var, beta=state["beta"], gamma=state["gamma"],
                                   mu_z=state["mu_z"], tau0=state["tau0"], mu_x=state["mu_x"]))
        if _converged(post.mean, x_old, config.tol):
            converged = True
            break
    return SolverResult(post.mean, post.var, it, converged, skips=skips, trace=trace)


def solve_amp(problem, config=None):
    """Approximate message passing for the same model.

    With ``config.finite_n_correction`` the averaged-variance bookkeeping is used:
    the per-row share ``1/(N tau)`` of the pseudo-observation is removed from the
    belief precision and from the pseudo-observation variance.
    """
    config = config or SolverConfig()
    _check_known(problem)
    A, y = problem.A, problem.y
    N, M = A.shape
    rho, v0 = _prior_params(problem.prior, M)
    max_iter = config.max_iter or M
    kappa, floor = config.damping, config.var_floor
    noise_var = _noise_var(problem.lam)
    abs2 = A.real**2 + A.imag**2
    Aconj = A.conj()
    post = _Posterior(rho, v0)
    beta = np.zeros(N, dtype=complex)
    tau_x = np.full(M, np.inf)  # pseudo-observation variance, used by the correction only
    skips = 0
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_old = post.mean
        var_f = np.maximum(post.var, floor)
        prec = 1.0 / var_f
        if config.finite_n_correction:
            corrected = prec - 1.0 / (N * tau_x)
            good = corrected > floor
            prec = np.where(good, corrected, prec)
        gamma = abs2 @ (1.0 / prec)
        mu_z = A @ post.mean - beta * gamma
        prop_beta = _beta(y - mu_z, noise_var, gamma)
        beta = prop_beta if kappa == 1.0 else (1.0 - kappa) * beta + kappa * prop_beta
        tau0 = abs2.T @ (1.0 / (gamma + noise_var))
        with np.errstate(divide="ignore"):
            pseudo_var = 1.0 / tau0
        if config.finite_n_correction:
            corrected = pseudo_var - 1.0 / (N * prec)
            good = corrected > floor
            skips += int(np.count_nonzero(~good))
            pseudo_var = np.where(good, corrected, pseudo_var)
            tau_x = pseudo_var
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_x = post.mean + pseudo_var * (Aconj.T @ beta)
            skips += post.refresh(mu_x, 1.0 / pseudo_var, floor)
        if config.record_trace:
            trace.append(_snapshot(x=post.mean, var=post.var, beta=beta, gamma=gamma,
                                   mu_z=mu_z, tau0=1.0 / pseudo_var, mu_x=mu_x))
        if _converged(post.mean, x_old, config.tol):
            converged = True
            break
    return SolverResult(post.mean, post.var, it, converged, skips=skips, trace=trace)


def alpha_update(eps, eta, second):
    """EM update of the per-entry prior variance under a Ga(eps, eta) hyper-prior.

    Positive root of ``eta a^2 - (eps - 2) a - E|x|^2 = 0``, evaluated without
    cancellation when ``eps < 2``.
    """
    b = eps - 2.0
    second = np.asarray(second, dtype=float)
    disc = np.sqrt(b * b + 4.0 * eta * second)
    if b >= 0:
        return (b + disc) / (2.0 * eta)
    return 2.0 * second / (disc - b)


def lambda_update(e_new, gamma, lam_old):
    """Noise-precision update; ``lam_old`` enters the posterior z-variance term."""
    gamma = np.asarray(gamma, dtype=float)
    return 1.0 / (e_new + np.mean(gamma / (1.0 + lam_old * gamma)))


def support_size(x_hat, rel=1e-3):
    mag = np.abs(x_hat)
    peak = mag.max(initial=0.0)
    if peak == 0:
        return 0
    return int(np.count_nonzero(mag > rel * peak))


def solve_hybrid(problem, config=None, hyper=None):
    """Joint recovery and model learning with an unknown noise level.

    Each outer iteration runs one pass of the variance-consistency updates under
    the current prior ``CN(0, alpha_m)`` and noise precision, then re-estimates
    the noise precision, the prior variances (EM) and shrinks the Gamma shape
    ``eps`` once the residual has settled without the support shrinking.
    """
    config = config or SolverConfig()
    hyper = hyper or (problem.prior if isinstance(problem.prior, HierarchicalGamma) else HierarchicalGamma())
    A, y = problem.A, problem.y
    N, M = A.shape
    max_iter = config.max_iter or M
    floor = config.var_floor
    var_y = float(np.mean(np.abs(y - y.mean()) ** 2))
    if not var_y > 0:
        raise DegenerateCavityError("observation vector has zero sample variance")
    lam = 100.0 / var_y
    alpha = np.full(M, 1.0 / M)
    eps, eta = float(hyper.eps), float(hyper.eta)
    e_old = 0.0
    abs2 = A.real**2 + A.imag**2
    Aconj = A.conj()
    post = _Posterior(1.0, alpha)
    state = {"tau_t": np.zeros((N, M)), "tau0": np.zeros(M), "beta": np.zeros(N, dtype=complex)}
    residuals, eps_trace, trace = [], [], []
    prev_support = None
    skips = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_old = post.mean
        post.v0 = np.maximum(alpha, floor)
        skips += _variant_iteration(state, A, abs2, Aconj, y, 1.0 / lam, post,
                                    floor, config.damping, True)
        e_new = float(np.sum(np.abs(y - A @ post.mean) ** 2) / N)
        lam = float(lambda_update(e_new, state["gamma"], lam))
        alpha = alpha_update(eps, eta, post.second)
        support = support_size(post.mean)
        shrunk = False
        if abs(e_new - e_old) < 1e-6 and (prev_support is None or support >= prev_support):
            eps *= 0.95
            shrunk = True
        prev_support = support
        e_old = e_new
        residuals.append(e_new)
        eps_trace.append(eps)
        if config.record_trace:
            trace.append(_snapshot(x=post.mean, var=post.var, lam=lam, alpha=alpha, eps=eps))
        if not shrunk and _converged(post.mean, x_old, config.tol):
            converged = True
            break
    return SolverResult(post.mean, post.var, it, converged, skips=skips, residual_trace=residuals,
                        lam_hat=lam, alpha_hat=alpha, eps_trace=eps_trace, trace=trace)
