"""Scalar posterior moments for the spike-and-slab prior under a Gaussian pseudo-observation."""

import numpy as np
from scipy.special import expit

from ..exceptions import DegenerateCavityError


def denoise_bg(rho, v0, mu, tau):
    """Posterior moments of ``(1 - rho) delta(x) + rho CN(x; 0, v0)`` times ``CN(x; mu, tau)``.

    All arguments broadcast. ``tau`` is the variance of the pseudo-observation.

    Returns
    -------
    mean, var, second : ndarray
        Posterior mean (complex), variance and ``E|x|^2``.
    """
    rho = np.asarray(rho, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    mu = np.asarray(mu, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0) or np.any(~np.isfinite(tau)):
        raise DegenerateCavityError("pseudo-observation variance must be positive and finite")
    if np.any(v0 <= 0):
        raise ValueError("slab variance must be positive")
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError("rho must lie in [0, 1]")

    v = 1.0 / (1.0 / v0 + 1.0 / tau)
    m = v * mu / tau
    abs2 = mu.real**2 + mu.imag**2

    # log of CN(mu; 0, tau) / CN(mu; 0, v0 + tau)
    log_ratio = np.log1p(v0 / tau) - abs2 * (1.0 / tau - 1.0 / (v0 + tau))
    with np.errstate(divide="ignore"):
        log_odds_off = np.log1p(-rho) - np.log(rho)
    pi = expit(-(log_odds_off + log_ratio))
    pi = np.where(rho >= 1.0, 1.0, np.where(rho <= 0.0, 0.0, pi))

    m_abs2 = m.real**2 + m.imag**2
    mean = pi * m
    second = pi * (m_abs2 + v)
    var = pi * v + pi * (1.0 - pi) * m_abs2
    return mean, var, second


def prior_moments(rho, v0):
    """Mean, variance and second moment of the spike-and-slab prior itself."""
    rho = np.asarray(rho, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    second = rho * v0
    return np.zeros(np.broadcast(rho, v0).shape, dtype=complex), second + 0.0, second + 0.0
