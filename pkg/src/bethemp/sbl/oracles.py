"""Closed-form references: exact Gaussian MMSE, genie LMMSE and NMSE."""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

NMSE_DB_FLOOR = -120.0


def exact_mmse_gaussian(A, y, lam, alpha):
    """Posterior mean and marginal variances for ``x ~ CN(0, diag(alpha))``.

    Solves ``(lam A^H A + diag(1/alpha)) x = lam A^H y`` by Cholesky.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    y = np.asarray(y, dtype=complex).reshape(-1)
    M = A.shape[1]
    if M > 2000:
        raise ValueError("exact MMSE oracle is limited to 2000 unknowns")
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (M,))
    if np.isinf(lam):
        # noiseless limit: C A^H (A C A^H)^-1 y
        C = np.diag(alpha)
        G = A @ C @ A.conj().T
        K = C @ A.conj().T @ np.linalg.pinv(G)
        return K @ y, np.real(np.diag(C - K @ A @ C))
    P = lam * (A.conj().T @ A) + np.diag(1.0 / alpha)
    factor = cho_factor(P, lower=True)
    mean = cho_solve(factor, lam * (A.conj().T @ y))
    cov = cho_solve(factor, np.eye(M, dtype=complex))
    return mean, np.real(np.diag(cov)).copy()


def joint_covariance_mmse(A, y, lam, alpha):
    """Second form of the Gaussian posterior mean, ``C A^H (A C A^H + I/lam)^-1 y``."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    N, M = A.shape
    C = np.diag(np.broadcast_to(np.asarray(alpha, dtype=float), (M,)))
    S = A @ C @ A.conj().T + np.eye(N) / lam
    K = C @ A.conj().T @ np.linalg.inv(S)
    return K @ y, np.real(np.diag(C - K @ A @ C))


def genie_lmmse(A, y, lam, support, v0):
    """LMMSE restricted to the known support columns; zeros elsewhere."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    M = A.shape[1]
    x = np.zeros(M, dtype=complex)
    idx = np.flatnonzero(np.asarray(support)) if np.asarray(support).dtype == bool else np.asarray(support, dtype=int)
    if idx.size == 0:
        return x
    mean, _ = exact_mmse_gaussian(A[:, idx], y, lam, np.full(idx.size, float(v0)))
    x[idx] = mean
    return x


def nmse(x_hat, x):
    x_hat = np.asarray(x_hat, dtype=complex).reshape(-1)
    x = np.asarray(x, dtype=complex).reshape(-1)
    if x_hat.shape != x.shape:
        raise ValueError("estimate and ground truth differ in length")
    power = float(np.sum(np.abs(x) ** 2))
    if power == 0:
        raise ValueError("NMSE is undefined for an all-zero ground truth")
    return float(np.sum(np.abs(x_hat - x) ** 2)) / power


def to_db(linear):
    if linear <= 0:
        return NMSE_DB_FLOOR
    return max(10.0 * np.log10(linear), NMSE_DB_FLOOR)


def nmse_db(values):
    """Average linear NMSE values (a scalar or a sequence of trials), then convert to dB."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return to_db(float(np.mean(values)))


def denoise_bg_quadrature(rho, v0, mu, tau):
    """Posterior mean and variance of the spike-and-slab prior under ``CN(x; mu, tau)``.

    Integrates the slab part on a uniform 2-D grid over the complex plane
    (trapezoid rule, spectrally accurate for Gaussian integrands) and adds the
    spike analytically. Shares no algebra with the closed form it checks.
    """
    mu = complex(mu)
    lo_var = min(v0, tau)
    s_max = np.sqrt(lo_var / 2.0)  # widest per-axis std the product can have
    h = np.sqrt(lo_var / 4.0) / 2.0  # half the narrowest per-axis std
    axes = []
    for c in (mu.real, mu.imag):
        lo, hi = min(0.0, c) - 14 * s_max, max(0.0, c) + 14 * s_max
        axes.append(np.arange(lo, hi + h, h))
    xr, xi = np.meshgrid(axes[0], axes[1], indexing="ij")
    x = xr + 1j * xi
    log_slab = (np.log(rho) if rho > 0 else -np.inf) - np.log(np.pi * v0) - np.abs(x) ** 2 / v0
    log_lik = -np.log(np.pi * tau) - np.abs(x - mu) ** 2 / tau
    log_f = log_slab + log_lik
    log_spike = (np.log1p(-rho) if rho < 1 else -np.inf) - np.log(np.pi * tau) - abs(mu) ** 2 / tau
    shift = max(np.max(log_f), log_spike)
    w = np.exp(log_f - shift) * h * h
    spike = np.exp(log_spike - shift)
    z = w.sum() + spike
    mean = (w * x).sum() / z
    second = (w * np.abs(x) ** 2).sum() / z
    return mean, float(second - abs(mean) ** 2)
