"""Exponential-family densities in natural-parameter form.

Every message and belief handled by the engine is an :class:`ExpFamilyDensity`
or a discrete table. Densities live in the *unnormalized* family: products and
quotients simply add and subtract natural parameters, and the result is allowed
to leave the natural parameter space (negative precision, for example). Whether
a density is normalizable is only checked when moments or the log-partition are
requested.

Supported families and their statistics::

    real_gaussian      t(x) = [x, x^2]
    complex_gaussian   t(x) = [Re x, Im x, |x|^2]      (circularly symmetric)
    gamma              t(x) = [ln x, x]                (x > 0, Lebesgue base)
    categorical(k)     t(x) = one-hot(x)               (counting measure)
    point_mass         location only, no natural parameters
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaln, logsumexp, polygamma

from .exceptions import (
    DegenerateProjectionError,
    FamilyMismatchError,
    NotNormalizableError,
)

REAL_GAUSSIAN = "real_gaussian"
COMPLEX_GAUSSIAN = "complex_gaussian"
GAMMA = "gamma"
CATEGORICAL = "categorical"
POINT_MASS = "point_mass"

_FIXED_DIMS = {REAL_GAUSSIAN: 2, COMPLEX_GAUSSIAN: 3, GAMMA: 2, POINT_MASS: 1}


@dataclass(frozen=True)
class SufficientStatistic:
    """Family tag plus, for categorical families, the number of states."""

    family: str
    k: int = 0

    def __post_init__(self):
        if self.family == CATEGORICAL:
            if self.k < 1:
                raise ValueError("categorical statistic needs k >= 1")
        elif self.family in _FIXED_DIMS:
            if self.k:
                raise ValueError(f"{self.family} takes no state count")
        else:
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def dim(self):
        return self.k if self.family == CATEGORICAL else _FIXED_DIMS[self.family]

    def __call__(self, x):
        """Evaluate t(x)."""
        if self.family == REAL_GAUSSIAN:
            x = float(x)
            return np.array([x, x * x])
        if self.family == COMPLEX_GAUSSIAN:
            x = complex(x)
            return np.array([x.real, x.imag, abs(x) ** 2])
        if self.family == GAMMA:
            return np.array([np.log(x), float(x)])
        if self.family == CATEGORICAL:
            out = np.zeros(self.k)
            out[int(x)] = 1.0
            return out
        return np.array([float(x)])

    def __str__(self):
        return f"categorical({self.k})" if self.family == CATEGORICAL else self.family


RealGaussianStat = SufficientStatistic(REAL_GAUSSIAN)
ComplexGaussianStat = SufficientStatistic(COMPLEX_GAUSSIAN)
GammaStat = SufficientStatistic(GAMMA)
PointMassStat = SufficientStatistic(POINT_MASS)


def categorical_stat(k):
    return SufficientStatistic(CATEGORICAL, int(k))


class ExpFamilyDensity:
    """A member of the unnormalized exponential family ``exp(eta . t(x))``.

    Instances are immutable; ``eta`` is a read-only float array.
    """

    __slots__ = ("stat", "eta", "_log_z")

    def __init__(self, stat, eta):
        eta = np.array(eta, dtype=float).reshape(-1)
        if eta.shape[0] != stat.dim:
            raise ValueError(f"{stat} needs {stat.dim} natural parameters, got {eta.shape[0]}")
        eta.setflags(write=False)
        self.stat = stat
        self.eta = eta
        self._log_z = None

    # ---- construction -------------------------------------------------
    @classmethod
    def flat(cls, stat):
        return cls(stat, np.zeros(stat.dim))

    @classmethod
    def complex_gaussian(cls, mean, var):
        mean = complex(mean)
        if var <= 0:
            raise ValueError("variance must be positive")
        return cls(ComplexGaussianStat, [2 * mean.real / var, 2 * mean.imag / var, -1.0 / var])

    @classmethod
    def real_gaussian(cls, mean, var):
        if var <= 0:
            raise ValueError("variance must be positive")
        return cls(RealGaussianStat, [mean / var, -0.5 / var])

    @classmethod
    def gamma(cls, shape, rate):
        return cls(GammaStat, [shape - 1.0, -rate])

    @classmethod
    def categorical(cls, probs):
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0):
            raise ValueError("categorical weights must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(categorical_stat(probs.size), np.log(probs))

    @classmethod
    def point_mass(cls, value):
        return cls(PointMassStat, [value])

    # ---- properties ----------------------------------------------------
    @property
    def family(self):
        return self.stat.family

    @property
    def normalizable(self):
        fam, eta = self.stat.family, self.eta
        if fam == COMPLEX_GAUSSIAN:
            return bool(eta[2] < 0 and np.all(np.isfinite(eta)))
        if fam == REAL_GAUSSIAN:
            return bool(eta[1] < 0 and np.all(np.isfinite(eta)))
        if fam == GAMMA:
            return bool(eta[0] > -1 and eta[1] < 0 and np.all(np.isfinite(eta)))
        if fam == CATEGORICAL:
            return bool(np.any(np.isfinite(eta)) and not np.any(eta == np.inf))
        return bool(np.isfinite(eta[0]))

    def _require_normalizable(self):
        if not self.normalizable:
            raise NotNormalizableError(f"{self.stat} with eta={self.eta.tolist()} is not normalizable")

    # ---- algebra -------------------------------------------------------
    def __mul__(self, other):
        return multiply(self, other)

    def __truediv__(self, other):
        return divide(self, other)

    def log_partition(self):
        self._require_normalizable()
        if self._log_z is None:
            self._log_z = _log_partition(self.stat, self.eta)
        return self._log_z

    def moments(self):
        """Moment parameters ``E[t(x)]``."""
        self._require_normalizable()
        return _moments(self.stat, self.eta)

    def expected_statistic(self, stat):
        if stat != self.stat:
            raise FamilyMismatchError(f"cannot take {stat} moments of a {self.stat} density")
        return self.moments()

    def log_unnormalized(self, x):
        """``eta . t(x)`` at a point (``-inf`` outside the support)."""
        if self.family == POINT_MASS:
            return 0.0 if x == self.eta[0] else -np.inf
        if self.family == GAMMA and x <= 0:
            return -np.inf
        if self.family == CATEGORICAL:
            return float(self.eta[int(x)])
        return float(self.eta @ self.stat(x))

    def log_pdf(self, x):
        return self.log_unnormalized(x) - self.log_partition()

    def mean_var(self):
        """(mean, variance) for Gaussian and Gamma members."""
        th = self.moments()
        if self.family == COMPLEX_GAUSSIAN:
            mean = complex(th[0], th[1])
            return mean, -1.0 / self.eta[2]
        if self.family == REAL_GAUSSIAN:
            return th[0], -0.5 / self.eta[1]
        if self.family == GAMMA:
            shape, rate = self.eta[0] + 1.0, -self.eta[1]
            return shape / rate, shape / rate**2
        raise TypeError(f"mean_var undefined for {self.stat}")

    def probs(self):
        """Normalized probability vector of a categorical member."""
        if self.family != CATEGORICAL:
            raise TypeError("probs() is only defined for categorical densities")
        return self.moments()

    def allclose(self, other, rtol=1e-12, atol=1e-12):
        return self.stat == other.stat and np.allclose(self.eta, other.eta, rtol=rtol, atol=atol)

    def __repr__(self):
        return f"ExpFamilyDensity({self.stat}, eta={np.round(self.eta, 12).tolist()})"


def _check_same(a, b):
    if a.stat != b.stat:
        raise FamilyMismatchError(f"{a.stat} vs {b.stat}")


def multiply(a, b):
    """Product in the unnormalized family: natural parameters add."""
    _check_same(a, b)
    if a.family == POINT_MASS:
        if a.eta[0] != b.eta[0]:
            raise FamilyMismatchError("product of point masses at different locations")
        return a
    return ExpFamilyDensity(a.stat, a.eta + b.eta)


def divide(a, b):
    """Quotient in the unnormalized family: natural parameters subtract.

    The result is never clamped; negative precisions are returned as-is with
    ``normalizable`` false.
    """
    _check_same(a, b)
    if a.family == POINT_MASS:
        raise FamilyMismatchError("point masses cannot be divided")
    if a.family == CATEGORICAL and np.any(np.isneginf(b.eta)):
        raise ZeroDivisionError("categorical division by a zero entry")
    return ExpFamilyDensity(a.stat, a.eta - b.eta)


def _log_partition(stat, eta):
    fam = stat.family
    if fam == COMPLEX_GAUSSIAN:
        prec = -eta[2]
        return (eta[0] ** 2 + eta[1] ** 2) / (4 * prec) + np.log(np.pi / prec)
    if fam == REAL_GAUSSIAN:
        return -eta[0] ** 2 / (4 * eta[1]) + 0.5 * np.log(np.pi / -eta[1])
    if fam == GAMMA:
        shape, rate = eta[0] + 1.0, -eta[1]
        return gammaln(shape) - shape * np.log(rate)
    if fam == CATEGORICAL:
        return float(logsumexp(eta))
    return 0.0


def _moments(stat, eta):
    fam = stat.family
    if fam == COMPLEX_GAUSSIAN:
        var = -1.0 / eta[2]
        re, im = eta[0] * var / 2, eta[1] * var / 2
        return np.array([re, im, re * re + im * im + var])
    if fam == REAL_GAUSSIAN:
        var = -0.5 / eta[1]
        m = eta[0] * var
        return np.array([m, m * m + var])
    if fam == GAMMA:
        shape, rate = eta[0] + 1.0, -eta[1]
        return np.array([digamma(shape) - np.log(rate), shape / rate])
    if fam == CATEGORICAL:
        return np.exp(eta - logsumexp(eta))
    return eta.copy()


def _gamma_shape_from_gap(gap):
    """Solve ln k - digamma(k) = gap for k (gap > 0)."""
    # 1/(2k) < ln k - digamma(k) < 1/k brackets the root.
    f = lambda k: np.log(k) - digamma(k) - gap
    k = brentq(f, 0.4999 / gap, 1.0001 / gap, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        step = f(k) / (1.0 / k - polygamma(1, k))
        if not np.isfinite(step):
            break
        k -= step
    return k


def from_moments(stat, theta):
    """Natural-parameter member whose moments equal ``theta``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != stat.dim:
        raise ValueError(f"{stat} needs {stat.dim} moments, got {theta.shape[0]}")
    fam = stat.family
    if not np.all(np.isfinite(theta)):
        raise DegenerateProjectionError("non-finite moments", theta)
    if fam == COMPLEX_GAUSSIAN:
        var = theta[2] - theta[0] ** 2 - theta[1] ** 2
        if not var > 0:
            raise DegenerateProjectionError(f"non-positive variance {var!r}", theta)
        return ExpFamilyDensity(stat, [2 * theta[0] / var, 2 * theta[1] / var, -1.0 / var])
    if fam == REAL_GAUSSIAN:
        var = theta[1] - theta[0] ** 2
        if not var > 0:
            raise DegenerateProjectionError(f"non-positive variance {var!r}", theta)
        return ExpFamilyDensity(stat, [theta[0] / var, -0.5 / var])
    if fam == GAMMA:
        mean_log, mean = theta
        if not mean > 0:
            raise DegenerateProjectionError("gamma mean must be positive", theta)
        gap = np.log(mean) - mean_log
        if not gap > 0:
            raise DegenerateProjectionError("E[ln x] must be below ln E[x]", theta)
        shape = _gamma_shape_from_gap(gap)
        return ExpFamilyDensity(stat, [shape - 1.0, -shape / mean])
    if fam == CATEGORICAL:
        if np.any(theta < 0) or not np.isclose(theta.sum(), 1.0, rtol=0, atol=1e-9):
            raise DegenerateProjectionError("categorical moments must be a probability vector", theta)
        with np.errstate(divide="ignore"):
            return ExpFamilyDensity(stat, np.log(theta))
    return ExpFamilyDensity(stat, theta)


def to_moments(d):
    return d.moments()


def project(stat, source):
    """m-projection of ``source`` onto the family of ``stat`` by moment matching.

    ``source`` is anything with an ``expected_statistic(stat)`` method.
    """
    theta = source.expected_statistic(stat)
    return from_moments(stat, theta)


def log_partition(d):
    return d.log_partition()


def kl_divergence(p, q):
    """KL(p || q) for two members of the same family."""
    _check_same(p, q)
    if p.family == CATEGORICAL:
        pp, qq = p.probs(), q.probs()
        mask = pp > 0
        if np.any(qq[mask] == 0):
            return np.inf
        return float(np.sum(pp[mask] * (np.log(pp[mask]) - np.log(qq[mask]))))
    if p.family == POINT_MASS:
        return 0.0 if p.eta[0] == q.eta[0] else np.inf
    theta = p.moments()
    return float(q.log_partition() - p.log_partition() - (q.eta - p.eta) @ theta)


# ---- priors that are not single family members ---------------------------


@dataclass(frozen=True)
class BernoulliGaussian:
    """Spike-and-slab prior ``(1 - rho) delta(x) + rho CN(x; 0, v0)``."""

    rho: float
    v0: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")

    def expected_statistic(self, stat):
        if stat != ComplexGaussianStat:
            raise FamilyMismatchError(f"Bernoulli-Gaussian exposes complex_gaussian moments, not {stat}")
        return np.array([0.0, 0.0, self.rho * self.v0])

    def posterior_moments(self, mu, tau):
        """(mean, var, E|x|^2) of the prior times ``CN(x; mu, tau)``."""
        from .sbl.denoise import denoise_bg

        return denoise_bg(self.rho, self.v0, mu, tau)

    def tilted(self, cavity):
        """Moment oracle for ``prior * cavity`` with a Gaussian (or flat) cavity."""
        return _TiltedPrior(self, cavity)


@dataclass(frozen=True)
class ZeroMeanGaussianVec:
    """Independent ``CN(x_m; 0, alpha_m)`` entries."""

    alpha: tuple

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in np.atleast_1d(self.alpha)))
        if any(a <= 0 for a in self.alpha):
            raise ValueError("alpha entries must be positive")

    def entry(self, m):
        return ExpFamilyDensity.complex_gaussian(0.0, self.alpha[m])

    def posterior_moments(self, mu, tau):
        from .sbl.denoise import denoise_bg

        return denoise_bg(1.0, np.asarray(self.alpha), mu, tau)


class _TiltedPrior:
    """Prior times a complex-Gaussian cavity, exposing its moments."""

    def __init__(self, prior, cavity):
        self.prior = prior
        self.cavity = cavity

    def expected_statistic(self, stat):
        if stat != ComplexGaussianStat:
            raise FamilyMismatchError(f"tilted prior exposes complex_gaussian moments, not {stat}")
        eta = self.cavity.eta
        if np.allclose(eta, 0.0):
            return self.prior.expected_statistic(stat)
        if not self.cavity.normalizable:
            raise DegenerateProjectionError("cavity is not normalizable", eta.copy())
        mu, tau = self.cavity.mean_var()
        mean, _, second = self.prior.posterior_moments(mu, tau)
        mean = complex(mean)
        return np.array([mean.real, mean.imag, float(second)])


class ComplexGaussianMixture:
    """Finite mixture of circular complex Gaussians, usable as a projection source."""

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=float) / np.sum(weights)
        self.means = np.asarray(means, dtype=complex)
        self.variances = np.asarray(variances, dtype=float)

    def expected_statistic(self, stat):
        if stat != ComplexGaussianStat:
            raise FamilyMismatchError(f"mixture exposes complex_gaussian moments, not {stat}")
        w, m, v = self.weights, self.means, self.variances
        mean = np.sum(w * m)
        second = np.sum(w * (np.abs(m) ** 2 + v))
        return np.array([mean.real, mean.imag, second])
