"""Seeded random instances of the sparse linear model."""

from dataclasses import dataclass, replace

import numpy as np

from ..expfam import BernoulliGaussian
from ..sbl.problem import SblProblem

RNG_DESCRIPTION = "numpy Philox4x64-10 keyed by SeedSequence(seed, spawn_key=(round(rho*1e6), trial))"


@dataclass(frozen=True)
class InstanceSpec:
    N: int = 250
    M: int = 500
    rho: float = 0.1
    snr_db: float = 30.0
    v0: float = 1.0
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def noise_var(self):
        """Noise variance giving ``E|[Ax]_n|^2 / sigma^2`` equal to the target SNR."""
        return (self.M / self.N) * self.rho * self.v0 / 10.0 ** (self.snr_db / 10.0)


def rho_key(rho):
    return int(round(float(rho) * 1_000_000))


def rng_for(seed, rho, trial):
    """Independent generator for one (seed, rho, trial) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(rho_key(rho), int(trial)))
    return np.random.Generator(np.random.Philox(ss))


def _cn(rng, size, var):
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def generate_instance(spec):
    """Draw ``(problem, x)``.

    ``A`` has i.i.d. ``CN(0, 1/N)`` entries, ``x_m`` is zero with probability
    ``1 - rho`` and ``CN(0, v0)`` otherwise, and the noise is ``CN(0, sigma^2)``.
    """
    rng = rng_for(spec.seed, spec.rho, spec.trial)
    N, M = spec.N, spec.M
    A = _cn(rng, (N, M), 1.0 / N)
    active = rng.random(M) < spec.rho
    x = np.where(active, _cn(rng, M, spec.v0), 0.0)
    sigma2 = spec.noise_var
    w = _cn(rng, N, sigma2) if sigma2 > 0 else np.zeros(N, dtype=complex)
    y = A @ x + w
    lam = np.inf if sigma2 == 0 else 1.0 / sigma2
    problem = SblProblem(A, y, lam=lam, prior=BernoulliGaussian(spec.rho, spec.v0), x_true=x)
    return problem, x
