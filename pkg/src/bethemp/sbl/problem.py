"""Problem, configuration and result containers plus the JSON problem-file format.

Problem file layout (UTF-8 JSON object)::

    {
      "format": "bethemp.sbl-problem",
      "version": 1,
      "N": <int>, "M": <int>,
      "A": [[re, im], ...],          # N*M pairs, row-major (row n = a_n)
      "y": [[re, im], ...],          # N pairs
      "x": [[re, im], ...] | null,   # optional ground truth, M pairs
      "lambda": <float> | null,      # noise precision (may be Infinity)
      "rho": <float> | null,         # Bernoulli-Gaussian activity
      "v0": <float> | null           # slab variance
    }

Floats are written with ``repr`` precision so a save/load round trip is exact.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..expfam import BernoulliGaussian, ZeroMeanGaussianVec

FORMAT_TAG = "bethemp.sbl-problem"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class HierarchicalGamma:
    """Hyper-parameters of the hierarchical prior used by the hybrid solver.

    ``x_m ~ CN(0, alpha_m)``, ``alpha_m ~ Ga(eps, eta)`` and ``lambda ~ Ga(c, d)``.
    """

    eps: float = 1.5
    eta: float = 1.0
    c: float = 0.0
    d: float = 0.0


@dataclass
class SblProblem:
    A: np.ndarray
    y: np.ndarray
    lam: float = None
    prior: object = None
    x_true: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=complex))
        self.y = np.asarray(self.y, dtype=complex).reshape(-1)
        if self.A.shape[0] != self.y.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows but y has {self.y.shape[0]} entries")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("noise precision must be positive")
        if self.x_true is not None:
            self.x_true = np.asarray(self.x_true, dtype=complex).reshape(-1)
            if self.x_true.shape[0] != self.A.shape[1]:
                raise ValueError("ground truth length does not match the columns of A")

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def M(self):
        return self.A.shape[1]


@dataclass
class SolverConfig:
    """Iteration controls shared by all SBL solvers.

    ``max_iter=None`` means the number of unknowns M.
    """

    max_iter: int = None
    tol: float = 1e-8
    damping: float = 1.0
    var_floor: float = 1e-12
    finite_n_correction: bool = False
    record_trace: bool = False

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.var_floor > 0:
            raise ValueError("var_floor must be positive")


@dataclass
class SolverResult:
    x_hat: np.ndarray
    var: np.ndarray
    iterations: int
    converged: bool
    skips: int = 0
    residual_trace: list = field(default_factory=list)
    lam_hat: float = None
    alpha_hat: np.ndarray = None
    eps_trace: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def skip_rate(self):
        return self.skips / max(self.iterations, 1)


def _pairs(z):
    z = np.asarray(z, dtype=complex).reshape(-1)
    return [[float(v.real), float(v.imag)] for v in z]


def _unpairs(pairs):
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def problem_to_dict(problem):
    prior = problem.prior
    rho = v0 = None
    if isinstance(prior, BernoulliGaussian):
        rho, v0 = prior.rho, prior.v0
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "N": problem.N,
        "M": problem.M,
        "A": _pairs(problem.A),
        "y": _pairs(problem.y),
        "x": None if problem.x_true is None else _pairs(problem.x_true),
        "lambda": problem.lam,
        "rho": rho,
        "v0": v0,
    }


def problem_from_dict(data):
    if data.get("format") != FORMAT_TAG:
        raise ValueError(f"not a problem file (format tag {data.get('format')!r})")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported problem file version {data.get('version')!r}")
    N, M = int(data["N"]), int(data["M"])
    A = _unpairs(data["A"])
    if A.size != N * M:
        raise ValueError(f"A holds {A.size} entries, expected {N * M}")
    y = _unpairs(data["y"])
    x = None if data.get("x") is None else _unpairs(data["x"])
    prior = None
    if data.get("rho") is not None:
        prior = BernoulliGaussian(float(data["rho"]), float(data.get("v0") or 1.0))
    return SblProblem(A.reshape(N, M), y, lam=data.get("lambda"), prior=prior, x_true=x)


def save_problem(problem, path):
    """Write ``problem`` atomically to ``path``."""
    text = json.dumps(problem_to_dict(problem))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".problem-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_problem(path):
    with open(path, encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))


def gaussian_prior(alpha):
    return ZeroMeanGaussianVec(tuple(np.atleast_1d(alpha)))
