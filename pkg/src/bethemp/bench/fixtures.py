"""Random graphs and small linear-model instances for the oracle suites."""

import numpy as np

from .. import graph as G
from ..expfam import ZeroMeanGaussianVec
from ..sbl.problem import SblProblem


def _table(rng, shape, low=0.05):
    return rng.uniform(low, 1.0, size=shape)


def random_tree(rng, max_vars=8, max_states=4, unary_prob=0.5):
    """A random discrete factor-graph tree (possibly with ternary factors)."""
    n = int(rng.integers(1, max_vars + 1))
    ks = [int(rng.integers(2, max_states + 1)) for _ in range(n)]
    variables = [G.discrete(f"x{i}", k) for i, k in enumerate(ks)]
    factors = []
    i = 1
    while i < n:
        anchor = int(rng.integers(0, i))
        group = [i] if (i + 1 >= n or rng.random() < 0.7) else [i, i + 1]
        args = [anchor] + group
        rng.shuffle(args)
        shape = tuple(ks[a] for a in args)
        factors.append(G.Factor(f"f{len(factors)}", tuple(f"x{a}" for a in args), G.Table(_table(rng, shape))))
        i += len(group)
    for v in range(n):
        if rng.random() < unary_prob or n == 1:
            factors.append(G.Factor(f"u{v}", (f"x{v}",), G.Table(_table(rng, (ks[v],)))))
    return G.build(variables, factors)


def random_graph(rng, max_vars=6, max_states=3, n_factors=None, partitions=None):
    """A random (generally loopy) discrete graph with pairwise and ternary factors.

    ``partitions="full"`` splits every factor into singleton blocks.
    """
    n = int(rng.integers(2, max_vars + 1))
    ks = [int(rng.integers(2, max_states + 1)) for _ in range(n)]
    variables = [G.discrete(f"x{i}", k) for i, k in enumerate(ks)]
    n_factors = n_factors or int(rng.integers(n, 2 * n + 1))
    factors = []
    for j in range(n_factors):
        arity = int(rng.choice([1, 2, 2, 3])) if n >= 3 else int(rng.choice([1, 2]))
        args = tuple(sorted(rng.choice(n, size=arity, replace=False).tolist()))
        shape = tuple(ks[a] for a in args)
        factors.append(G.Factor(f"f{j}", tuple(f"x{a}" for a in args), G.Table(_table(rng, shape))))
    covered = {a for f in factors for a in f.args}
    for v in range(n):
        if f"x{v}" not in covered:
            factors.append(G.Factor(f"u{v}", (f"x{v}",), G.Table(_table(rng, (ks[v],)))))
    parts = {}
    if partitions == "full":
        parts = {f.id: "full" for f in factors}
    return G.build(variables, factors, parts)


def _cn(rng, shape, var=1.0):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_gaussian_problem(rng, max_n=8, max_m=8):
    """Small ``y = A x + w`` with a ``CN(0, alpha_m)`` prior and known noise."""
    N = int(rng.integers(1, max_n + 1))
    M = int(rng.integers(1, max_m + 1))
    A = _cn(rng, (N, M), 1.0 / N)
    alpha = rng.uniform(0.5, 2.0, size=M)
    x = _cn(rng, M) * np.sqrt(alpha)
    lam = float(rng.uniform(1.0, 20.0))
    y = A @ x + _cn(rng, N, 1.0 / lam)
    return SblProblem(A, y, lam=lam, prior=ZeroMeanGaussianVec(tuple(alpha)), x_true=x)
