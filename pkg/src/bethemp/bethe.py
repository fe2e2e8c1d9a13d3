"""Free energies and exhaustive oracles for small discrete factor graphs.

All quantities are in nats and use the convention ``0 ln 0 = 0``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import GraphValidationError, SpaceTooLargeError

MAX_STATES = 1_000_000


def _xlogy(x, y):
    """``x ln y`` with ``0 ln 0 = 0`` and ``x ln 0 = -inf`` for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(y)
    return np.where(x == 0, 0.0, out)


class DiscreteAssignmentSpace:
    """Product space of the discrete variables of a graph."""

    def __init__(self, g, bound=MAX_STATES):
        if not g.discrete:
            raise GraphValidationError("assignment spaces need an all-discrete graph")
        self.vars = tuple(v.id for v in g.variables)
        self.shape = tuple(v.k for v in g.variables)
        self.size = int(np.prod(self.shape, dtype=object))
        if self.size > bound:
            raise SpaceTooLargeError(f"{self.size} joint states exceed the bound {bound}")

    def __len__(self):
        return self.size

    def __iter__(self):
        return itertools.product(*(range(k) for k in self.shape))


def _broadcast(table, args, order):
    """Reshape a factor table so it broadcasts over the full joint (axes in ``order``)."""
    shape = [1] * len(order)
    for a, k in zip(args, table.shape):
        shape[order.index(a)] = k
    # table axes already follow args; transpose them into joint order first
    perm = sorted(range(len(args)), key=lambda j: order.index(args[j]))
    return np.transpose(table, perm).reshape(shape)


def _factor_table(g, f):
    return f.kind.values.reshape(tuple(g.variable(a).k for a in f.args))


def joint_table(g):
    """Unnormalized ``f(x)`` over the joint space (axes in variable order)."""
    space = DiscreteAssignmentSpace(g)
    order = list(space.vars)
    out = np.ones(space.shape)
    for f in g.factors:
        out = out * _broadcast(_factor_table(g, f), f.args, order)
    return out


def brute_force_log_Z(g):
    z = joint_table(g).sum()
    return float(np.log(z))


def brute_force_marginals(g):
    """Exact marginals of ``f(x) / Z`` by enumeration."""
    joint = joint_table(g)
    p = joint / joint.sum()
    order = [v.id for v in g.variables]
    out = {}
    for j, vid in enumerate(order):
        axes = tuple(a for a in range(len(order)) if a != j)
        out[vid] = p.sum(axis=axes)
    return out


def variational_free_energy(b, g, atol=1e-9):
    """``sum b ln b - sum b ln f`` for a normalized joint table ``b``."""
    b = np.asarray(b, dtype=float)
    f = joint_table(g)
    if b.shape != f.shape:
        raise ValueError(f"belief shape {b.shape} does not match the joint {f.shape}")
    if abs(b.sum() - 1.0) > atol or np.any(b < 0):
        raise ValueError("belief is not a normalized distribution")
    return float(np.sum(_xlogy(b, b)) - np.sum(_xlogy(b, f)))


def product_joint(g, beliefs):
    """Joint table of a fully factorized belief ``prod_i b_i``."""
    order = [v.id for v in g.variables]
    out = np.ones(tuple(v.k for v in g.variables))
    for j, vid in enumerate(order):
        shape = [1] * len(order)
        shape[j] = -1
        out = out * np.asarray(beliefs[vid]).reshape(shape)
    return out


@dataclass
class BetheBeliefSet:
    """Factor beliefs (tables over ``x_a`` in argument order) and variable beliefs."""

    factor: dict
    variable: dict

    def validate(self, g, atol=1e-9):
        for f in g.factors:
            if f.id not in self.factor:
                raise ValueError(f"missing belief for factor {f.id!r}")
            b = np.asarray(self.factor[f.id])
            if b.shape != tuple(g.variable(a).k for a in f.args):
                raise ValueError(f"belief of {f.id!r} has shape {b.shape}")
            if abs(b.sum() - 1.0) > atol or np.any(b < 0):
                raise ValueError(f"belief of {f.id!r} is not normalized")
        for v in g.variables:
            if v.id not in self.variable:
                raise ValueError(f"missing belief for variable {v.id!r}")
            b = np.asarray(self.variable[v.id])
            if b.shape != (v.k,) or abs(b.sum() - 1.0) > atol or np.any(b < 0):
                raise ValueError(f"belief of {v.id!r} is not a normalized vector")

    def consistency_gap(self, g):
        """Largest ``|sum_{x_a \\ i} b_a - b_i|`` over all edges."""
        gap = 0.0
        for f in g.factors:
            b = np.asarray(self.factor[f.id])
            for pos, a in enumerate(f.args):
                axes = tuple(j for j in range(b.ndim) if j != pos)
                gap = max(gap, float(np.max(np.abs(b.sum(axis=axes) - self.variable[a]))))
        return gap


def bethe_free_energy(beliefs, g):
    """``sum_a sum b_a ln(b_a / f_a) - sum_i (A_i - 1) sum b_i ln b_i``."""
    beliefs.validate(g)
    total = 0.0
    for f in g.factors:
        b = np.asarray(beliefs.factor[f.id], dtype=float)
        total += float(np.sum(_xlogy(b, b)) - np.sum(_xlogy(b, _factor_table(g, f))))
    for v in g.variables:
        b = np.asarray(beliefs.variable[v.id], dtype=float)
        total -= (g.degree(v.id) - 1) * float(np.sum(_xlogy(b, b)))
    return total


def beliefs_from_run(result):
    return BetheBeliefSet(factor=dict(result.factor_beliefs), variable=dict(result.beliefs))


def fixed_point_residual(g, beliefs, messages):
    """Max deviation from ``b_a ~ f_a prod n_{i->a}`` and ``b_i ~ prod m_{a->i}``.

    ``messages`` is ``(m, n)`` keyed by ``(factor, variable)``.
    """
    m, n = messages
    res = 0.0
    for f in g.factors:
        t = _factor_table(g, f).astype(float)
        for pos, a in enumerate(f.args):
            shape = [1] * t.ndim
            shape[pos] = -1
            t = t * np.asarray(n[(f.id, a)]).reshape(shape)
        t = t / t.sum()
        res = max(res, float(np.max(np.abs(t - beliefs.factor[f.id]))))
    for v in g.variables:
        p = np.ones(v.k)
        for fid in g.neighbors(v.id):
            p = p * np.asarray(m[(fid, v.id)])
        p = p / p.sum()
        res = max(res, float(np.max(np.abs(p - beliefs.variable[v.id]))))
    return res


def mean_field_update(g, beliefs, vid):
    """``b_i ~ exp(sum_a E[ln f_a])`` with the other variables under ``beliefs``."""
    var = g.variable(vid)
    logit = np.zeros(var.k)
    for fid in g.neighbors(vid):
        f = g.factor(fid)
        with np.errstate(divide="ignore"):
            lf = np.log(_factor_table(g, f))
        lf = np.where(np.isneginf(lf), -1e300, lf)
        pos = f.args.index(vid)
        lf = np.moveaxis(lf, pos, 0)
        for a in reversed([a for a in f.args if a != vid]):
            lf = lf @ np.asarray(beliefs[a])
        logit = logit + lf
    p = np.exp(logit - logit.max())
    return p / p.sum()


def vmp_residual(g, beliefs):
    """Max deviation of fully factorized beliefs from the mean-field self-consistency."""
    return max(
        float(np.max(np.abs(mean_field_update(g, beliefs, v.id) - beliefs[v.id]))) for v in g.variables
    )


def consistency_basis(g):
    """Orthonormal basis of perturbations that keep beliefs normalized and consistent.

    Vectors stack the flattened factor tables (in factor order) and then the
    variable vectors (in variable order).
    """
    offsets = {}
    pos = 0
    for f in g.factors:
        size = int(np.prod([g.variable(a).k for a in f.args]))
        offsets[("f", f.id)] = pos
        pos += size
    for v in g.variables:
        offsets[("v", v.id)] = pos
        pos += v.k
    dim = pos
    rows = []
    for f in g.factors:
        shape = tuple(g.variable(a).k for a in f.args)
        base = offsets[("f", f.id)]
        idx = np.arange(int(np.prod(shape))).reshape(shape)
        for j, a in enumerate(f.args):
            for s in range(g.variable(a).k):
                r = np.zeros(dim)
                r[base + np.take(idx, s, axis=j).ravel()] = 1.0
                r[offsets[("v", a)] + s] = -1.0
                rows.append(r)
        r = np.zeros(dim)
        r[base : base + idx.size] = 1.0
        rows.append(r)
    for v in g.variables:
        r = np.zeros(dim)
        r[offsets[("v", v.id)] : offsets[("v", v.id)] + v.k] = 1.0
        rows.append(r)
    C = np.array(rows)
    _, s, vt = np.linalg.svd(C)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return vt[rank:].T


def pack(g, beliefs):
    parts = [np.asarray(beliefs.factor[f.id], dtype=float).ravel() for f in g.factors]
    parts += [np.asarray(beliefs.variable[v.id], dtype=float) for v in g.variables]
    return np.concatenate(parts)


def unpack(g, vec):
    factor, variable = {}, {}
    pos = 0
    for f in g.factors:
        shape = tuple(g.variable(a).k for a in f.args)
        size = int(np.prod(shape))
        factor[f.id] = vec[pos : pos + size].reshape(shape)
        pos += size
    for v in g.variables:
        variable[v.id] = vec[pos : pos + v.k]
        pos += v.k
    return BetheBeliefSet(factor, variable)
