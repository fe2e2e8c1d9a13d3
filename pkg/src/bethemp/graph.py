"""Annotated factor graphs.

A :class:`FactorGraph` holds variables, factors, a partition of every factor's
arguments into disjoint blocks, and a constraint class per variable:

* ``"marg"``: marginalization consistency between factor-side and variable-side beliefs;
* ``"moments"``: matching of the variable family's sufficient-statistic moments only.

A factor whose partition is the single block of all its arguments is handled by
the BP/EP rules. Splitting it into several blocks forces its belief to factorize
across them (the mean-field/VMP rule). A variable marked ``point_mass`` has its
belief restricted to a Dirac delta, which reduces the VMP step to EM.

Graphs are immutable once built. Small discrete graphs can also be written in a
line-oriented text format, see :func:`parse_graph`.
"""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .exceptions import GraphValidationError
from .expfam import (
    CATEGORICAL,
    COMPLEX_GAUSSIAN,
    GAMMA,
    ExpFamilyDensity,
    SufficientStatistic,
    categorical_stat,
)

MARG = "marg"
MOMENTS = "moments"
CONSTRAINTS = (MARG, MOMENTS)
FULL = "full"

CONTINUOUS_FAMILIES = (COMPLEX_GAUSSIAN, GAMMA)


@dataclass(frozen=True)
class Variable:
    """A graph variable.

    ``family`` is ``"categorical"`` (with ``k`` states), ``"complex_gaussian"`` or
    ``"gamma"`` (a positive precision). ``init`` seeds the belief used before the
    first update of mean-field blocks; it is a probability vector, a density or,
    for point-mass variables, a location.
    """

    id: str
    family: str
    k: int = 0
    point_mass: bool = False
    init: object = None

    def __post_init__(self):
        if self.family == CATEGORICAL:
            if self.k < 1:
                raise GraphValidationError(f"discrete variable {self.id!r} needs at least one state")
            if self.point_mass:
                raise GraphValidationError(f"point-mass marker on discrete variable {self.id!r}")
        elif self.family not in CONTINUOUS_FAMILIES:
            raise GraphValidationError(f"variable {self.id!r}: unsupported family {self.family!r}")

    @property
    def discrete(self):
        return self.family == CATEGORICAL

    @property
    def stat(self):
        if self.discrete:
            return categorical_stat(self.k)
        return SufficientStatistic(self.family)


def discrete(id, k):
    return Variable(id, CATEGORICAL, int(k))


def gaussian(id, init=None):
    return Variable(id, COMPLEX_GAUSSIAN, init=init)


def precision(id, point_mass=False, init=None):
    return Variable(id, GAMMA, point_mass=point_mass, init=init)


# ---- factor kinds ----------------------------------------------------------


@dataclass(frozen=True)
class Table:
    """Dense non-negative table over discrete arguments (row-major in argument order)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class Prior:
    """Unary factor: an :class:`ExpFamilyDensity` or a prior exposing ``tilted``."""

    density: object


@dataclass(frozen=True)
class GaussianLikelihood:
    """``CN(y; z, 1/lam)`` as a function of its single argument ``z``."""

    y: complex
    lam: float


@dataclass(frozen=True)
class LinearDelta:
    """``delta(z - row . x)`` over arguments ``(z, x_1, ..., x_K)``."""

    row: tuple

    def __post_init__(self):
        object.__setattr__(self, "row", tuple(complex(a) for a in self.row))


@dataclass(frozen=True)
class GaussianScale:
    """``CN(x; 0, 1/p)`` over arguments ``(x, p)`` with ``p`` a precision."""


@dataclass(frozen=True)
class GaussianNoise:
    """``CN(y; z, 1/lam)`` over arguments ``(z, lam)`` with the precision unknown."""

    y: complex


@dataclass(frozen=True)
class Factor:
    id: str
    args: tuple
    kind: object

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


# ---- the graph -------------------------------------------------------------


@dataclass(frozen=True)
class HyperNode:
    """One block ``I_{a,v}`` of a factor's partition."""

    factor: str
    index: int
    vars: tuple

    @property
    def id(self):
        return f"{self.factor}#{self.index}"


@dataclass(frozen=True)
class HyperView:
    """The modified graph: factor -- hyper-variable -- variable."""

    nodes: tuple
    factor_of: dict = field(default_factory=dict)
    var_neighbors: dict = field(default_factory=dict)

    def edges(self):
        """Variable/factor pairs implied by block membership."""
        return {(h.factor, v) for h in self.nodes for v in h.vars}


class FactorGraph:
    """Validated, immutable factor graph. Build with :func:`build`."""

    def __init__(self, variables, factors, partitions, constraints):
        self._vars = {v.id: v for v in variables}
        self._factors = {f.id: f for f in factors}
        self._var_order = tuple(v.id for v in variables)
        self._factor_order = tuple(f.id for f in factors)
        self._partitions = {fid: tuple(tuple(b) for b in blocks) for fid, blocks in partitions.items()}
        self._constraints = dict(constraints)
        nbrs = defaultdict(list)
        for f in factors:
            for v in f.args:
                nbrs[v].append(f.id)
        self._neighbors = {v: tuple(nbrs[v]) for v in self._var_order}

    # ---- queries ----
    @property
    def variables(self):
        return tuple(self._vars[v] for v in self._var_order)

    @property
    def factors(self):
        return tuple(self._factors[f] for f in self._factor_order)

    def variable(self, vid):
        return self._vars[vid]

    def factor(self, fid):
        return self._factors[fid]

    def neighbors(self, vid):
        return self._neighbors[vid]

    def degree(self, vid):
        """``A_i``, the number of factors touching the variable."""
        return len(self._neighbors[vid])

    def degrees(self):
        return {v: len(n) for v, n in self._neighbors.items()}

    def partition(self, fid):
        return self._partitions[fid]

    def block_of(self, fid, vid):
        for idx, block in enumerate(self._partitions[fid]):
            if vid in block:
                return idx
        raise KeyError((fid, vid))

    def constraint(self, vid):
        return self._constraints[vid]

    def edge_constraint(self, fid, vid):
        if vid not in self._factors[fid].args:
            raise KeyError((fid, vid))
        return self._constraints[vid]

    def is_trivial(self, fid):
        return len(self._partitions[fid]) == 1

    @property
    def discrete(self):
        return all(v.discrete for v in self._vars.values())

    def edges(self):
        return [(f.id, v) for f in self.factors for v in f.args]

    # ---- topology ----
    def _components(self):
        parent = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        cycle = False
        for fid, vid in self.edges():
            a, b = find(("f", fid)), find(("v", vid))
            if a == b:
                cycle = True
            else:
                parent[a] = b
        for v in self._var_order:
            find(("v", v))
        for f in self._factor_order:
            find(("f", f))
        roots = {find(x) for x in list(parent)}
        return len(roots), cycle

    def is_connected(self):
        return self._components()[0] == 1

    def is_forest(self):
        return not self._components()[1]

    def is_tree(self):
        count, cycle = self._components()
        return count == 1 and not cycle

    def hyper_view(self):
        """One hyper-variable node per (factor, block)."""
        nodes = []
        var_nbrs = defaultdict(list)
        for f in self.factors:
            for idx, block in enumerate(self._partitions[f.id]):
                h = HyperNode(f.id, idx, block)
                nodes.append(h)
                for v in block:
                    var_nbrs[v].append(h.id)
        return HyperView(
            nodes=tuple(nodes),
            factor_of={h.id: h.factor for h in nodes},
            var_neighbors={v: tuple(var_nbrs[v]) for v in self._var_order},
        )

    def __repr__(self):
        return f"FactorGraph({len(self._vars)} variables, {len(self._factors)} factors)"


def _check_kind(f, variables):
    args = [variables[a] for a in f.args]
    kind = f.kind
    if isinstance(kind, Table):
        if not all(v.discrete for v in args):
            raise GraphValidationError(f"table factor {f.id!r} touches a continuous variable")
        shape = tuple(v.k for v in args)
        if kind.values.shape != shape:
            if kind.values.size != int(np.prod(shape)):
                raise GraphValidationError(
                    f"table factor {f.id!r} has {kind.values.size} entries, expected shape {shape}"
                )
        if np.any(kind.values < 0) or not np.all(np.isfinite(kind.values)):
            raise GraphValidationError(f"table factor {f.id!r} has negative or non-finite entries")
        if not np.any(kind.values > 0):
            raise GraphValidationError(f"table factor {f.id!r} is identically zero")
    elif isinstance(kind, Prior):
        if len(args) != 1:
            raise GraphValidationError(f"prior {f.id!r} must be unary")
        d = kind.density
        if isinstance(d, ExpFamilyDensity):
            if d.stat != args[0].stat:
                raise GraphValidationError(f"prior {f.id!r} is {d.stat}, variable is {args[0].stat}")
        elif not hasattr(d, "tilted") or args[0].family != COMPLEX_GAUSSIAN:
            raise GraphValidationError(f"prior {f.id!r} is neither a family member nor a tiltable prior")
    elif isinstance(kind, GaussianLikelihood):
        if len(args) != 1 or args[0].family != COMPLEX_GAUSSIAN:
            raise GraphValidationError(f"likelihood {f.id!r} needs one complex Gaussian argument")
        if not kind.lam > 0:
            raise GraphValidationError(f"likelihood {f.id!r} needs a positive precision")
    elif isinstance(kind, LinearDelta):
        if len(args) < 2 or any(v.family != COMPLEX_GAUSSIAN for v in args):
            raise GraphValidationError(f"linear factor {f.id!r} needs complex Gaussian (z, x...) arguments")
        if len(kind.row) != len(args) - 1:
            raise GraphValidationError(f"linear factor {f.id!r}: row length differs from x count")
        if not any(a != 0 for a in kind.row):
            raise GraphValidationError(f"linear factor {f.id!r} has an all-zero row")
    elif isinstance(kind, (GaussianScale, GaussianNoise)):
        if len(args) != 2 or args[0].family != COMPLEX_GAUSSIAN or args[1].family != GAMMA:
            raise GraphValidationError(f"factor {f.id!r} needs (complex Gaussian, precision) arguments")
    else:
        raise GraphValidationError(f"factor {f.id!r} has unknown kind {type(kind).__name__}")


def build(variables, factors, partitions=None, constraints=None):
    """Validate the pieces and return a :class:`FactorGraph`.

    ``partitions`` maps a factor id to a list of blocks (each an iterable of
    variable ids) or to ``"full"`` for one block per argument; absent factors get
    the trivial partition. ``constraints`` maps a variable id to ``"marg"`` or
    ``"moments"`` (default ``"marg"``); a mapping keyed by ``(factor, variable)``
    edges is also accepted provided all edges of a variable agree.
    """
    variables = list(variables)
    factors = list(factors)
    partitions = dict(partitions or {})
    constraints = dict(constraints or {})

    var_map = {}
    for v in variables:
        if v.id in var_map:
            raise GraphValidationError(f"duplicate variable {v.id!r}")
        var_map[v.id] = v
    seen = set()
    for f in factors:
        if f.id in seen:
            raise GraphValidationError(f"duplicate factor {f.id!r}")
        seen.add(f.id)
        if not f.args:
            raise GraphValidationError(f"factor {f.id!r} has no arguments")
        for a in f.args:
            if a not in var_map:
                raise GraphValidationError(f"factor {f.id!r} references unknown variable {a!r}")
        if len(set(f.args)) != len(f.args):
            raise GraphValidationError(f"factor {f.id!r} repeats an argument")
        _check_kind(f, var_map)

    degree = defaultdict(int)
    for f in factors:
        for a in f.args:
            degree[a] += 1
    for v in variables:
        if degree[v.id] < 1:
            raise GraphValidationError(f"variable {v.id!r} is not attached to any factor")

    resolved = {}
    fmap = {f.id: f for f in factors}
    for fid in partitions:
        if fid not in fmap:
            raise GraphValidationError(f"partition for unknown factor {fid!r}")
    for f in factors:
        blocks = partitions.get(f.id)
        if blocks is None:
            blocks = [f.args]
        elif blocks == FULL:
            blocks = [(a,) for a in f.args]
        blocks = [tuple(b) for b in blocks]
        flat = [v for b in blocks for v in b]
        if any(not b for b in blocks):
            raise GraphValidationError(f"factor {f.id!r} has an empty block")
        if len(flat) != len(set(flat)):
            raise GraphValidationError(f"factor {f.id!r} has overlapping partition blocks")
        if set(flat) != set(f.args):
            raise GraphValidationError(f"blocks of factor {f.id!r} do not cover its arguments exactly")
        # keep argument order inside each block
        resolved[f.id] = [tuple(a for a in f.args if a in set(b)) for b in blocks]

    per_var = {}
    for key, kind in constraints.items():
        if kind not in CONSTRAINTS:
            raise GraphValidationError(f"unknown constraint {kind!r}")
        if isinstance(key, tuple):
            fid, vid = key
            if fid not in fmap or vid not in fmap[fid].args:
                raise GraphValidationError(f"constraint on non-edge {key!r}")
        else:
            vid = key
            if vid not in var_map:
                raise GraphValidationError(f"constraint on unknown variable {vid!r}")
        if per_var.setdefault(vid, kind) != kind:
            raise GraphValidationError(f"variable {vid!r} mixes constraint kinds")
    edge_keyed = defaultdict(set)
    for key in constraints:
        if isinstance(key, tuple):
            edge_keyed[key[1]].add(key[0])
    for vid, fids in edge_keyed.items():
        missing = set(f.id for f in factors if vid in f.args) - fids
        if missing and vid not in constraints:
            # unlabelled edges default to "marg"; they must agree with the labelled ones
            if per_var[vid] != MARG:
                raise GraphValidationError(f"variable {vid!r} mixes constraint kinds")
    full = {v.id: per_var.get(v.id, MARG) for v in variables}

    for f in factors:
        blocks = resolved[f.id]
        if len(blocks) > 1 and isinstance(f.kind, (LinearDelta, Prior, GaussianLikelihood)):
            raise GraphValidationError(f"factor {f.id!r} of kind {type(f.kind).__name__} cannot be split")
    for v in variables:
        if v.point_mass:
            for fid in (f.id for f in factors if v.id in f.args):
                f = fmap[fid]
                if len(resolved[fid]) > 1 and len(next(b for b in resolved[fid] if v.id in b)) > 1:
                    raise GraphValidationError(f"point-mass variable {v.id!r} shares a block in {fid!r}")

    return FactorGraph(variables, factors, resolved, full)


# ---- text format -----------------------------------------------------------


def parse_graph(text):
    """Parse the line-oriented graph format.

    ::

        # comment
        var x1 discrete 2
        var z gaussian
        factor f1 table x1 0.6 0.4
        factor f12 table x1 x2 0.9 0.1 0.1 0.9
        partition f12 x1|x2
        constraint x2 moments

    Table entries follow the argument list and are row-major in argument order.
    Blocks of a partition are separated by ``|``; variables inside one block by
    commas.
    """
    variables, factors, partitions, constraints = [], [], {}, {}
    known = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "var":
                vid, dom = tok[1], tok[2]
                if dom == "discrete":
                    v = discrete(vid, int(tok[3]))
                elif dom == "gaussian" and len(tok) == 3:
                    v = gaussian(vid)
                else:
                    raise ValueError(f"unknown domain {dom!r}")
                variables.append(v)
                known[vid] = v
            elif tok[0] == "factor":
                fid, kind = tok[1], tok[2]
                if kind != "table":
                    raise ValueError(f"unknown factor kind {kind!r}")
                args = []
                rest = tok[3:]
                while rest and rest[0] in known:
                    args.append(rest.pop(0))
                shape = tuple(known[a].k for a in args)
                values = np.array([float(x) for x in rest])
                if values.size != int(np.prod(shape)) or not args:
                    raise ValueError(f"expected {int(np.prod(shape))} table entries, got {values.size}")
                factors.append(Factor(fid, tuple(args), Table(values.reshape(shape))))
            elif tok[0] == "partition":
                fid = tok[1]
                spec = "".join(tok[2:])
                partitions[fid] = [tuple(b.split(",")) for b in spec.split("|")]
            elif tok[0] == "constraint":
                if len(tok) != 3:
                    raise ValueError("constraint takes a variable and a kind")
                constraints[tok[1]] = tok[2]
            else:
                raise ValueError(f"unknown directive {tok[0]!r}")
        except (IndexError, ValueError, KeyError) as exc:
            raise GraphValidationError(f"line {lineno}: {exc}") from None
    return build(variables, factors, partitions, constraints)


def load_graph(path):
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())
