"""Message passing on annotated factor graphs.

The engine works on the hyper-variable view of a :class:`~bethemp.graph.FactorGraph`.
For a factor ``a`` with blocks ``v`` and a variable ``i`` in block ``(a, v)``:

* ``m'_{a->(a,v)} = exp(E[ln f_a])`` under the beliefs of the *other* blocks of
  ``a`` (the VMP rule). With a single block this is just ``f_a``.
* ``q_{a,v} = m'_{a->(a,v)} * prod_{i in v} n_{i->(a,v)}`` is the block belief.
* ``m_{(a,v)->i}`` marginalizes ``m'`` against the other incoming ``n`` of the
  block (BP rule). For moment-matching variables the result is projected onto
  the variable's family and the incoming ``n`` is divided back out (EP rule).
* ``n_{i->(a,v)}`` is the product of all other messages into ``i`` and the
  variable belief is the product of all of them.

Discrete messages are normalized probability vectors. Continuous messages are
:class:`~bethemp.expfam.ExpFamilyDensity` values and may be non-normalizable.
Point-mass variables hold the argmax of the product of their incoming messages.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    BetheMPError,
    DegenerateProjectionError,
    EdgeError,
    IntractableError,
    NotNormalizableError,
)
from .expfam import (
    COMPLEX_GAUSSIAN,
    GAMMA,
    ComplexGaussianStat,
    ExpFamilyDensity,
    GammaStat,
    categorical_stat,
    project,
)
from .graph import (
    MOMENTS,
    GaussianLikelihood,
    GaussianNoise,
    GaussianScale,
    LinearDelta,
    Prior,
    Table,
)

# stands in for ln 0 so that 0 * ln 0 evaluates to 0 in expectations
_LOG_ZERO = -1e300


@dataclass
class Schedule:
    """Update order and stopping rule.

    ``sequential=False`` runs parallel (Jacobi) rounds. With ``sequential=True``
    variables are visited one at a time in ``order`` (default: declaration
    order) and every message into the visited variable is refreshed from the
    current state. ``callback(state)`` is called after each visit.
    """

    max_rounds: int = None
    damping: float = 1.0
    tol: float = 1e-8
    sequential: bool = False
    order: tuple = None
    trace: bool = False
    callback: object = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class RunResult:
    beliefs: dict
    block_beliefs: dict
    factor_beliefs: dict
    m: dict
    n: dict
    iterations: int
    converged: bool
    skips: int = 0
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)


# ---- small helpers -----------------------------------------------------------


def _normalize(p):
    s = p.sum()
    if not s > 0 or not np.isfinite(s):
        raise NotNormalizableError("table message has no positive mass")
    return p / s


def _flat(var):
    if var.discrete:
        return np.full(var.k, 1.0 / var.k)
    return ExpFamilyDensity.flat(var.stat)


def _params(msg):
    return msg if isinstance(msg, np.ndarray) else msg.eta


def _damp(old, new, kappa):
    if kappa == 1.0 or old is None:
        return new
    if isinstance(new, np.ndarray):
        return (1.0 - kappa) * old + kappa * new
    return ExpFamilyDensity(new.stat, (1.0 - kappa) * old.eta + kappa * new.eta)


def _change(old, new):
    if old is None:
        return np.inf
    a, b = _params(old), _params(new)
    with np.errstate(invalid="ignore"):
        d = np.abs(a - b)
    d[(a == b)] = 0.0  # equal infinities
    return float(np.max(d)) if d.size else 0.0


def _product(msgs, var):
    """Product of messages into ``var`` (normalized table or density)."""
    if var.discrete:
        out = np.ones(var.k)
        for m in msgs:
            out = out * m
        return _normalize(out)
    eta = np.zeros(var.stat.dim)
    for m in msgs:
        eta = eta + m.eta
    return ExpFamilyDensity(var.stat, eta)


def _log_table(values):
    with np.errstate(divide="ignore"):
        lg = np.log(values)
    return np.where(values > 0, lg, _LOG_ZERO)


def _table(g, factor):
    shape = tuple(g.variable(a).k for a in factor.args)
    return factor.kind.values.reshape(shape)


def _point_location(density):
    """Argmax of an (unnormalized) density, used for EM point-mass beliefs."""
    eta = density.eta
    if density.family == GAMMA:
        if eta[0] > 0 and eta[1] < 0:
            return eta[0] / -eta[1]
        raise DegenerateProjectionError("gamma-shaped message has no interior maximum", eta.copy())
    if density.family == COMPLEX_GAUSSIAN:
        if eta[2] < 0:
            return complex(eta[0], eta[1]) / (-2.0 * eta[2])
        raise DegenerateProjectionError("Gaussian-shaped message has no maximum", eta.copy())
    raise IntractableError(f"no point estimate rule for {density.stat}")


def _expect(q, what):
    """E[p] or E[|x|^2]-type moments of a block belief (point mass or density)."""
    if q.family == "point_mass":
        x = q.eta[0]
        return {"mean": x, "second": x * x}[what]
    if q.family == GAMMA:
        return q.moments()[1]
    th = q.moments()
    return {"mean": complex(th[0], th[1]), "second": th[2]}[what]


def _cn_point(value):
    return ExpFamilyDensity.point_mass(value)


# ---- the four elementary rules ---------------------------------------------


def ep_project_send(stat, tilted, cavity):
    """EP message ``Proj[tilted] / cavity``.

    ``tilted`` exposes ``expected_statistic(stat)``; ``cavity`` is the incoming
    message from the receiving variable. Raises
    :class:`~bethemp.exceptions.DegenerateProjectionError` when the tilted
    moments do not define a family member.
    """
    return project(stat, tilted) / cavity


def _linear_message(row, target, n_msgs, args):
    """BP through ``delta(z - row . x)``; ``target`` indexes ``args``."""
    means, variances = [], []
    for pos, a in enumerate(args):
        if pos == target:
            continue
        d = n_msgs[a]
        if not d.normalizable:
            return ExpFamilyDensity.flat(ComplexGaussianStat)
        mu, var = d.mean_var()
        means.append(mu)
        variances.append(var)
    coeffs = np.array([-1.0] + list(row), dtype=complex)  # -z + row . x = 0
    others = [p for p in range(len(args)) if p != target]
    c = coeffs[others]
    # coeffs[target] * v_target = -sum(c * v_other)
    lead = coeffs[target]
    if lead == 0:
        return ExpFamilyDensity.flat(ComplexGaussianStat)
    mean = -np.sum(c * np.array(means)) / lead
    var = float(np.sum(np.abs(c) ** 2 * np.array(variances))) / abs(lead) ** 2
    if not var > 0:
        raise DegenerateProjectionError("linear message has zero variance", np.array([var]))
    return ExpFamilyDensity.complex_gaussian(mean, var)


def _discrete_block_message(g, factor, block, vid, mprime, n_msgs):
    """Sum of ``mprime`` times the other incoming ``n`` of the block, as a vector over ``vid``."""
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if len(block) > len(letters):
        raise IntractableError("block too large for dense marginalization")
    subs = letters[: len(block)]
    operands, terms = [mprime], [subs]
    for pos, a in enumerate(block):
        if a != vid:
            operands.append(n_msgs[a])
            terms.append(subs[pos])
    out = subs[block.index(vid)]
    return np.einsum(",".join(terms) + "->" + out, *operands)


def bp_factor_to_variable(g, fid, vid, n_msgs, mprime=None):
    """Message from the block of ``fid`` containing ``vid`` to ``vid`` (BP rule).

    ``n_msgs`` maps the block's other variables to their incoming messages.
    ``mprime`` overrides the block's local factor (default: the factor itself,
    which is correct for single-block factors).
    """
    factor = g.factor(fid)
    kind = factor.kind
    var = g.variable(vid)
    block = g.partition(fid)[g.block_of(fid, vid)]
    if var.discrete:
        local = _table(g, factor) if mprime is None else mprime
        return _normalize(_discrete_block_message(g, factor, block, vid, local, n_msgs))
    if mprime is not None:
        if len(block) != 1:
            raise IntractableError(f"continuous block of {fid!r} with several variables")
        return mprime
    if isinstance(kind, Prior):
        if isinstance(kind.density, ExpFamilyDensity):
            return kind.density
        raise IntractableError(f"prior {fid!r} is not a family member; put {vid!r} under moment matching")
    if isinstance(kind, GaussianLikelihood):
        return ExpFamilyDensity.complex_gaussian(kind.y, 1.0 / kind.lam)
    if isinstance(kind, LinearDelta):
        return _linear_message(kind.row, factor.args.index(vid), n_msgs, factor.args)
    raise IntractableError(
        f"factor {fid!r} ({type(kind).__name__}) cannot be marginalized exactly; split it into blocks"
    )


def variable_to_factor(g, vid, fid, m_msgs):
    """``n_{i->a}``: product of the messages from every factor except ``fid``."""
    var = g.variable(vid)
    return _product([m for a, m in m_msgs.items() if a != fid], var)


def vmp_block_update(g, fid, index, q):
    """``exp(E[ln f_a])`` over block ``index`` given beliefs ``q`` of the other blocks.

    ``q`` maps block indices to beliefs: probability tables (discrete, shaped
    over the block's variables) or densities/point masses (continuous).
    """
    factor = g.factor(fid)
    blocks = g.partition(fid)
    kind = factor.kind
    if isinstance(kind, Table):
        lf = _log_table(_table(g, factor))
        args = list(factor.args)
        own = blocks[index]
        # move own-block axes to the front, then contract the others
        order = [args.index(v) for v in own]
        rest = [b for j, b in enumerate(blocks) if j != index]
        for b in rest:
            order += [args.index(v) for v in b]
        lf = np.transpose(lf, order)
        for b in reversed(rest):
            qb = np.asarray(q[blocks.index(b)], dtype=float)
            lf = np.tensordot(lf, qb, axes=qb.ndim)
        lf = lf - np.max(lf)
        return np.exp(lf)
    if isinstance(kind, (GaussianScale, GaussianNoise)):
        other = q[1 - index]
        if index == 0:
            p = _expect(other, "mean")
            if not p > 0:
                raise DegenerateProjectionError("precision belief has non-positive mean", np.array([p]))
            mean = kind.y if isinstance(kind, GaussianNoise) else 0.0
            return ExpFamilyDensity.complex_gaussian(mean, 1.0 / p)
        if isinstance(kind, GaussianNoise):
            if other.family == "point_mass":
                z = complex(other.eta[0])
                second = abs(kind.y - z) ** 2
            else:
                mz = _expect(other, "mean")
                second = abs(kind.y) ** 2 - 2 * (np.conj(kind.y) * mz).real + _expect(other, "second")
        else:
            second = _expect(other, "second")
        return ExpFamilyDensity(GammaStat, [1.0, -float(second)])
    raise IntractableError(f"no mean-field rule for {type(kind).__name__}")


# ---- the run loop -----------------------------------------------------------


class _State:
    def __init__(self, g):
        self.g = g
        self.m = {}
        self.n = {}
        self.mprime = {}
        self.points = {}
        for fid, vid in g.edges():
            var = g.variable(vid)
            self.m[(fid, vid)] = _flat(var)
            self.n[(fid, vid)] = _flat(var)
        for var in g.variables:
            if var.point_mass:
                self.points[var.id] = 1.0 if var.init is None else var.init

    def init_belief(self, vid):
        var = self.g.variable(vid)
        if var.point_mass:
            return _cn_point(self.points[vid])
        if var.init is not None:
            if var.discrete:
                return _normalize(np.asarray(var.init, dtype=float))
            return var.init
        if var.discrete:
            return np.full(var.k, 1.0 / var.k)
        if var.family == GAMMA:
            return ExpFamilyDensity.gamma(1.0, 1.0)
        return ExpFamilyDensity.complex_gaussian(0.0, 1.0)

    def block_belief(self, fid, index):
        g = self.g
        block = g.partition(fid)[index]
        mp = self.mprime.get((fid, index))
        if g.variable(block[0]).discrete:
            if mp is None:
                out = np.ones(tuple(g.variable(v).k for v in block))
                for pos, v in enumerate(block):
                    shape = [1] * len(block)
                    shape[pos] = -1
                    out = out * self.init_belief(v).reshape(shape)
                return _normalize(out)
            out = mp
            for pos, v in enumerate(block):
                shape = [1] * len(block)
                shape[pos] = -1
                out = out * self.n[(fid, v)].reshape(shape)
            return _normalize(out)
        (vid,) = block
        if vid in self.points:
            return _cn_point(self.points[vid])
        if mp is None:
            return self.init_belief(vid)
        q = mp * self.n[(fid, vid)]
        if not q.normalizable:
            raise NotNormalizableError(f"block belief of {vid!r} in {fid!r} is not normalizable")
        return q

    def incoming(self, vid):
        return {fid: self.m[(fid, vid)] for fid in self.g.neighbors(vid)}


def _fmt(x):
    if isinstance(x, complex):
        return f"{x.real!r}{x.imag:+}j"
    return repr(float(x))


def _trace_line(rnd, fid, vid, direction, msg):
    params = _params(msg)
    edge = f"{fid}->{vid}" if direction == "f2v" else f"{vid}->{fid}"
    return ",".join([str(rnd), edge, direction] + [_fmt(p) for p in np.ravel(params)])


class _Runner:
    def __init__(self, g, schedule):
        self.g = g
        self.s = schedule
        self.state = _State(g)
        self.skips = 0
        self.trace = []

    # one outgoing message of a block, with EP projection when required
    def compute_m(self, fid, vid, mprime=None):
        g, st = self.g, self.state
        var = g.variable(vid)
        block = g.partition(fid)[g.block_of(fid, vid)]
        n_msgs = {a: st.n[(fid, a)] for a in block}
        if isinstance(g.factor(fid).kind, LinearDelta):
            n_msgs = {a: st.n[(fid, a)] for a in g.factor(fid).args}
        moment = g.constraint(vid) == MOMENTS and not var.point_mass
        kind = g.factor(fid).kind
        # Gaussian-closed messages are already family members, so Proj[m n] / n = m
        # and only non-member priors need the explicit projection.
        if not var.discrete and moment and isinstance(kind, Prior) and not isinstance(kind.density, ExpFamilyDensity):
            return ep_project_send(var.stat, kind.density.tilted(st.n[(fid, vid)]), st.n[(fid, vid)])
        msg = bp_factor_to_variable(g, fid, vid, n_msgs, mprime=mprime)
        if moment and var.discrete:
            cavity = ExpFamilyDensity.categorical(st.n[(fid, vid)])
            tilted = ExpFamilyDensity.categorical(msg * st.n[(fid, vid)])
            msg = _normalize(ep_project_send(categorical_stat(var.k), tilted, cavity).probs())
        return msg

    def refresh_mprime(self, fid, index, store):
        g, st = self.g, self.state
        blocks = g.partition(fid)
        q = {j: st.block_belief(fid, j) for j in range(len(blocks)) if j != index}
        new = vmp_block_update(g, fid, index, q)
        old = st.mprime.get((fid, index))
        new = _damp(old, new, self.s.damping)
        store[(fid, index)] = new
        return _change(old, new)

    def refresh_variable(self, vid, rnd):
        g, st = self.g, self.state
        var = g.variable(vid)
        inc = st.incoming(vid)
        for fid in g.neighbors(vid):
            new = variable_to_factor(g, vid, fid, inc)
            st.n[(fid, vid)] = new
            if self.s.trace:
                self.trace.append(_trace_line(rnd, fid, vid, "v2f", new))
        if var.point_mass:
            try:
                st.points[vid] = _point_location(_product(list(inc.values()), var))
            except DegenerateProjectionError:
                self.skips += 1

    def update_edge(self, fid, vid, rnd, mprime=None):
        st = self.state
        try:
            new = self.compute_m(fid, vid, mprime=mprime)
        except DegenerateProjectionError:
            self.skips += 1
            return 0.0, st.m[(fid, vid)]
        except BetheMPError as exc:
            raise EdgeError((fid, vid), exc) from exc
        except (ZeroDivisionError, FloatingPointError) as exc:
            raise EdgeError((fid, vid), exc) from exc
        old = st.m[(fid, vid)]
        new = _damp(old, new, self.s.damping)
        if self.s.trace:
            self.trace.append(_trace_line(rnd, fid, vid, "f2v", new))
        return _change(old, new), new

    def _mprime_for(self, store, fid, vid):
        g = self.g
        if g.is_trivial(fid):
            return None
        return store[(fid, g.block_of(fid, vid))]

    def parallel_round(self, rnd):
        g, st = self.g, self.state
        delta = 0.0
        new_mprime = {}
        for f in g.factors:
            if not g.is_trivial(f.id):
                for j in range(len(g.partition(f.id))):
                    try:
                        delta = max(delta, self.refresh_mprime(f.id, j, new_mprime))
                    except DegenerateProjectionError as exc:
                        if (f.id, j) not in st.mprime:
                            raise EdgeError((f.id, g.partition(f.id)[j]), exc) from exc
                        self.skips += 1
                        new_mprime[(f.id, j)] = st.mprime[(f.id, j)]
                    except BetheMPError as exc:
                        raise EdgeError((f.id, g.partition(f.id)[j]), exc) from exc
        new_m = {}
        for fid, vid in g.edges():
            d, msg = self.update_edge(fid, vid, rnd, self._mprime_for(new_mprime, fid, vid))
            delta = max(delta, d)
            new_m[(fid, vid)] = msg
        st.mprime.update(new_mprime)
        st.m.update(new_m)
        for var in g.variables:
            self.refresh_variable(var.id, rnd)
        return delta

    def sequential_round(self, rnd):
        g, st = self.g, self.state
        delta = 0.0
        for vid in self.s.order or [v.id for v in g.variables]:
            for fid in g.neighbors(vid):
                mprime = None
                if not g.is_trivial(fid):
                    j = g.block_of(fid, vid)
                    try:
                        delta = max(delta, self.refresh_mprime(fid, j, st.mprime))
                    except DegenerateProjectionError as exc:
                        if (fid, j) not in st.mprime:
                            raise EdgeError((fid, vid), exc) from exc
                        self.skips += 1
                    except BetheMPError as exc:
                        raise EdgeError((fid, vid), exc) from exc
                    mprime = st.mprime[(fid, j)]
                d, msg = self.update_edge(fid, vid, rnd, mprime)
                delta = max(delta, d)
                st.m[(fid, vid)] = msg
            self.refresh_variable(vid, rnd)
            if self.s.callback is not None:
                self.s.callback(st)
        return delta


def variable_beliefs(g, m):
    """``b_i`` proportional to the product of incoming messages ``m[(factor, var)]``."""
    out = {}
    for var in g.variables:
        out[var.id] = _product([m[(fid, var.id)] for fid in g.neighbors(var.id)], var)
    return out


def factor_beliefs(g, n, mprime=None):
    """``b_a`` proportional to ``f_a`` times the incoming ``n`` (discrete single-block factors).

    For split factors the belief is the product of its block beliefs.
    """
    out = {}
    for f in g.factors:
        if not all(g.variable(a).discrete for a in f.args):
            continue
        shape = tuple(g.variable(a).k for a in f.args)
        if g.is_trivial(f.id):
            b = _table(g, f).astype(float)
            for pos, a in enumerate(f.args):
                s = [1] * len(f.args)
                s[pos] = -1
                b = b * n[(f.id, a)].reshape(s)
            out[f.id] = _normalize(b)
        elif mprime is not None:
            b = np.ones(shape)
            for j, block in enumerate(g.partition(f.id)):
                qb = mprime[(f.id, j)]
                for pos, a in enumerate(block):
                    s = [1] * len(block)
                    s[pos] = -1
                    qb = qb * n[(f.id, a)].reshape(s)
                qb = _normalize(qb)
                s = [1] * len(f.args)
                for a in block:
                    s[f.args.index(a)] = g.variable(a).k
                b = b * qb.reshape(s)
            out[f.id] = b
    return out


def _snapshot(state):
    return {"m": dict(state.m), "n": dict(state.n)}


def run(g, schedule=None):
    """Iterate until the largest message change is below ``tol`` or the round limit.

    Returns a :class:`RunResult` with variable, block and (discrete) factor
    beliefs, the final messages, the round count, a convergence flag, the
    number of skipped degenerate EP updates and optional trace lines of the
    form ``round,edge,direction,params...``.
    """
    schedule = schedule or Schedule()
    max_rounds = schedule.max_rounds or 10 * len(g.variables)
    runner = _Runner(g, schedule)
    history = []
    converged = False
    rounds = 0
    for rnd in range(1, max_rounds + 1):
        rounds = rnd
        if schedule.sequential:
            delta = runner.sequential_round(rnd)
        else:
            delta = runner.parallel_round(rnd)
        history.append(_snapshot(runner.state))
        if delta < schedule.tol:
            converged = True
            break
    st = runner.state
    beliefs = {}
    for var in g.variables:
        if var.point_mass:
            beliefs[var.id] = _cn_point(st.points[var.id])
        else:
            beliefs[var.id] = _product(list(st.incoming(var.id).values()), var)
    blocks = {}
    for f in g.factors:
        for j in range(len(g.partition(f.id))):
            if g.is_trivial(f.id):
                continue
            try:
                blocks[(f.id, j)] = st.block_belief(f.id, j)
            except NotNormalizableError:
                blocks[(f.id, j)] = None
    return RunResult(
        beliefs=beliefs,
        block_beliefs=blocks,
        factor_beliefs=factor_beliefs(g, st.n, st.mprime),
        m=dict(st.m),
        n=dict(st.n),
        iterations=rounds,
        converged=converged,
        skips=runner.skips,
        trace=runner.trace,
        history=history,
    )


def run_bp(g, max_rounds=None, tol=1e-8):
    """Plain parallel sum-product on a discrete graph, ignoring all annotations.

    Kept deliberately independent of :func:`run` so the two can be compared.
    Returns ``(beliefs, history, converged)`` where ``history`` lists the
    factor-to-variable messages after every round.
    """
    max_rounds = max_rounds or 10 * len(g.variables)
    tables = {f.id: _table(g, f) for f in g.factors}
    n = {(f, v): np.full(g.variable(v).k, 1.0 / g.variable(v).k) for f, v in g.edges()}
    m = dict(n)
    history = []
    converged = False
    for _ in range(max_rounds):
        new_m = {}
        for f in g.factors:
            t = tables[f.id]
            for pos, v in enumerate(f.args):
                out = t
                # contract every other axis with its incoming message
                for other in reversed(range(len(f.args))):
                    if other == pos:
                        continue
                    out = np.moveaxis(out, other, -1) @ n[(f.id, f.args[other])]
                new_m[(f.id, v)] = out / out.sum()
        delta = max(float(np.max(np.abs(new_m[e] - m[e]))) for e in m)
        m = new_m
        for var in g.variables:
            for fid in g.neighbors(var.id):
                p = np.ones(var.k)
                for other in g.neighbors(var.id):
                    if other != fid:
                        p = p * m[(other, var.id)]
                n[(fid, var.id)] = p / p.sum()
        history.append(dict(m))
        if delta < tol:
            converged = True
            break
    beliefs = {}
    for var in g.variables:
        p = np.ones(var.k)
        for fid in g.neighbors(var.id):
            p = p * m[(fid, var.id)]
        beliefs[var.id] = p / p.sum()
    return beliefs, history, converged
