"""NMSE-versus-sparsity sweeps.

Trials run on a thread pool capped by ``BENCH_THREADS``. Each trial draws its
instance from an independent substream keyed by ``(seed, rho, trial)`` and the
per-trial NMSE values are summed in trial order, so the output does not depend
on the number of threads or on completion order.
"""

import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import __version__
from ..sbl import SOLVERS, SolverConfig, nmse, nmse_db
from .instances import RNG_DESCRIPTION, InstanceSpec, generate_instance

CSV_COLUMNS = ("solver", "rho", "trials", "nmse_db", "mean_iters", "skip_rate", "ms")
DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4)
DAMPED_EP_KAPPA = 0.5

# "ep_damped" is full EP with damping switched on; everything else maps to SOLVERS
SOLVER_NAMES = tuple(sorted(SOLVERS)) + ("ep_damped",)


@dataclass
class SweepConfig:
    template: InstanceSpec = field(default_factory=InstanceSpec)
    grid: tuple = DEFAULT_GRID
    trials: int = 50
    solvers: tuple = ("ep_variant", "amp")
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    damping: float = None
    timing: bool = True
    out: str = None

    def __post_init__(self):
        self.grid = tuple(float(r) for r in self.grid)
        self.solvers = tuple(self.solvers)
        if not self.grid:
            raise ValueError("the sparsity grid is empty")
        if not self.solvers:
            raise ValueError("no solvers requested")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for name in self.solvers:
            if name not in SOLVER_NAMES:
                raise ValueError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")


@dataclass
class SweepRecord:
    solver: str
    rho: float
    trials: int
    nmse_db: float
    mean_iters: float
    skip_rate: float
    ms: float = None

    def row(self):
        ms = "" if self.ms is None else f"{self.ms:.1f}"
        return (f"{self.solver},{self.rho!r},{self.trials},{self.nmse_db:.6f},"
                f"{self.mean_iters:.3f},{self.skip_rate:.6f},{ms}")


def solver_setup(name, cfg):
    """``(function, SolverConfig)`` for a solver name under the sweep's overrides."""
    base = cfg.solver_config
    if name == "ep_damped":
        kappa = cfg.damping if cfg.damping is not None else DAMPED_EP_KAPPA
        return SOLVERS["ep"], replace(base, damping=kappa)
    if cfg.damping is not None:
        base = replace(base, damping=cfg.damping)
    return SOLVERS[name], base


def thread_count():
    raw = os.environ.get("BENCH_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError("BENCH_THREADS must be a positive integer")
    return n


def _run_trial(cfg, rho, trial):
    spec = cfg.template.with_(rho=rho, trial=trial)
    problem, x = generate_instance(spec)
    out = {}
    for name in cfg.solvers:
        fn, scfg = solver_setup(name, cfg)
        t0 = time.perf_counter()
        res = fn(problem, scfg)
        elapsed = time.perf_counter() - t0
        err = nmse(res.x_hat, x) if np.any(x != 0) else float("nan")  # NMSE undefined for x = 0
        out[name] = (err, res.iterations, res.skips, elapsed)
    return out


def run_trials(cfg, rho, threads=None):
    """Per-trial results for one grid point, ordered by trial index."""
    threads = threads or thread_count()
    if threads == 1:
        return [_run_trial(cfg, rho, t) for t in range(cfg.trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: _run_trial(cfg, rho, t), range(cfg.trials)))


def aggregate(name, rho, results, timing=True):
    errs = [r[name][0] for r in results]
    iters = [r[name][1] for r in results]
    skips = [r[name][2] for r in results]
    total = 0.0
    for e in errs:  # fixed summation order
        total += e
    mean_iters = sum(iters) / len(iters)
    skip_rate = sum(skips) / max(sum(iters), 1)
    ms = 1000.0 * sum(r[name][3] for r in results) / len(results) if timing else None
    return SweepRecord(name, rho, len(results), nmse_db(total / len(errs)), mean_iters, skip_rate, ms)


def header_lines(cfg):
    t = cfg.template
    s = cfg.solver_config
    return [
        f"# bethemp {__version__} nmse-vs-sparsity sweep",
        f"# N={t.N} M={t.M} snr_db={t.snr_db!r} v0={t.v0!r} seed={t.seed} trials={cfg.trials}",
        f"# grid={','.join(repr(r) for r in cfg.grid)} solvers={','.join(cfg.solvers)}",
        f"# max_iter={s.max_iter if s.max_iter else 'M'} tol={s.tol!r} damping={cfg.damping!r} "
        f"finite_n_correction={s.finite_n_correction}",
        "# snr: E|[Ax]_n|^2 / sigma^2 with analytic signal power (M/N) rho v0",
        "# nmse_db: 10 log10 of the trial mean of ||x_hat - x||^2 / ||x||^2, floored at -120",
        f"# rng: {RNG_DESCRIPTION}",
        f"# ms: {'mean wall-clock per trial' if cfg.timing else 'timing disabled'}",
    ]


def write_csv(path, cfg, records):
    """Write header and rows atomically (temp file + rename)."""
    lines = header_lines(cfg) + [",".join(CSV_COLUMNS)] + [r.row() for r in records]
    text = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sweep-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_sweep(cfg, threads=None, progress=None):
    """Run every (solver, rho) cell; write the CSV when ``cfg.out`` is set."""
    if cfg.out is not None:
        directory = os.path.dirname(os.path.abspath(cfg.out))
        if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
            raise OSError(f"cannot write to {cfg.out!r}")
    records = []
    by_rho = {}
    for rho in cfg.grid:
        by_rho[rho] = run_trials(cfg, rho, threads)
        if progress is not None:
            progress(rho)
    for name in cfg.solvers:
        for rho in cfg.grid:
            records.append(aggregate(name, rho, by_rho[rho], cfg.timing))
    if cfg.out is not None:
        write_csv(cfg.out, cfg, records)
    return records


def data_rows(text, drop_timing=False):
    """Data rows of a sweep CSV, optionally without the ``ms`` column."""
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][1:]
    if drop_timing:
        rows = [r.rsplit(",", 1)[0] for r in rows]
    return rows
