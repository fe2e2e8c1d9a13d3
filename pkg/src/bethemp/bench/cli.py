"""Command-line entry point: ``bethemp {solve,sweep,verify,graph-demo}``."""

import argparse
import json
import sys

import numpy as np

from .. import bethe, engine
from ..exceptions import BetheMPError
from ..graph import load_graph
from ..sbl import SolverConfig, load_problem, nmse, save_problem
from ..sbl.oracles import to_db
from .instances import InstanceSpec, generate_instance
from .sweep import DEFAULT_GRID, SOLVER_NAMES, SweepConfig, run_sweep, solver_setup
from .verify import SUITES, run_suites


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _solver_args(p, default_solver):
    p.add_argument("--solver", default=default_solver,
                   help=f"solver name(s), comma separated; one of {', '.join(SOLVER_NAMES)}")
    p.add_argument("--damping", type=float, default=None, help="damping factor in (0, 1]")
    p.add_argument("--max-iter", type=int, default=None, help="iteration cap (default: M)")
    p.add_argument("--tol", type=float, default=1e-8, help="stop when max |x_new - x_old| < tol")
    p.add_argument("--finite-n-correction", action="store_true",
                   help="averaged-variance correction for the AMP solver")


def _instance_args(p):
    p.add_argument("--n", type=int, default=250, help="number of observations N")
    p.add_argument("--m", type=int, default=500, help="number of unknowns M")
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--v0", type=float, default=1.0, help="slab variance")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="bethemp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one solver on one instance")
    _instance_args(p)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--problem", help="read the instance from a problem file instead of generating it")
    p.add_argument("--save-problem", help="write the instance to a problem file")
    p.add_argument("--out", help="write the estimate as JSON ([re, im] pairs)")
    _solver_args(p, "ep_variant")

    p = sub.add_parser("sweep", help="NMSE versus sparsity, written as CSV")
    _instance_args(p)
    p.add_argument("--rho", default=",".join(str(r) for r in DEFAULT_GRID), help="comma-separated grid")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--no-timing", action="store_true", help="leave the ms column empty")
    _solver_args(p, "ep_variant,amp")

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--suite", action="append", help=f"suite to run (repeatable): {', '.join(SUITES)}")

    p = sub.add_parser("graph-demo", help="run message passing on a graph file")
    p.add_argument("path")
    p.add_argument("--sequential", action="store_true")
    p.add_argument("--damping", type=float, default=1.0)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--trace", action="store_true", help="print one line per message update")
    return parser


def _solver_config(args):
    return SolverConfig(max_iter=args.max_iter, tol=args.tol,
                        finite_n_correction=args.finite_n_correction)


def cmd_solve(args, out):
    if args.problem:
        problem = load_problem(args.problem)
        x = problem.x_true
    else:
        spec = InstanceSpec(N=args.n, M=args.m, rho=args.rho, snr_db=args.snr_db, v0=args.v0,
                            seed=args.seed, trial=args.trial)
        problem, x = generate_instance(spec)
    if args.save_problem:
        save_problem(problem, args.save_problem)
    names = _names(args.solver)
    if len(names) != 1:
        raise ValueError("solve takes exactly one solver")
    cfg = SweepConfig(solvers=names, solver_config=_solver_config(args), damping=args.damping, trials=1)
    fn, scfg = solver_setup(names[0], cfg)
    res = fn(problem, scfg)
    print(f"solver      {names[0]}", file=out)
    print(f"size        N={problem.N} M={problem.M}", file=out)
    print(f"iterations  {res.iterations} (converged: {res.converged}, skipped updates: {res.skips})", file=out)
    if res.lam_hat is not None:
        print(f"lambda_hat  {res.lam_hat:.6g}", file=out)
    order = np.argsort(-np.abs(res.x_hat))[:5]
    top = ", ".join(f"x[{m}]={res.x_hat[m]:.4f}" for m in order)
    print(f"largest     {top}", file=out)
    if x is not None and np.any(x != 0):
        err = nmse(res.x_hat, x)
        print(f"nmse        {err:.6e} ({to_db(err):.2f} dB)", file=out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"x_hat": [[float(v.real), float(v.imag)] for v in res.x_hat],
                       "var": [float(v) for v in res.var], "iterations": res.iterations,
                       "converged": res.converged}, fh)
    return 0


def cmd_sweep(args, out):
    template = InstanceSpec(N=args.n, M=args.m, snr_db=args.snr_db, v0=args.v0, seed=args.seed)
    cfg = SweepConfig(template=template, grid=_floats(args.rho), trials=args.trials,
                      solvers=_names(args.solver), solver_config=_solver_config(args),
                      damping=args.damping, timing=not args.no_timing, out=args.out)
    records = run_sweep(cfg, progress=lambda rho: print(f"rho={rho} done", file=sys.stderr))
    for r in records:
        print(r.row(), file=out)
    return 0


def cmd_verify(args, out):
    names = []
    for s in args.suite or []:
        names.extend(_names(s))
    results = run_suites(names or None)
    for r in results:
        print(r.line(), file=out)
    failed = [r.name for r in results if not r.passed]
    print("all suites passed" if not failed else f"FAILED: {', '.join(failed)}", file=out)
    return 1 if failed else 0


def cmd_graph_demo(args, out):
    g = load_graph(args.path)
    sched = engine.Schedule(max_rounds=args.max_rounds, damping=args.damping, tol=args.tol,
                            sequential=args.sequential, trace=args.trace)
    res = engine.run(g, sched)
    if args.trace:
        for line in res.trace:
            print(line, file=out)
    print(f"{g!r}: tree={g.is_tree()} rounds={res.iterations} converged={res.converged}", file=out)
    exact = None
    if g.discrete:
        try:
            exact = bethe.brute_force_marginals(g)
        except BetheMPError:
            exact = None
    for var in g.variables:
        b = res.beliefs[var.id]
        text = " ".join(f"{p:.6f}" for p in b) if var.discrete else repr(b)
        line = f"  {var.id}: {text}"
        if exact is not None:
            line += f"   (exact {' '.join(f'{p:.6f}' for p in exact[var.id])})"
        print(line, file=out)
    if exact is not None and all(g.is_trivial(f.id) for f in g.factors):
        fb = bethe.bethe_free_energy(bethe.beliefs_from_run(res), g)
        print(f"  F_B = {fb:.10f}   -ln Z = {-bethe.brute_force_log_Z(g):.10f}", file=out)
    return 0


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify, "graph-demo": cmd_graph_demo}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except (BetheMPError, ValueError, OSError) as exc:
        print(f"bethemp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
