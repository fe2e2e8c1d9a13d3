"""Oracle suites behind ``bethemp verify``.

Each suite compares the library against an independent reference and returns a
:class:`SuiteResult`. Suites are deterministic (fixed seeds).
"""

import time
from dataclasses import dataclass

import numpy as np

from .. import bethe, engine
from ..sbl import SolverConfig, denoise_bg, exact_mmse_gaussian, solve_ep, solve_ep_variant
from ..sbl.oracles import denoise_bg_quadrature
from .fixtures import random_gaussian_problem, random_graph, random_tree


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name:<9} {verdict}  {self.detail}  ({self.seconds:.2f}s)"


def tree_suite(count=50, seed=11):
    """BP marginals and Bethe free energy on random trees against enumeration."""
    rng = np.random.default_rng(seed)
    worst_marg = worst_fe = 0.0
    for _ in range(count):
        g = random_tree(rng)
        res = engine.run(g)
        exact = bethe.brute_force_marginals(g)
        for vid, p in exact.items():
            worst_marg = max(worst_marg, float(np.max(np.abs(res.beliefs[vid] - p))))
        fb = bethe.bethe_free_energy(bethe.beliefs_from_run(res), g)
        worst_fe = max(worst_fe, abs(fb + bethe.brute_force_log_Z(g)))
    ok = worst_marg < 1e-10 and worst_fe < 1e-10
    return ok, f"{count} trees, max marginal error {worst_marg:.1e}, max |F_B + ln Z| {worst_fe:.1e}"


def mmse_suite(count=30, seed=12):
    """Both EP solvers against the exact Gaussian posterior mean."""
    rng = np.random.default_rng(seed)
    cfg = SolverConfig(max_iter=5000, tol=1e-13)
    worst = 0.0
    for _ in range(count):
        p = random_gaussian_problem(rng)
        ref, _ = exact_mmse_gaussian(p.A, p.y, p.lam, p.prior.alpha)
        scale = max(float(np.max(np.abs(ref))), 1e-12)
        for solver in (solve_ep, solve_ep_variant):
            x = solver(p, cfg).x_hat
            err = float(np.max(np.abs(x - ref))) / scale
            worst = max(worst, err if np.isfinite(err) else np.inf)
    return worst < 1e-6, f"{count} instances x 2 solvers, max relative error {worst:.1e}"


def hybrid_suite(count=20, seed=13):
    """Hybrid rules reduce to BP (trivial partitions) and to VMP (full factorization)."""
    rng = np.random.default_rng(seed)
    worst_bp = worst_vmp = 0.0
    for _ in range(count):
        g = random_graph(rng)
        rounds = 15
        _, hist, _ = engine.run_bp(g, max_rounds=rounds, tol=1e-300)
        res = engine.run(g, engine.Schedule(max_rounds=rounds, tol=1e-300))
        for a, b in zip(hist, res.history):
            for e, msg in a.items():
                worst_bp = max(worst_bp, float(np.max(np.abs(msg - b["m"][e]))))
        if len(hist) != len(res.history):
            worst_bp = np.inf
        gf = random_graph(rng, partitions="full")
        res = engine.run(gf, engine.Schedule(sequential=True, tol=1e-14, max_rounds=5000))
        worst_vmp = max(worst_vmp, bethe.vmp_residual(gf, res.beliefs))
    ok = worst_bp < 1e-12 and worst_vmp < 1e-9
    return ok, f"{count} graphs, BP trajectory gap {worst_bp:.1e}, VMP residual {worst_vmp:.1e}"


def denoiser_suite(count=200, seed=14):
    """Closed-form spike-and-slab denoiser against 2-D quadrature."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        rho, v0, mu, tau = random_denoiser_case(rng)
        mean, var, _ = denoise_bg(rho, v0, mu, tau)
        qm, qv = denoise_bg_quadrature(rho, v0, mu, tau)
        worst = max(worst, abs(complex(mean) - qm), abs(float(var) - qv))
    return worst < 1e-8, f"{count} cases, max absolute error {worst:.1e}"


def random_denoiser_case(rng):
    rho = float(rng.uniform(0.0, 1.0))
    v0 = float(10 ** rng.uniform(-1, 1))
    tau = float(10 ** rng.uniform(-2, 1))
    mu = complex(*rng.normal(0.0, 1.5, size=2))
    return rho, v0, mu, tau


SUITES = {
    "tree": tree_suite,
    "mmse": mmse_suite,
    "hybrid": hybrid_suite,
    "denoiser": denoiser_suite,
}


def run_suites(names=None):
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        try:
            ok, detail = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append(SuiteResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
