import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import bethemp.sbl.solvers as solvers_mod
from bethemp.bench.fixtures import random_gaussian_problem
from bethemp.bench.instances import InstanceSpec, generate_instance
from bethemp.exceptions import DegenerateCavityError
from bethemp.expfam import BernoulliGaussian, ZeroMeanGaussianVec
from bethemp.sbl import (
    AMPRegressor,
    EPRegressor,
    EPVariantRegressor,
    HierarchicalGamma,
    HybridSBLRegressor,
    SblProblem,
    SolverConfig,
    alpha_update,
    denoise_bg,
    exact_mmse_gaussian,
    genie_lmmse,
    joint_covariance_mmse,
    lambda_update,
    load_problem,
    nmse,
    nmse_db,
    save_problem,
    solve_amp,
    solve_ep,
    solve_ep_variant,
    solve_hybrid,
    support_size,
)
from bethemp.sbl.oracles import denoise_bg_quadrature

KNOWN = [solve_ep, solve_ep_variant, solve_amp]


def scalar_problem():
    return SblProblem([[1.0]], [2.0], lam=1.0, prior=ZeroMeanGaussianVec((1.0,)))


def cn(rng, shape, var=1.0):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ---- denoiser ----


def test_denoiser_pure_slab_is_conjugate():
    mean, var, second = denoise_bg(1.0, 1.0, 2.0, 1.0)
    assert mean == pytest.approx(1.0)
    assert var == pytest.approx(0.5)
    assert second == pytest.approx(1.5)


def test_denoiser_spike_only():
    mean, var, _ = denoise_bg(0.0, 1.0, 1.5 - 2j, 0.3)
    assert mean == 0 and var == 0


def test_denoiser_half_mixture_at_origin():
    mean, var, _ = denoise_bg(0.5, 1.0, 0.0, 1.0)
    assert abs(mean) == 0
    assert var == pytest.approx(1 / 6, rel=1e-12)
    qm, qv = denoise_bg_quadrature(0.5, 1.0, 0.0, 1.0)
    assert abs(qm) < 1e-12 and qv == pytest.approx(1 / 6, abs=1e-10)


def test_denoiser_rejects_nonpositive_variance():
    with pytest.raises(DegenerateCavityError):
        denoise_bg(0.5, 1.0, 0.0, 0.0)


def test_denoiser_broadcasts_and_stays_finite_far_out():
    mu = np.array([0.0, 1e3 + 1e3j, 1e-8])
    mean, var, second = denoise_bg(0.1, 1.0, mu, np.array([1e-6, 1e-6, 1e3]))
    assert np.all(np.isfinite(mean)) and np.all(var >= 0) and np.all(second >= 0)


# ---- oracles ----


def test_exact_mmse_scalar():
    mean, var = exact_mmse_gaussian([[1.0]], [2.0], 1.0, 1.0)
    assert mean[0] == pytest.approx(1.0)
    assert var[0] == pytest.approx(0.5)


def test_exact_mmse_noiseless_limit():
    y = np.array([1 + 1j, -2.0, 0.5j])
    mean, _ = exact_mmse_gaussian(np.eye(3), y, 1e12, 1.0)
    np.testing.assert_allclose(mean, y, atol=1e-10)


def test_two_mmse_forms_agree():
    rng = np.random.default_rng(0)
    A, y = cn(rng, (6, 4)), cn(rng, 6)
    alpha = rng.uniform(0.2, 3.0, 4)
    m1, v1 = exact_mmse_gaussian(A, y, 3.0, alpha)
    m2, v2 = joint_covariance_mmse(A, y, 3.0, alpha)
    np.testing.assert_allclose(m1, m2, atol=1e-10)
    np.testing.assert_allclose(v1, v2, atol=1e-10)


def test_genie_lmmse():
    rng = np.random.default_rng(1)
    A, y = cn(rng, (6, 4)), cn(rng, 6)
    full, _ = exact_mmse_gaussian(A, y, 2.0, 0.7)
    np.testing.assert_allclose(genie_lmmse(A, y, 2.0, np.ones(4, bool), 0.7), full, atol=1e-12)
    assert np.all(genie_lmmse(A, y, 2.0, [], 0.7) == 0)
    # two-column closed form: (lam B^H B + I/v0)^-1 lam B^H y
    B = A[:, [1, 3]]
    sol = np.linalg.solve(2.0 * B.conj().T @ B + np.eye(2) / 0.7, 2.0 * B.conj().T @ y)
    x = genie_lmmse(A, y, 2.0, [1, 3], 0.7)
    np.testing.assert_allclose(x[[1, 3]], sol, atol=1e-12)
    assert x[0] == 0 and x[2] == 0


def test_nmse_examples():
    x = np.array([1 + 1j, -2, 0.5j])
    assert nmse(x, x) == 0.0
    assert nmse_db([0.0]) == -120.0
    assert nmse(np.zeros(3), x) == pytest.approx(1.0)
    assert nmse(2 * x, x) == pytest.approx(1.0)
    assert nmse_db([0.1, 0.1]) == pytest.approx(-10.0)
    with pytest.raises(ValueError):
        nmse(x, np.zeros(3))


# ---- solvers: small exact cases ----


@pytest.mark.parametrize("solver", [solve_ep, solve_ep_variant])
def test_scalar_conjugate_case(solver):
    res = solver(scalar_problem(), SolverConfig(max_iter=2000, tol=1e-14))
    assert res.x_hat[0] == pytest.approx(1.0, abs=1e-10)
    assert res.var[0] == pytest.approx(0.5, abs=1e-10)


def test_amp_scalar_case_mean():
    # with N = 1 the large-system variance bookkeeping is off, but the mean is still exact
    res = solve_amp(scalar_problem(), SolverConfig(max_iter=2000, tol=1e-14))
    assert res.x_hat[0] == pytest.approx(1.0, abs=1e-10)


def test_ep_scalar_needs_one_update():
    res = solve_ep(scalar_problem(), SolverConfig(max_iter=50))
    assert res.trace == [] and res.iterations <= 2
    assert res.x_hat[0] == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("seed", range(15))
@pytest.mark.parametrize("solver", [solve_ep, solve_ep_variant])
def test_gaussian_prior_matches_exact_mmse(solver, seed):
    p = random_gaussian_problem(np.random.default_rng(seed))
    ref, _ = exact_mmse_gaussian(p.A, p.y, p.lam, p.prior.alpha)
    res = solver(p, SolverConfig(max_iter=5000, tol=1e-13))
    np.testing.assert_allclose(res.x_hat, ref, rtol=0, atol=1e-6 * np.max(np.abs(ref)))


def test_amp_large_system_close_to_exact():
    rng = np.random.default_rng(3)
    N, M = 200, 100
    A = cn(rng, (N, M), 1.0 / N)
    x = cn(rng, M)
    y = A @ x + cn(rng, N, 1e-2)
    p = SblProblem(A, y, lam=100.0, prior=ZeroMeanGaussianVec((1.0,) * M))
    ref, _ = exact_mmse_gaussian(A, y, 100.0, 1.0)
    res = solve_amp(p, SolverConfig(max_iter=500, tol=1e-12))
    assert res.converged
    assert np.linalg.norm(res.x_hat - ref) / np.linalg.norm(ref) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_variant_without_self_terms_is_amp(seed):
    spec = InstanceSpec(N=20, M=40, rho=0.2, seed=seed)
    problem, _ = generate_instance(spec)
    cfg = SolverConfig(max_iter=15, tol=1e-300, record_trace=True)
    a = solve_ep_variant(problem, cfg, self_terms=False).trace
    b = solve_amp(problem, cfg).trace
    assert len(a) == len(b) == 15
    for sa, sb in zip(a, b):
        for key in ("x", "var", "beta", "gamma", "mu_z", "tau0", "mu_x"):
            np.testing.assert_allclose(sa[key], sb[key], rtol=1e-12, atol=1e-12)


def test_self_terms_change_the_trajectory():
    problem, _ = generate_instance(InstanceSpec(N=20, M=40, rho=0.2, seed=0))
    cfg = SolverConfig(max_iter=3, tol=1e-300, record_trace=True)
    a = solve_ep_variant(problem, cfg).trace
    b = solve_amp(problem, cfg).trace
    assert np.max(np.abs(a[-1]["x"] - b[-1]["x"])) > 1e-6


def test_unit_damping_reproduces_undamped_ep():
    problem, _ = generate_instance(InstanceSpec(N=30, M=60, rho=0.3, seed=2))
    a = solve_ep(problem, SolverConfig(max_iter=20, tol=1e-300, record_trace=True))
    b = solve_ep(problem, SolverConfig(max_iter=20, tol=1e-300, damping=1.0, record_trace=True))
    for sa, sb in zip(a.trace, b.trace):
        assert np.array_equal(sa["x"], sb["x"])
        assert np.array_equal(sa["tau_t"], sb["tau_t"])


@pytest.mark.parametrize("seed", range(5))
def test_damped_ep_reaches_the_same_fixed_point(seed):
    p = random_gaussian_problem(np.random.default_rng(50 + seed))
    ref, _ = exact_mmse_gaussian(p.A, p.y, p.lam, p.prior.alpha)
    res = solve_ep(p, SolverConfig(max_iter=20000, tol=1e-13, damping=0.5))
    np.testing.assert_allclose(res.x_hat, ref, rtol=0, atol=1e-6 * np.max(np.abs(ref)))


@pytest.mark.parametrize("solver", KNOWN)
def test_scale_covariance(solver):
    rng = np.random.default_rng(8)
    A, y = cn(rng, (6, 5)), cn(rng, 6)
    alpha = rng.uniform(0.5, 2.0, 5)
    c = 10.0
    cfg = SolverConfig(max_iter=2000, tol=1e-14)
    base = solver(SblProblem(A, y, lam=4.0, prior=ZeroMeanGaussianVec(alpha)), cfg).x_hat
    # x and y scale by c, so prior variances scale by c^2 and the noise precision by 1/c^2
    scaled = solver(SblProblem(A, c * y, lam=4.0 / c**2, prior=ZeroMeanGaussianVec(c**2 * alpha)), cfg).x_hat
    np.testing.assert_allclose(scaled, c * base, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("solver", KNOWN)
def test_variances_nonnegative_on_sparse_instance(solver):
    problem, x = generate_instance(InstanceSpec(N=50, M=100, rho=0.2, seed=5))
    res = solver(problem)
    assert np.all(res.var >= 0)
    assert nmse(res.x_hat, x) >= 0


@pytest.mark.slow
def test_undamped_ep_diverges_where_variant_does_not():
    # a full-size instance on which plain EP fails to settle
    problem, x = generate_instance(InstanceSpec(rho=0.3, seed=0, trial=31))
    ep = solve_ep(problem)
    assert not ep.converged
    assert nmse(ep.x_hat, x) > 10 * nmse(solve_ep_variant(problem).x_hat, x)
    damped = solve_ep(problem, SolverConfig(damping=0.5))
    assert nmse(damped.x_hat, x) < 2 * nmse(solve_ep_variant(problem).x_hat, x)


def test_known_model_solvers_need_lambda_and_prior():
    with pytest.raises(ValueError):
        solve_ep(SblProblem([[1.0]], [1.0], prior=BernoulliGaussian(0.5)))
    with pytest.raises(ValueError):
        solve_amp(SblProblem([[1.0]], [1.0], lam=1.0))


def test_problem_validation():
    with pytest.raises(ValueError):
        SblProblem(np.ones((3, 2)), np.ones(2), lam=1.0)
    with pytest.raises(ValueError):
        SblProblem(np.ones((2, 2)), np.ones(2), lam=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)


# ---- hybrid ----


def test_alpha_update_closed_form():
    assert alpha_update(2.0, 1.0, 1.0) == pytest.approx(1.0)
    # eps < 2 branch against the textbook root
    eps, eta, s = 1.5, 1.0, 0.3
    root = (eps - 2 + np.sqrt((eps - 2) ** 2 + 4 * eta * s)) / (2 * eta)
    assert alpha_update(eps, eta, s) == pytest.approx(root, rel=1e-14)
    assert alpha_update(1.5, 1.0, 0.0) == 0.0


def test_lambda_update_closed_form():
    assert lambda_update(0.1, np.zeros(5), 3.0) == pytest.approx(10.0)
    gamma = np.array([0.5, 1.0])
    expected = 1 / (0.1 + np.mean(gamma / (1 + 2.0 * gamma)))
    assert lambda_update(0.1, gamma, 2.0) == pytest.approx(expected)


def test_support_size_is_relative():
    assert support_size(np.array([1.0, 1e-4, 0.5])) == 2
    assert support_size(1e6 * np.array([1.0, 1e-4, 0.5])) == 2
    assert support_size(np.zeros(3)) == 0


def test_hybrid_recovers_sparse_vector_and_learns_noise():
    problem, x = generate_instance(InstanceSpec(N=100, M=200, rho=0.1, seed=1))
    blind = SblProblem(problem.A, problem.y, prior=HierarchicalGamma())
    res = solve_hybrid(blind)
    assert nmse_db([nmse(res.x_hat, x)]) < -20
    assert res.lam_hat == pytest.approx(problem.lam, rel=0.5)
    assert len(res.residual_trace) == res.iterations
    eps = np.array(res.eps_trace)
    assert np.all(np.diff(eps) <= 0) and np.all(eps > 0) and eps[0] <= 1.5


def test_hybrid_rejects_constant_observations():
    with pytest.raises(DegenerateCavityError):
        solve_hybrid(SblProblem(np.ones((3, 2)), np.full(3, 2.0)))


# ---- problem files ----


def test_problem_file_round_trip(tmp_path):
    problem, x = generate_instance(InstanceSpec(N=5, M=7, rho=0.3, seed=3))
    path = tmp_path / "p.json"
    save_problem(problem, path)
    back = load_problem(path)
    assert np.array_equal(back.A, problem.A)
    assert np.array_equal(back.y, problem.y)
    assert np.array_equal(back.x_true, x)
    assert back.lam == problem.lam
    assert back.prior == problem.prior


def test_problem_file_rejects_other_formats(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_problem(path)


# ---- estimators ----


ESTIMATORS = [EPRegressor, EPVariantRegressor, AMPRegressor, HybridSBLRegressor]


def _fit_data():
    problem, x = generate_instance(InstanceSpec(N=60, M=120, rho=0.1, seed=4))
    return problem, x


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_estimator_params_and_clone(cls):
    est = cls(max_iter=30)
    params = est.get_params()
    assert params["max_iter"] == 30
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(tol=1e-6)
    assert est.tol == 1e-6


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_estimator_fit_predict(cls):
    problem, x = _fit_data()
    kwargs = {} if cls is HybridSBLRegressor else dict(rho=0.1, noise_precision=problem.lam)
    est = cls(**kwargs).fit(problem.A, problem.y)
    assert est.coef_.shape == (120,) and est.n_features_in_ == 120
    assert nmse(est.coef_, x) < 0.1
    np.testing.assert_allclose(est.predict(problem.A), problem.A @ est.coef_)
    assert est.score(problem.A, problem.y) <= 0


def test_estimator_matches_direct_solver():
    problem, _ = _fit_data()
    est = EPVariantRegressor(rho=0.1, noise_precision=problem.lam).fit(problem.A, problem.y)
    direct = solve_ep_variant(problem)
    assert np.array_equal(est.coef_, direct.x_hat)


def test_hybrid_estimator_exposes_learned_model():
    problem, _ = _fit_data()
    est = HybridSBLRegressor(max_iter=50).fit(problem.A, problem.y)
    assert est.noise_precision_ > 0 and est.alpha_.shape == (120,)


def test_estimator_input_validation():
    est = EPVariantRegressor()
    with pytest.raises(NotFittedError):
        est.predict(np.ones((2, 2)))
    with pytest.raises(ValueError):
        est.fit(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        est.fit(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        est.fit(np.array([[1.0, np.nan]]), np.ones(1))
    est.fit(np.ones((3, 2)), np.ones((3, 1)))
    with pytest.raises(ValueError):
        est.predict(np.ones((3, 5)))


def test_beta_hook_is_used_by_variant_and_amp(monkeypatch):
    problem, _ = generate_instance(InstanceSpec(N=20, M=40, rho=0.2, seed=0))
    cfg = SolverConfig(max_iter=5, tol=1e-300)
    before = solve_amp(problem, cfg).x_hat
    monkeypatch.setattr(solvers_mod, "_beta", lambda r, nv, g: -r / (nv + g))
    assert not np.allclose(solve_amp(problem, cfg).x_hat, before)
