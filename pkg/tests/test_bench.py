import io
import json
from pathlib import Path

import numpy as np
import pytest

import bethemp.sbl.solvers as solvers_mod
from bethemp.bench import verify
from bethemp.bench.cli import main
from bethemp.bench.instances import InstanceSpec, generate_instance, rng_for
from bethemp.bench.sweep import (
    CSV_COLUMNS,
    SweepConfig,
    aggregate,
    data_rows,
    run_sweep,
    run_trials,
    solver_setup,
    thread_count,
)
from bethemp.sbl import solve_ep

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = InstanceSpec(N=20, M=40, seed=3)


def cli(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


# ---- instances ----


def test_instances_are_deterministic():
    a, xa = generate_instance(SMALL.with_(rho=0.2, trial=4))
    b, xb = generate_instance(SMALL.with_(rho=0.2, trial=4))
    assert np.array_equal(a.A, b.A) and np.array_equal(a.y, b.y) and np.array_equal(xa, xb)
    c, _ = generate_instance(SMALL.with_(rho=0.2, trial=5))
    assert not np.array_equal(a.A, c.A)


def test_substreams_differ_by_rho():
    assert rng_for(0, 0.1, 0).random() != rng_for(0, 0.2, 0).random()


def test_zero_sparsity_gives_zero_signal():
    problem, x = generate_instance(SMALL.with_(rho=0.0))
    assert np.all(x == 0)
    assert np.isinf(problem.lam) and np.all(problem.y == 0)


def test_measurement_power():
    # E|[Ax]_n|^2 = (M/N) rho v0 = 2 * 0.2 = 0.4; 40 trials give 10^4 rows
    rows = []
    for trial in range(40):
        problem, x = generate_instance(InstanceSpec(N=250, M=500, rho=0.2, seed=1, trial=trial))
        rows.append(np.abs(problem.A @ x) ** 2)
    power = float(np.mean(np.concatenate(rows)))
    assert power == pytest.approx(0.4, rel=0.05)


def test_noise_level_matches_snr():
    spec = InstanceSpec(N=4000, M=100, rho=0.5, snr_db=10.0, seed=2)
    problem, x = generate_instance(spec)
    w = problem.y - problem.A @ x
    assert float(np.mean(np.abs(w) ** 2)) == pytest.approx(spec.noise_var, rel=0.1)
    assert problem.lam == pytest.approx(1 / spec.noise_var)


def test_instance_spec_validation():
    with pytest.raises(ValueError):
        InstanceSpec(rho=1.5)
    with pytest.raises(ValueError):
        InstanceSpec(N=0)


# ---- sweeps ----


def test_sweep_rows_and_csv(tmp_path):
    out = tmp_path / "s.csv"
    cfg = SweepConfig(template=SMALL, grid=(0.1, 0.2), trials=3, solvers=("ep_variant", "amp"),
                      timing=False, out=str(out))
    records = run_sweep(cfg, threads=1)
    assert len(records) == 4
    text = out.read_text()
    assert text.splitlines()[8] == ",".join(CSV_COLUMNS)
    assert all(line.startswith("#") for line in text.splitlines()[:8])
    rows = data_rows(text)
    assert rows == [r.row() for r in records]
    assert all(r.endswith(",") for r in rows)  # empty ms column


def test_thread_count_does_not_change_results():
    cfg = SweepConfig(template=SMALL, grid=(0.3,), trials=6, solvers=("ep", "ep_variant"), timing=False)
    one = run_trials(cfg, 0.3, threads=1)
    four = run_trials(cfg, 0.3, threads=4)
    for name in cfg.solvers:
        assert aggregate(name, 0.3, one, False).row() == aggregate(name, 0.3, four, False).row()


def test_zero_signal_cell_reports_nan():
    cfg = SweepConfig(template=SMALL, grid=(0.0,), trials=2, solvers=("amp",), timing=False)
    (rec,) = run_sweep(cfg, threads=1)
    assert np.isnan(rec.nmse_db)


def test_damped_ep_entry_uses_half_damping():
    cfg = SweepConfig(solvers=("ep_damped", "ep"))
    fn, scfg = solver_setup("ep_damped", cfg)
    assert fn is solve_ep and scfg.damping == 0.5
    assert solver_setup("ep", cfg)[1].damping == 1.0
    assert solver_setup("ep_damped", SweepConfig(damping=0.3))[1].damping == 0.3


def test_bench_threads_env(monkeypatch):
    monkeypatch.setenv("BENCH_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("BENCH_THREADS", "0")
    with pytest.raises(ValueError):
        thread_count()


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(solvers=("nope",))
    with pytest.raises(ValueError):
        SweepConfig(grid=())


def test_sweep_refuses_unwritable_path(tmp_path):
    cfg = SweepConfig(template=SMALL, grid=(0.1,), trials=1, out=str(tmp_path / "missing" / "x.csv"))
    with pytest.raises(OSError):
        run_sweep(cfg)


def test_data_rows_can_drop_timing():
    text = "# h\nsolver,rho,trials,nmse_db,mean_iters,skip_rate,ms\namp,0.1,2,-30.0,10.0,0.0,12.5\n"
    assert data_rows(text, drop_timing=True) == ["amp,0.1,2,-30.0,10.0,0.0"]


# ---- verify ----


def test_verify_suites_pass():
    results = verify.run_suites(["tree", "denoiser"])
    assert [r.name for r in results] == ["tree", "denoiser"]
    assert all(r.passed for r in results)
    assert "PASS" in results[0].line()


def test_verify_rejects_unknown_suite():
    with pytest.raises(ValueError):
        verify.run_suites(["bogus"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_verify_catches_a_sign_error(monkeypatch):
    # flipping the residual sign inside the shared update must trip the MMSE oracle
    monkeypatch.setattr(solvers_mod, "_beta", lambda r, nv, g: -r / (nv + g))
    (result,) = verify.run_suites(["mmse"])
    assert not result.passed


def test_crashing_suite_counts_as_failure(monkeypatch):
    def boom():
        raise RuntimeError("broken")

    monkeypatch.setitem(verify.SUITES, "tree", boom)
    (result,) = verify.run_suites(["tree"])
    assert not result.passed and "RuntimeError" in result.detail


# ---- command line ----


def test_cli_solve_and_problem_round_trip(tmp_path):
    prob, est = tmp_path / "p.json", tmp_path / "x.json"
    code, text = cli("solve", "--n", "20", "--m", "40", "--rho", "0.1", "--save-problem", str(prob),
                     "--out", str(est))
    assert code == 0 and "nmse" in text and "iterations" in text
    first = json.loads(est.read_text())["x_hat"]
    code, text2 = cli("solve", "--problem", str(prob), "--out", str(est))
    assert code == 0
    assert json.loads(est.read_text())["x_hat"] == first


def test_cli_solve_hybrid_prints_noise_estimate():
    code, text = cli("solve", "--n", "30", "--m", "60", "--solver", "hybrid", "--max-iter", "40")
    assert code == 0 and "lambda_hat" in text


def test_cli_sweep(tmp_path):
    out = tmp_path / "s.csv"
    code, text = cli("sweep", "--n", "20", "--m", "40", "--rho", "0.1", "--trials", "2",
                     "--solver", "ep_variant,ep_damped", "--out", str(out))
    assert code == 0
    rows = data_rows(out.read_text())
    assert [r.split(",")[0] for r in rows] == ["ep_variant", "ep_damped"]
    assert all(r.split(",")[-1] for r in rows)  # timing on by default


def test_cli_verify_filter():
    code, text = cli("verify", "--suite", "denoiser")
    assert code == 0 and text.startswith("denoiser") and "all suites passed" in text


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_verify_reports_failure(monkeypatch):
    monkeypatch.setattr(solvers_mod, "_beta", lambda r, nv, g: -r / (nv + g))
    code, text = cli("verify", "--suite", "mmse")
    assert code == 1 and "FAILED: mmse" in text


def test_cli_graph_demo_on_chain():
    code, text = cli("graph-demo", str(FIXTURES / "chain.graph"))
    assert code == 0
    assert "x2: 0.580000 0.420000" in text
    assert "F_B = 0.0000000000" in text


def test_cli_graph_demo_trace_and_sequential():
    code, text = cli("graph-demo", str(FIXTURES / "cycle.graph"), "--sequential", "--damping", "0.5",
                     "--max-rounds", "3", "--trace")
    assert code == 0
    assert text.splitlines()[0].startswith("1,")


def test_cli_errors_exit_with_two(tmp_path):
    code, _ = cli("graph-demo", str(tmp_path / "missing.graph"))
    assert code == 2
    code, _ = cli("solve", "--solver", "ep,amp", "--n", "5", "--m", "10")
    assert code == 2
    code, _ = cli("sweep", "--n", "5", "--m", "10", "--solver", "nope", "--out", str(tmp_path / "a.csv"))
    assert code == 2
