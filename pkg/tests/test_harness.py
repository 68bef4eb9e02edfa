import json

import numpy as np
import pytest

from stratatrack.harness import (
    THREADS_ENV,
    ConfigError,
    ExperimentConfig,
    identification_batch,
    make_instance,
    read_averages_csv,
    recheck_sandwich,
    run_consistency_sweep,
    run_figure1,
    run_figure2,
    strata_order_consistent,
    worker_count,
)
from stratatrack.solvers import SAGA, SolverDiverged, SolverTrace, TracePoint, read_trace_csv
from stratatrack.stratification import StratumDescriptor

SMALL = dict(p=30, n=40, s=3, lam=0.1, target_upper=list(range(31)),
             solvers=[{"method": m, "batches": 30} for m in ("fb", "prox_sgd", "saga")])


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


# -- config -------------------------------------------------------------------------------

def test_defaults():
    l1 = ExperimentConfig.l1_default()
    assert (l1.p, l1.n, l1.s, l1.lam) == (100, 50, 10, 0.2)
    assert all(e["batches"] == 400 for e in l1.solvers)
    nuc = ExperimentConfig.nuclear_default()
    assert (tuple(nuc.shape), nuc.n, nuc.s, nuc.lam) == ((20, 20), 300, 4, 0.03)
    assert all(e["batches"] == 600 for e in nuc.solvers)
    assert nuc.target_upper == [4, 7] and l1.target_upper == [10, 20]


def test_config_json_round_trip(tmp_path):
    cfg = small(replications=3, base_seed=5)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert ExperimentConfig.load(path) == cfg


def test_config_partial_json_takes_defaults():
    cfg = ExperimentConfig.from_json({"regularizer": "nuclear", "replications": 2})
    assert cfg.shape == [20, 20] and cfg.p is None and cfg.replications == 2


@pytest.mark.parametrize("obj", [
    {"bogus": 1},
    {"s": 200},
    {"n": 0},
    {"regularizer": "tv"},
    {"lam": -1.0},
    {"replications": 0},
    {"n_grid": [100, 50]},
    {"solvers": [{"method": "adam", "batches": 3}]},
    {"certificate_covariance": "oracle"},
])
def test_invalid_configs(obj):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(obj)


def test_config_file_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_shipped_schema_lists_every_field():
    from importlib.resources import files
    schema = json.loads(files("stratatrack").joinpath("schema/config.schema.json").read_text())
    assert set(schema["properties"]) == set(ExperimentConfig().to_json())


def test_worker_count(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count(small(workers=1)) == 3
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count(small(workers=2)) == 2
    assert worker_count() >= 1
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        worker_count()


def test_lambda_schedule_in_config():
    cfg = small(lam=None, lam0=2.0)
    assert cfg.lambda_for(8) == pytest.approx(1.0)


# -- identification batch --------------------------------------------------------------------

def _trace(values):
    pts = [TracePoint(k=i + 1, batch=float(i + 1), stratum=StratumDescriptor.rank(v, 5), R0=v,
                      objective=0.0, dual_residual=0.0, v=None, step_ratio=0.0)
           for i, v in enumerate(values)]
    return SolverTrace("saga", pts)


@pytest.mark.parametrize("values,expected", [
    ([3, 2, 2, 2], 2.0), ([1, 1, 1], 1.0), ([1, 2, 1, 2], 4.0), ([], None),
])
def test_identification_batch(values, expected):
    assert identification_batch(_trace(values)) == expected


# -- figure 1 ---------------------------------------------------------------------------------

def test_figure1_outputs(tmp_path):
    report = run_figure1(small(), tmp_path)
    for m in ("fb", "prox_sgd", "saga"):
        rows = read_trace_csv(tmp_path / "traces" / f"{m}_0.csv")
        assert len(rows) == 30
    saved = json.loads((tmp_path / "report.json").read_text())
    row = saved["rows"][0]
    lo, hi = row["R0_bounds"]
    assert lo == 3 and hi >= lo and row["delta"] == hi - lo
    R = small().regularizer_obj()
    for m in row["solvers"]:
        assert recheck_sandwich(row, R, m) == row["solvers"][m]["sandwich_ok"]
    assert strata_order_consistent(row, R)
    plot = (tmp_path / "plot.gp").read_text()
    assert "traces/fb_0.csv" in plot and "dt 3" in plot and "dt 2" in plot
    assert "lc rgb 'blue'" in plot and "lc rgb 'red'" in plot and "lc rgb 'purple'" in plot
    assert report["rows"][0] == saved["rows"][0]


def test_figure1_sparse_defaults(tmp_path):
    report = run_figure1(ExperimentConfig.l1_default(), tmp_path)
    row = report["rows"][0]
    lo, hi = row["R0_bounds"]
    assert lo == 10 and hi >= 10
    for m in ("fb", "saga"):
        assert row["solvers"][m]["final_R0"] <= hi
    assert row["solvers"]["saga"]["final_R0"] == row["solvers"]["fb"]["final_R0"]


def test_figure1_easy_instance_is_tight(tmp_path):
    cfg = ExperimentConfig(p=10, n=40, s=1, lam=1e-6, noise_std=0.0, target_upper=[1],
                           solvers=[{"method": "fb", "batches": 400}, {"method": "saga", "batches": 100}])
    row = run_figure1(cfg, tmp_path)["rows"][0]
    assert row["R0_bounds"] == [1, 1]
    for m in ("fb", "saga"):
        assert row["solvers"][m]["sandwich_ok"] and row["solvers"][m]["final_R0"] == 1


def test_figure1_is_deterministic(tmp_path):
    run_figure1(small(), tmp_path / "a")
    run_figure1(small(), tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    for m in ("fb", "prox_sgd", "saga"):
        assert (tmp_path / "a" / "traces" / f"{m}_0.csv").read_bytes() == \
            (tmp_path / "b" / "traces" / f"{m}_0.csv").read_bytes()


def test_figure1_failure_keeps_partial_outputs(tmp_path):
    cfg = small(solvers=[{"method": "fb", "batches": 5},
                         {"method": "prox_sgd", "batches": 300, "gamma": {"kind": "constant", "gamma": 50.0}}])
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(SolverDiverged):
        run_figure1(cfg, tmp_path)
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["status"] == "failed" and "fb" in saved["rows"][0]["solvers"]
    assert (tmp_path / "traces" / "fb_0.csv").exists()
    assert (tmp_path / "traces" / "prox_sgd_0.csv").exists()


# -- figure 2 ---------------------------------------------------------------------------------

def test_figure2_single_replication(tmp_path):
    report = run_figure2(small(replications=1), tmp_path)
    assert len(report["rows"]) == 1 and report["status"] == "ok"


def test_figure2_empty(tmp_path):
    report = run_figure2(small(replications=2, target_upper=[999]), tmp_path)
    assert report["status"] == "empty" and report["retained"] == 0 and report["groups"] == {}
    assert json.loads((tmp_path / "report.json").read_text())["status"] == "empty"


def test_figure2_averages_match_trajectories(tmp_path):
    cfg = small(replications=4)
    report = run_figure2(cfg, tmp_path)
    averages = read_averages_csv(tmp_path / "averages.csv")
    for delta, (batches, mean) in averages.items():
        reps = [r["replication"] for r in report["rows"] if r["retained"] and r["delta"] == delta]
        curves = [[row["R0"] for row in read_trace_csv(tmp_path / "traces" / f"saga_{k}.csv")] for k in reps]
        np.testing.assert_allclose(mean, np.mean(curves, axis=0), atol=1e-12, rtol=0)
    R = cfg.regularizer_obj()
    for row in report["rows"]:
        if row["retained"]:
            assert recheck_sandwich(row, R, SAGA) == row["solvers"][SAGA]["sandwich_ok"]


def test_figure2_seeds_and_workers(tmp_path, monkeypatch):
    cfg = small(replications=3, base_seed=11)
    monkeypatch.setenv(THREADS_ENV, "1")
    a = run_figure2(cfg, tmp_path / "a")
    monkeypatch.setenv(THREADS_ENV, "2")
    run_figure2(cfg, tmp_path / "b")
    assert [r["seed"] for r in a["rows"]] == [11, 12, 13]
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


# -- consistency sweep ------------------------------------------------------------------------

def test_sweep_single_column():
    cfg = ExperimentConfig(p=10, n=50, s=2, lam=None, replications=3, certificate_covariance="identity")
    report = run_consistency_sweep(cfg, [60])
    assert len(report["columns"]) == 1 and len(report["cells"]) == 3


def test_sweep_near_interpolation():
    cfg = ExperimentConfig(p=10, n=50, s=2, lam=None, lam0=1e-6, noise_std=0.0, replications=5,
                           certificate_covariance="identity")
    report = run_consistency_sweep(cfg, [200, 400])
    assert all(c["median_w_error"] < 1e-3 for c in report["columns"])


def test_sweep_rejects_bad_grid():
    with pytest.raises(ConfigError):
        run_consistency_sweep(small(), [100, 50])


def test_instance_seeding():
    cfg = small()
    a, b = make_instance(cfg, 3), make_instance(cfg, 3)
    np.testing.assert_array_equal(a.w0, b.w0)
    np.testing.assert_array_equal(a.cert.eta, b.cert.eta)
    assert make_instance(cfg, 3, covariance="identity").upper == 3
