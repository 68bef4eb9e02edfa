"""Experiment orchestration: instances, certificates, solver runs, reports.

Three experiments are provided:

* :func:`run_figure1` runs FB, Prox-SGD and SAGA on one instance and writes
  their complexity traces together with a gnuplot script;
* :func:`run_figure2` draws many instances, keeps those whose certificate
  upper bound lies in a target set, and runs SAGA on them;
* :func:`run_consistency_sweep` solves the ERM problem to tolerance along a
  grid of sample sizes with a decaying ``lambda_n``.

Replication ``r`` uses seed ``base_seed + r`` for everything it draws.
Replications may be spread over worker processes; results are always
reduced in replication order so reports do not depend on the worker count.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .certificates import (
    empirical_certificate,
    irrepresentable_check,
    solve_population_certificate,
)
from .problem import (
    PopulationModel,
    empirical,
    generate_ground_truth,
    lambda_schedule,
    sample_dataset,
)
from .regularizers import make_regularizer
from .solvers import (
    FB,
    METHODS,
    PROX_SGD,
    SAGA,
    SolverDiverged,
    SolverSpec,
    fb_spec,
    prox_sgd_spec,
    run,
    saga_spec,
    schedule_from_json,
    solve_fb,
)
from .stratification import StratumDescriptor, leq, mirror_map_inverse, sandwich_check

log = logging.getLogger(__name__)

THREADS_ENV = "STRATATRACK_THREADS"
IDENTITY = "identity"
EMPIRICAL_COV = "empirical"

#: gnuplot colours per solver, as in the usual FB / Prox-SGD / SAGA figure.
PLOT_COLORS = {FB: "blue", PROX_SGD: "purple", SAGA: "red"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; round-trips through JSON.

    ``solvers`` entries are ``{"method": ..., "batches": ...}`` with optional
    ``"gamma"`` (a schedule object) and ``"alpha"``; without ``"gamma"`` the
    default step of the method is used (``1.8/L_n``, ``1/(3 L'_n)``,
    ``10/(k + 3e4)``). ``lam`` fixes lambda; when it is ``None`` the schedule
    ``lam0 * n**(-lam_exponent)`` is used. ``certificate_covariance`` selects
    the matrix ``C`` of the certificate problem: the empirical covariance of
    the drawn sample or the population identity of the Gaussian design.
    """

    regularizer: str = "l1"
    p: Optional[int] = 100
    shape: Optional[list] = None
    n: int = 50
    s: int = 10
    lam: Optional[float] = 0.2
    lam0: float = 1.0
    lam_exponent: float = 1.0 / 3.0
    noise_std: float = 1e-2
    solvers: list = field(default_factory=lambda: [
        {"method": FB, "batches": 400}, {"method": PROX_SGD, "batches": 400},
        {"method": SAGA, "batches": 400}])
    replications: int = 1
    base_seed: int = 0
    out_dir: Optional[str] = None
    certificate_covariance: str = EMPIRICAL_COV
    target_upper: list = field(default_factory=lambda: [10, 20])
    n_grid: list = field(default_factory=lambda: [50, 100, 200, 400, 800])
    fb_tol: float = 1e-10
    workers: Optional[int] = None

    def __post_init__(self):
        self.validate()

    # -- construction ---------------------------------------------------------

    @classmethod
    def l1_default(cls, **kw) -> "ExperimentConfig":
        """The sparse setup: ``(p, n, s, lam) = (100, 50, 10, 0.2)``, 400 batches."""
        return cls(**kw)

    @classmethod
    def nuclear_default(cls, **kw) -> "ExperimentConfig":
        """The low-rank setup: ``(20x20, 300, 4, 0.03)``, 600 batches."""
        base = dict(regularizer="nuclear", p=None, shape=[20, 20], n=300, s=4, lam=0.03,
                    solvers=[{"method": m, "batches": 600} for m in (FB, PROX_SGD, SAGA)],
                    target_upper=[4, 7])
        base.update(kw)
        return cls(**base)

    @classmethod
    def default_for(cls, reg: str, **kw) -> "ExperimentConfig":
        if reg == "l1":
            return cls.l1_default(**kw)
        if reg == "nuclear":
            return cls.nuclear_default(**kw)
        raise ConfigError(f"unknown regularizer {reg!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls.default_for(obj.get("regularizer", "l1"))
        merged = {**asdict(base), **obj}
        if merged["regularizer"] == "nuclear" and "p" not in obj:
            merged["p"] = None
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_json(obj)

    def to_json(self) -> dict:
        return asdict(self)

    def report_json(self) -> dict:
        """Config as recorded in reports: without the output location and worker count,
        which do not affect results."""
        obj = self.to_json()
        obj.pop("out_dir")
        obj.pop("workers")
        return obj

    # -- checks -----------------------------------------------------------------

    def validate(self) -> None:
        if self.regularizer not in ("l1", "nuclear"):
            raise ConfigError(f"unknown regularizer {self.regularizer!r}")
        if self.regularizer == "l1":
            if self.p is None or int(self.p) < 1:
                raise ConfigError("l1 needs a positive p")
        else:
            if self.shape is None or len(self.shape) != 2 or min(self.shape) < 1:
                raise ConfigError("nuclear needs shape [p1, p2] with positive entries")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not 0 <= self.s <= self.regularizer_obj().complexity_bound:
            raise ConfigError(f"s={self.s} outside [0, {self.regularizer_obj().complexity_bound}]")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lam must be positive")
        if not self.lam0 > 0:
            raise ConfigError("lam0 must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be nonnegative")
        if self.certificate_covariance not in (IDENTITY, EMPIRICAL_COV):
            raise ConfigError(f"certificate_covariance must be {IDENTITY!r} or {EMPIRICAL_COV!r}")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])) \
                or min(self.n_grid) < 1:
            raise ConfigError("n_grid must be a nonempty increasing list of positive sizes")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for entry in self.solvers:
            if entry.get("method") not in METHODS:
                raise ConfigError(f"unknown solver method {entry.get('method')!r}")
            if int(entry.get("batches", 0)) < 1:
                raise ConfigError("solver batches must be >= 1")

    def regularizer_obj(self):
        return make_regularizer(self.regularizer, p=self.p, shape=self.shape)

    def lambda_for(self, n: int) -> float:
        return self.lam if self.lam is not None else lambda_schedule(n, self.lam0, self.lam_exponent)

    def solver_entry(self, method: str) -> dict:
        for entry in self.solvers:
            if entry["method"] == method:
                return entry
        raise ConfigError(f"no {method!r} solver configured")


def make_spec(entry: dict, E, rng_seed: int) -> SolverSpec:
    """Solver spec from a config entry, filling in the default step of the method."""
    method, batches = entry["method"], int(entry["batches"])
    alpha = float(entry.get("alpha", 1.0))
    if "gamma" in entry:
        iters = batches if method == FB else batches * E.n
        return SolverSpec(method, schedule_from_json(entry["gamma"]), iters, alpha, rng_seed)
    if method == FB:
        return fb_spec(E, batches, alpha=alpha, rng_seed=rng_seed)
    if method == SAGA:
        return saga_spec(E, batches, alpha=alpha, rng_seed=rng_seed)
    return prox_sgd_spec(E, batches, alpha=alpha, rng_seed=rng_seed)


# -- instances --------------------------------------------------------------------

@dataclass
class Instance:
    seed: int
    R: object
    w0: np.ndarray
    D: object
    E: object
    lam: float
    cert: object
    M_w0: StratumDescriptor

    @property
    def lower(self) -> int:
        return self.M_w0.size

    @property
    def upper(self) -> int:
        return mirror_map_inverse(self.cert.dual_stratum).size


def make_instance(cfg: ExperimentConfig, seed: int, n: Optional[int] = None,
                  covariance: Optional[str] = None) -> Instance:
    """Ground truth, sample and population certificate for one replication."""
    R = cfg.regularizer_obj()
    n = n or cfg.n
    w0 = generate_ground_truth(R, cfg.s, seed)
    model = PopulationModel.gaussian(w0, cfg.noise_std)
    D = sample_dataset(model, n, seed)
    E = empirical(D)
    C = E.Cn if (covariance or cfg.certificate_covariance) == EMPIRICAL_COV else model.C
    cert = solve_population_certificate(R, w0, C)
    return Instance(seed, R, w0, D, E, cfg.lambda_for(n), cert, R.stratum_of(w0))


def identification_batch(trace) -> Optional[float]:
    """First recorded batch after which the stratum never changes; ``None`` for an empty trace."""
    strata = trace.strata
    if not strata:
        return None
    j = len(strata) - 1
    while j > 0 and strata[j - 1] == strata[-1]:
        j -= 1
    return float(trace.points[j].batch)


def _solver_summary(inst: Instance, trace) -> dict:
    final = trace.strata[-1]
    return {
        "final_stratum": final.to_json(),
        "final_R0": final.size,
        "sandwich_ok": sandwich_check(inst.M_w0, final, inst.cert.dual_stratum),
        "identification_batch": identification_batch(trace),
        "final_objective": float(trace.points[-1].objective),
        "max_dual_residual": float(max(pt.dual_residual for pt in trace.points)),
    }


def _instance_row(inst: Instance, rep: int) -> dict:
    return {
        "replication": rep,
        "seed": inst.seed,
        "w0_stratum": inst.M_w0.to_json(),
        "eta0_dual_stratum": inst.cert.dual_stratum.to_json(),
        "R0_bounds": [inst.lower, inst.upper],
        "delta": inst.upper - inst.lower,
    }


def recheck_sandwich(row: dict, R, solver: str) -> bool:
    """Recompute a stored ``sandwich_ok`` flag from the strata saved in a report row."""
    b = R.complexity_bound
    return sandwich_check(StratumDescriptor.from_json(row["w0_stratum"], b),
                          StratumDescriptor.from_json(row["solvers"][solver]["final_stratum"], b),
                          StratumDescriptor.from_json(row["eta0_dual_stratum"], b))


# -- parallel map ----------------------------------------------------------------

def worker_count(cfg: Optional[ExperimentConfig] = None) -> int:
    """``STRATATRACK_THREADS`` if set, else ``cfg.workers``, else the number of cores."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from exc
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    if cfg is not None and cfg.workers:
        return cfg.workers
    return os.cpu_count() or 1


def _map(fn, args: list, workers: int) -> list:
    """``[fn(*a) for a in args]``, possibly across processes; order is preserved."""
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        return list(pool.map(fn, *zip(*args)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out(cfg: ExperimentConfig, out_dir) -> Optional[Path]:
    d = out_dir if out_dir is not None else cfg.out_dir
    if d is None:
        return None
    d = Path(d)
    (d / "traces").mkdir(parents=True, exist_ok=True)
    return d


# -- figure 1 ----------------------------------------------------------------------

def write_plot_script(path: Path, trace_files: dict, lower: int, upper: int, title: str) -> None:
    """gnuplot script drawing R0 along batches with the two bounds as horizontal lines."""
    lines = [
        "# R0 of the iterates along batches; dotted: R0 of the truth, dashed: certificate bound",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set xlabel 'batch'",
        "set ylabel 'R0'",
        f"lower = {lower}",
        f"upper = {upper}",
    ]
    plots = [f"'{f}' using 1:3 with lines lc rgb '{PLOT_COLORS.get(m, 'black')}' title '{m}'"
             for m, f in trace_files.items()]
    plots.append("lower with lines dt 3 lc rgb 'black' title 'R0(w0)'")
    plots.append("upper with lines dt 2 lc rgb 'black' title 'certificate bound'")
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n")


def run_figure1(cfg: ExperimentConfig, out_dir=None, rep: int = 0) -> dict:
    """One instance, every configured solver, traces + report + plot script.

    If a solver diverges, its partial trace and a report marked ``"failed"``
    are written before the error propagates.
    """
    out = _out(cfg, out_dir)
    inst = make_instance(cfg, cfg.base_seed + rep)
    row = _instance_row(inst, rep)
    row["solvers"] = {}
    report = {"experiment": "figure1", "config": cfg.report_json(), "status": "ok", "rows": [row]}
    traces, files = {}, {}
    for entry in cfg.solvers:
        spec = make_spec(entry, inst.E, inst.seed)
        try:
            trace, _ = run(inst.R, inst.lam, inst.D, spec, inst.E, record_v=False)
        except SolverDiverged as exc:
            if out is not None:
                if exc.trace is not None:
                    exc.trace.to_csv(out / "traces" / f"{spec.method}_{rep}.csv")
                report["status"] = "failed"
                report["error"] = str(exc)
                _write_json(out / "report.json", report)
            raise
        traces[spec.method] = trace
        row["solvers"][spec.method] = _solver_summary(inst, trace)
        if out is not None:
            name = f"{spec.method}_{rep}.csv"
            trace.to_csv(out / "traces" / name)
            files[spec.method] = f"traces/{name}"
    if out is not None:
        _write_json(out / "report.json", report)
        write_plot_script(out / "plot.gp", files, inst.lower, inst.upper,
                          f"{cfg.regularizer}: R0 along batches")
    report["traces"] = traces
    report["instance"] = inst
    return report


# -- figure 2 ----------------------------------------------------------------------

def _figure2_rep(cfg: ExperimentConfig, rep: int):
    inst = make_instance(cfg, cfg.base_seed + rep)
    row = _instance_row(inst, rep)
    row["retained"] = inst.upper in cfg.target_upper
    row["solvers"] = {}
    curve = None
    if row["retained"]:
        spec = make_spec(cfg.solver_entry(SAGA), inst.E, inst.seed)
        trace, _ = run(inst.R, inst.lam, inst.D, spec, inst.E, record_v=False)
        summary = _solver_summary(inst, trace)
        final = trace.strata[-1]
        summary["exact"] = final == inst.M_w0
        summary["within_R0_bounds"] = inst.lower <= final.size <= inst.upper
        row["solvers"][SAGA] = summary
        curve = (trace.to_csv(), trace.batches, trace.R0)
    return row, curve


def run_figure2(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Replicated instances filtered by certificate bound, SAGA on the retained ones.

    Writes ``traces/saga_<rep>.csv`` per retained run, ``averages.csv`` with the
    batch-wise mean R0 of each ``delta`` group, and ``report.json``. With no
    retained run the report status is ``"empty"``.
    """
    out = _out(cfg, out_dir)
    args = [(cfg, rep) for rep in range(cfg.replications)]
    results = _map(_figure2_rep, args, worker_count(cfg))
    rows = [r for r, _ in results]
    groups: dict = {}
    for (row, curve) in results:
        if curve is None:
            continue
        text, batches, r0 = curve
        if out is not None:
            (out / "traces" / f"saga_{row['replication']}.csv").write_text(text)
        groups.setdefault(row["delta"], []).append((batches, r0))

    aggregates = {}
    average_rows = []
    for delta in sorted(groups):
        members = [r for r in rows if r["retained"] and r["delta"] == delta]
        finals = [r["solvers"][SAGA] for r in members]
        batches = groups[delta][0][0]
        mean_r0 = np.mean(np.vstack([c for _, c in groups[delta]]).astype(float), axis=0)
        average_rows.extend((delta, b, m, len(members)) for b, m in zip(batches, mean_r0))
        aggregates[str(delta)] = {
            "count": len(members),
            "exact_rate": float(np.mean([f["exact"] for f in finals])),
            "sandwich_rate": float(np.mean([f["sandwich_ok"] for f in finals])),
            "within_R0_bounds_rate": float(np.mean([f["within_R0_bounds"] for f in finals])),
            "median_final_R0": float(np.median([f["final_R0"] for f in finals])),
        }
    retained = [r for r in rows if r["retained"]]
    report = {
        "experiment": "figure2",
        "config": cfg.report_json(),
        "status": "ok" if retained else "empty",
        "retained": len(retained),
        "rows": rows,
        "groups": aggregates,
        "sandwich_rate": (float(np.mean([r["solvers"][SAGA]["sandwich_ok"] for r in retained]))
                          if retained else None),
    }
    if not retained:
        log.warning("figure2: no replication has a certificate bound in %s", cfg.target_upper)
    if out is not None:
        with open(out / "averages.csv", "w") as fh:
            fh.write("delta,batch,mean_R0,count\n")
            for delta, b, m, c in average_rows:
                fh.write(f"{delta},{b:g},{float(m)!r},{c}\n")
        _write_json(out / "report.json", report)
    return report


def read_averages_csv(path) -> dict:
    """``{delta: (batches, mean_R0)}`` from ``averages.csv``."""
    data: dict = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            d, b, m, _ = line.strip().split(",")
            data.setdefault(int(d), ([], []))
            data[int(d)][0].append(float(b))
            data[int(d)][1].append(float(m))
    return {d: (np.array(b), np.array(m)) for d, (b, m) in data.items()}


# -- consistency sweep -----------------------------------------------------------

def _sweep_cell(cfg: ExperimentConfig, n: int, rep: int) -> dict:
    inst = make_instance(cfg, cfg.base_seed + rep, n=n)
    w_hat, iters = solve_fb(inst.R, inst.lam, inst.E, tol=cfg.fb_tol)
    emp = empirical_certificate(inst.R, inst.lam, inst.E, w_hat)
    M_hat = inst.R.stratum_of(w_hat)
    ic_holds, ic = irrepresentable_check(inst.R, inst.w0, inst.cert)
    return {
        "n": n,
        "replication": rep,
        "lambda": inst.lam,
        "w_error": float(np.linalg.norm(w_hat - inst.w0)),
        "eta_error": float(np.linalg.norm(emp.eta - inst.cert.eta)),
        "kkt_residual": emp.kkt_residual,
        "fb_iterations": iters,
        "w0_stratum": inst.M_w0.to_json(),
        "eta0_dual_stratum": inst.cert.dual_stratum.to_json(),
        "solution_stratum": M_hat.to_json(),
        "exact": M_hat == inst.M_w0,
        "sandwich_ok": sandwich_check(inst.M_w0, M_hat, inst.cert.dual_stratum),
        "ic": ic,
    }


def run_consistency_sweep(cfg: ExperimentConfig, n_grid=None, out_dir=None) -> dict:
    """FB solutions along ``n_grid`` with ``lambda_n``; medians of the errors per ``n``."""
    n_grid = list(n_grid if n_grid is not None else cfg.n_grid)
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n_grid must be nonempty and increasing")
    out = _out(cfg, out_dir)
    args = [(cfg, n, rep) for n in n_grid for rep in range(cfg.replications)]
    cells = _map(_sweep_cell, args, worker_count(cfg))
    columns = []
    for n in n_grid:
        mine = [c for c in cells if c["n"] == n]
        columns.append({
            "n": n,
            "lambda": mine[0]["lambda"],
            "median_w_error": float(np.median([c["w_error"] for c in mine])),
            "median_eta_error": float(np.median([c["eta_error"] for c in mine])),
            "sandwich_rate": float(np.mean([c["sandwich_ok"] for c in mine])),
            "exact_rate": float(np.mean([c["exact"] for c in mine])),
        })
    report = {"experiment": "consistency", "config": cfg.report_json(), "status": "ok",
              "columns": columns, "cells": cells}
    if out is not None:
        _write_json(out / "report.json", report)
    return report


def strata_order_consistent(row: dict, R) -> bool:
    """``w0`` stratum below the certificate's primal stratum, as the sandwich requires."""
    b = R.complexity_bound
    low = StratumDescriptor.from_json(row["w0_stratum"], b)
    high = mirror_map_inverse(StratumDescriptor.from_json(row["eta0_dual_stratum"], b))
    return leq(low, high)
