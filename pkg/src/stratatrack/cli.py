"""Command-line interface: ``stratatrack {generate,solve,certificate,check,reproduce}``.

Exit codes: 0 success, 1 numerical failure (divergence, infeasible
certificate, sandwich violated), 2 usage error (bad flags or inputs).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import (
    Certificate,
    CertificateError,
    empirical_certificate,
    irrepresentable_check,
    solve_population_certificate,
)
from .harness import ConfigError, ExperimentConfig, run_figure1, run_figure2
from .problem import (
    PopulationModel,
    empirical,
    generate_ground_truth,
    load_dataset,
    sample_dataset,
    save_dataset,
)
from .regularizers import L1, Nuclear, regularizer_from_json
from .solvers import (
    FB,
    METHODS,
    ConstantStep,
    DecayingStep,
    SolverConfigError,
    SolverDiverged,
    SolverSpec,
    final_state_json,
    fb_spec,
    prox_sgd_spec,
    run,
    saga_spec,
)
from .stratification import mirror_map_inverse, sandwich_check

log = logging.getLogger("stratatrack")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _shape(text: str):
    try:
        p1, p2 = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"shape must look like 20x20, got {text!r}") from exc
    if p1 < 1 or p2 < 1:
        raise argparse.ArgumentTypeError("shape entries must be positive")
    return p1, p2


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _regularizer(reg: str, dim: int, shape=None, stored=None):
    """Regularizer of kind ``reg`` acting on vectors of length ``dim``."""
    if shape is None and stored is not None and stored.get("kind") == reg:
        R = regularizer_from_json(stored)
    elif reg == "l1":
        R = L1(dim)
    elif shape is not None:
        R = Nuclear(*shape)
    else:
        side = int(round(np.sqrt(dim)))
        if side * side != dim:
            raise UsageError(f"cannot infer a matrix shape for {dim} entries; pass --shape")
        R = Nuclear(side, side)
    if R.dim != dim:
        raise UsageError(f"{R!r} acts on {R.dim} entries but the input has {dim}")
    return R


def _vector(obj: dict, keys, what: str) -> np.ndarray:
    for key in keys:
        if key in obj:
            return np.asarray(obj[key], dtype=float)
    raise UsageError(f"{what}: expected one of the keys {list(keys)}")


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.reg == "l1":
        if args.p is None:
            raise UsageError("--reg l1 needs --p")
        R = L1(args.p)
    else:
        if args.shape is None:
            raise UsageError("--reg nuclear needs --shape P1xP2")
        R = Nuclear(*args.shape)
    if args.s > R.complexity_bound:
        raise UsageError(f"--s {args.s} exceeds the complexity bound {R.complexity_bound} of {R!r}")
    w0 = generate_ground_truth(R, args.s, args.seed)
    D = sample_dataset(PopulationModel.gaussian(w0, args.noise), args.n, args.seed)
    out = Path(args.out)
    written = save_dataset(D, out / "dataset", fmt=args.format)
    _write_json(out / "w0.json", {"regularizer": R.to_json(), "seed": args.seed, "s": args.s,
                                  "w0": [float(v) for v in w0], "stratum": R.stratum_of(w0).to_json()})
    for path in written + [out / "w0.json"]:
        print(path)
    return EXIT_OK


def _solver_spec(args, E) -> SolverSpec:
    if args.iters is not None:
        steps = args.iters
    else:
        steps = args.batches if args.method == FB else args.batches * E.n
    if args.gamma is not None:
        sched = ConstantStep(args.gamma)
    elif args.gamma_a is not None or args.gamma_b is not None:
        if args.gamma_a is None or args.gamma_b is None:
            raise UsageError("--gamma-a and --gamma-b go together")
        sched = DecayingStep(args.gamma_a, args.gamma_b)
    else:
        default = {"fb": fb_spec, "saga": saga_spec, "prox_sgd": prox_sgd_spec}[args.method](E, 1)
        sched = default.gamma
    return SolverSpec(args.method, sched, steps, args.alpha, args.seed, args.record_every)


def cmd_solve(args) -> int:
    try:
        D = load_dataset(args.input)
    except FileNotFoundError as exc:
        raise UsageError(f"{args.input}: no such file") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.input}: unreadable dataset ({exc})") from exc
    R = _regularizer(args.reg, D.p, args.shape)
    E = empirical(D)
    try:
        spec = _solver_spec(args, E)
    except SolverConfigError as exc:
        raise UsageError(str(exc)) from exc
    trace_out = Path(args.trace_out)
    trace_out.parent.mkdir(parents=True, exist_ok=True)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            trace, state = run(R, args.lam, D, spec, E, record_v=False)
    except SolverDiverged as exc:
        if exc.trace is not None:
            exc.trace.to_csv(trace_out)
        print(f"error: {exc} (partial trace in {trace_out})", file=sys.stderr)
        return EXIT_FAILURE
    except SolverConfigError as exc:
        raise UsageError(str(exc)) from exc
    trace.to_csv(trace_out)
    state_out = Path(args.state_out) if args.state_out else trace_out.with_suffix(".state.json")
    final = final_state_json(state, R, args.lam, E, spec)
    kkt = empirical_certificate(R, args.lam, E, state.z).kkt_residual
    final["kkt_residual"] = kkt
    final["dual_residual"] = trace.points[-1].dual_residual if trace.points else None
    _write_json(state_out, final)
    residual = final["dual_residual"]
    print(f"final R0 {final['R0']}")
    print(f"dual residual {residual:.3e}" if residual is not None else "dual residual n/a")
    print(f"kkt residual {kkt:.3e}")
    return EXIT_OK


def _covariance(args, p: int) -> np.ndarray:
    if args.cov == "identity":
        return np.eye(p)
    if args.cov == "empirical":
        if not args.input:
            raise UsageError("--cov empirical needs --in DATASET")
        return empirical(load_dataset(args.input)).Cn
    path = Path(args.cov)
    if not path.exists():
        raise UsageError(f"--cov: {path} is neither 'identity', 'empirical' nor a file")
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        C = np.asarray(obj["C"] if isinstance(obj, dict) else obj, dtype=float)
    else:
        C = np.loadtxt(path, delimiter=",", ndmin=2)
    if C.shape != (p, p):
        raise UsageError(f"covariance has shape {C.shape}, expected ({p}, {p})")
    if not np.allclose(C, C.T, atol=1e-10):
        raise UsageError("covariance must be symmetric")
    return C


def cmd_certificate(args) -> int:
    obj = _read_json(args.w0)
    w0 = _vector(obj, ("w0", "w", "z"), str(args.w0))
    R = _regularizer(args.reg, w0.size, args.shape, obj.get("regularizer"))
    C = _covariance(args, w0.size)
    try:
        cert = solve_population_certificate(R, w0, C)
    except CertificateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _, ic = irrepresentable_check(R, w0, cert, margin=args.margin)
    cert.ic = {"holds": ic["holds"], "margin": ic["margin"]}
    out = cert.to_json()
    out["regularizer"] = R.to_json()
    _write_json(args.out, out)
    upper = mirror_map_inverse(cert.dual_stratum).size
    print(f"dual stratum {cert.dual_stratum}")
    print(f"R0 bounds [{R.stratum_of(w0).size}, {upper}]")
    print(f"IC {'holds' if ic['holds'] else 'fails'} (margin {ic['margin']:.6g})")
    return EXIT_OK


def cmd_check(args) -> int:
    w0_obj = _read_json(args.w0)
    w0 = _vector(w0_obj, ("w0", "w", "z"), str(args.w0))
    R = _regularizer(args.reg, w0.size, args.shape, w0_obj.get("regularizer"))
    cert_obj = _read_json(args.eta0)
    try:
        cert = Certificate.from_json(cert_obj, R)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.eta0}: not a certificate ({exc})") from exc
    if cert.eta.size != R.dim:
        raise UsageError(f"certificate has {cert.eta.size} entries, expected {R.dim}")
    sol = _vector(_read_json(args.solution), ("z", "w", "w0"), str(args.solution))
    if sol.size != R.dim:
        raise UsageError(f"solution has {sol.size} entries, expected {R.dim}")
    low, mid, high = R.stratum_of(w0), R.stratum_of(sol), cert.dual_stratum
    ok = sandwich_check(low, mid, high, R)
    print(f"w0 stratum       {low} (R0 {low.size})")
    print(f"solution stratum {mid} (R0 {mid.size})")
    print(f"eta0 stratum     {high} (bound R0 {mirror_map_inverse(high).size})")
    print(f"sandwich {'holds' if ok else 'violated'}")
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_reproduce(args) -> int:
    try:
        if args.config:
            cfg = ExperimentConfig.load(args.config)
            if cfg.regularizer != args.reg:
                raise UsageError(f"config regularizer {cfg.regularizer!r} differs from --reg {args.reg}")
        else:
            cfg = ExperimentConfig.default_for(args.reg)
            if args.figure == 2:
                cfg.replications = 200 if args.reg == "l1" else 50
        if args.replications is not None:
            cfg.replications = args.replications
        if args.seed is not None:
            cfg.base_seed = args.seed
        cfg.validate()
    except FileNotFoundError as exc:
        raise UsageError(f"{args.config}: no such file") from exc
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    try:
        if args.figure == 1:
            report = run_figure1(cfg, out)
            for method, summary in report["rows"][0]["solvers"].items():
                print(f"{method}: final R0 {summary['final_R0']}, sandwich "
                      f"{'ok' if summary['sandwich_ok'] else 'violated'}")
            lo, hi = report["rows"][0]["R0_bounds"]
            print(f"R0 bounds [{lo}, {hi}]")
        else:
            report = run_figure2(cfg, out)
            print(f"status {report['status']}: {report['retained']} of {cfg.replications} retained")
            for delta, agg in report["groups"].items():
                print(f"delta {delta}: {agg['count']} runs, exact {agg['exact_rate']:.2f}, "
                      f"sandwich {agg['sandwich_rate']:.2f}")
    except (SolverDiverged, CertificateError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stratatrack",
        description="Model identification for l1 / nuclear-norm regularized least squares. "
                    "Replicated runs use $STRATATRACK_THREADS worker processes (default: all cores).")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a ground truth and a Gaussian dataset")
    g.add_argument("--reg", choices=["l1", "nuclear"], required=True)
    g.add_argument("--p", type=_positive_int, help="dimension (l1)")
    g.add_argument("--shape", type=_shape, help="matrix shape P1xP2 (nuclear)")
    g.add_argument("--n", type=_positive_int, required=True, help="number of samples")
    g.add_argument("--s", type=_nonneg_int, required=True, help="support size or rank of w0")
    g.add_argument("--noise", type=_nonneg_float, default=1e-2, help="noise standard deviation")
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--format", choices=["bin", "csv"], default="bin", help="dataset file format")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run FB, Prox-SGD or SAGA on a dataset")
    s.add_argument("--in", dest="input", required=True, help="dataset (.json header or .csv)")
    s.add_argument("--reg", choices=["l1", "nuclear"], required=True)
    s.add_argument("--shape", type=_shape, help="matrix shape P1xP2 (nuclear)")
    s.add_argument("--lambda", dest="lam", type=_positive_float, required=True)
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--gamma", type=_positive_float, help="constant step size")
    s.add_argument("--gamma-a", type=_positive_float, help="decaying step a/(k+b): a")
    s.add_argument("--gamma-b", type=_positive_float, help="decaying step a/(k+b): b")
    s.add_argument("--alpha", type=_positive_float, default=1.0, help="relaxation in (0, 1]")
    lim = s.add_mutually_exclusive_group()
    lim.add_argument("--iters", type=_nonneg_int, help="number of steps")
    lim.add_argument("--batches", type=_nonneg_int, default=400,
                     help="number of batches (n stochastic steps or one FB step each)")
    s.add_argument("--record-every", type=_positive_int, help="steps between trace points")
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--trace-out", required=True, help="trace CSV path")
    s.add_argument("--state-out", help="final state JSON (default: next to the trace)")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("certificate", help="population dual certificate of w0")
    c.add_argument("--w0", required=True, help="JSON file with key w0")
    c.add_argument("--cov", default="identity",
                   help="'identity', 'empirical' (with --in) or a JSON/CSV matrix file")
    c.add_argument("--in", dest="input", help="dataset for --cov empirical")
    c.add_argument("--reg", choices=["l1", "nuclear"], required=True)
    c.add_argument("--shape", type=_shape)
    c.add_argument("--margin", type=_nonneg_float, default=1e-6, help="required IC margin")
    c.add_argument("--out", required=True, help="certificate JSON path")
    c.set_defaults(func=cmd_certificate)

    k = sub.add_parser("check", help="sandwich check of a solution against w0 and a certificate")
    k.add_argument("--w0", required=True)
    k.add_argument("--eta0", required=True, help="certificate JSON")
    k.add_argument("--solution", required=True, help="final-state JSON (key z) or a w JSON")
    k.add_argument("--reg", choices=["l1", "nuclear"], required=True)
    k.add_argument("--shape", type=_shape)
    k.set_defaults(func=cmd_check)

    r = sub.add_parser("reproduce", help="run a figure experiment with its default setup")
    r.add_argument("--figure", type=int, choices=[1, 2], required=True)
    r.add_argument("--reg", choices=["l1", "nuclear"], required=True)
    r.add_argument("--config", help="experiment config JSON (see schema/config.schema.json)")
    r.add_argument("--replications", type=_positive_int)
    r.add_argument("--seed", type=_nonneg_int, help="base seed")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stratatrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverDiverged, CertificateError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"stratatrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        # remaining value errors come from malformed inputs
        print(f"stratatrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
