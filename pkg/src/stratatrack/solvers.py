"""Forward-backward and relaxed stochastic proximal-gradient solvers.

One iteration of the stochastic scheme reads

    d_k     = (<w_k, x_i> - y_i) x_i + eps_k        (i drawn uniformly, with replacement)
    z_k     = prox_{gamma_k lam R}(w_k - gamma_k d_k)
    w_{k+1} = (1 - alpha_k) w_k + alpha_k z_k

with ``eps_k = 0`` for Prox-SGD and the SAGA correction
``eps_k = mean(table) - table[i]`` (table read *before* entry ``i`` is refreshed).
The forward-backward method uses the full gradient ``C_n w - u_n`` instead.

Each step also yields the dual iterate ``v_k = (w_k - gamma_k d_k - z_k) / gamma_k``,
which lies in ``lam * dR(z_k)`` by the prox optimality condition.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .problem import Dataset, EmpiricalQuantities, empirical, erm_objective
from .regularizers import DEFAULT_TOL, StratumTolerance
from .rng import SOLVER, stream
from .stratification import StratumDescriptor

log = logging.getLogger(__name__)

FB = "fb"
PROX_SGD = "prox_sgd"
SAGA = "saga"
METHODS = (FB, PROX_SGD, SAGA)

TRACE_HEADER = ["batch", "k", "R0", "objective", "dual_residual", "stratum"]


class SolverConfigError(ValueError):
    pass


class SolverDiverged(FloatingPointError):
    """Non-finite iterate; ``trace`` holds everything recorded before the failure."""

    def __init__(self, msg, trace=None, state=None):
        super().__init__(msg)
        self.trace = trace
        self.state = state


# -- schedules ------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantStep:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise SolverConfigError("step size must be positive")

    def __call__(self, k: int) -> float:
        return self.gamma

    @property
    def max_value(self) -> float:
        return self.gamma

    def to_json(self):
        return {"kind": "constant", "gamma": self.gamma}


@dataclass(frozen=True)
class DecayingStep:
    """``gamma_k = a / (k + b)``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise SolverConfigError("decaying schedule needs a > 0 and b > 0")

    def __call__(self, k: int) -> float:
        return self.a / (k + self.b)

    @property
    def max_value(self) -> float:
        return self.a / self.b

    def to_json(self):
        return {"kind": "decaying", "a": self.a, "b": self.b}


Schedule = Union[ConstantStep, DecayingStep]


def schedule_from_json(obj: dict) -> Schedule:
    if obj["kind"] == "constant":
        return ConstantStep(float(obj["gamma"]))
    if obj["kind"] == "decaying":
        return DecayingStep(float(obj["a"]), float(obj["b"]))
    raise SolverConfigError(f"unknown schedule kind {obj['kind']!r}")


@dataclass(frozen=True)
class SolverSpec:
    """What to run. ``iterations`` counts single-sample steps for stochastic
    methods and full-gradient steps for FB; ``record_every`` defaults to one
    batch (``n`` stochastic steps, one FB step)."""

    method: str
    gamma: Schedule
    iterations: int
    alpha: float = 1.0
    rng_seed: int = 0
    record_every: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise SolverConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0 < self.alpha <= 1:
            raise SolverConfigError("relaxation alpha must lie in (0, 1]")
        if self.iterations < 0:
            raise SolverConfigError("iterations must be nonnegative")
        if self.record_every is not None and self.record_every < 1:
            raise SolverConfigError("record_every must be >= 1")
        if self.method == FB and not isinstance(self.gamma, ConstantStep):
            raise SolverConfigError("FB runs with a constant step")

    def steps_per_batch(self, n: int) -> int:
        return 1 if self.method == FB else n

    def record_interval(self, n: int) -> int:
        return self.record_every or self.steps_per_batch(n)

    def to_json(self) -> dict:
        return {"method": self.method, "gamma": self.gamma.to_json(), "iterations": self.iterations,
                "alpha": self.alpha, "rng_seed": self.rng_seed, "record_every": self.record_every}

    @classmethod
    def from_json(cls, obj: dict) -> "SolverSpec":
        return cls(obj["method"], schedule_from_json(obj["gamma"]), int(obj["iterations"]),
                   float(obj.get("alpha", 1.0)), int(obj.get("rng_seed", 0)), obj.get("record_every"))


def fb_spec(E: EmpiricalQuantities, batches: int, factor: float = 1.8, **kw) -> SolverSpec:
    """FB with ``gamma = factor / L_n``."""
    return SolverSpec(FB, ConstantStep(factor / E.Ln), batches, **kw)


def saga_spec(E: EmpiricalQuantities, batches: int, **kw) -> SolverSpec:
    """SAGA with ``gamma = 1 / (3 L'_n)``, ``L'_n = max_i ||x_i||^2``."""
    return SolverSpec(SAGA, ConstantStep(1.0 / (3.0 * E.Ln_max)), batches * E.n, **kw)


def prox_sgd_spec(E: EmpiricalQuantities, batches: int, a: float = 10.0, b: float = 3e4,
                  **kw) -> SolverSpec:
    """Prox-SGD with ``gamma_k = a / (k + b)``."""
    return SolverSpec(PROX_SGD, DecayingStep(a, b), batches * E.n, **kw)


# -- state ----------------------------------------------------------------------

_INDEX_BLOCK = 4096


@dataclass
class SolverState:
    """Mutable iterate state. For SAGA the stored gradient of sample ``i`` is
    ``residuals[i] * x_i``; only the residuals are stored and ``table_mean``
    is updated incrementally."""

    w: np.ndarray
    z: np.ndarray
    k: int = 0
    residuals: Optional[np.ndarray] = None
    table_mean: Optional[np.ndarray] = None
    rng: Optional[np.random.Generator] = None
    last_shrink: Optional[np.ndarray] = None  # (w_k - gamma_k d_k) - z_k of the last step
    last_gamma: float = float("nan")
    last_step_norm: float = float("nan")
    _indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    _pos: int = 0

    def next_index(self, n: int) -> int:
        if self._pos >= self._indices.size:
            self._indices = self.rng.integers(0, n, size=_INDEX_BLOCK)
            self._pos = 0
        i = int(self._indices[self._pos])
        self._pos += 1
        return i

    def table(self, X: np.ndarray) -> np.ndarray:
        """The full ``n x p`` table of stored gradients."""
        return self.residuals[:, None] * X


def init_state(spec: SolverSpec, D: Dataset, w_init=None) -> SolverState:
    p = D.p
    w = np.zeros(p) if w_init is None else np.array(w_init, dtype=float)
    if w.shape != (p,):
        raise SolverConfigError(f"initial point has shape {w.shape}, expected ({p},)")
    state = SolverState(w=w, z=w.copy(), rng=stream(spec.rng_seed, SOLVER))
    if spec.method == SAGA:
        state.residuals = D.X @ w - D.y
        state.table_mean = D.X.T @ state.residuals / D.n
    return state


# -- single steps -----------------------------------------------------------------

def fb_step(state: SolverState, R, lam: float, E: EmpiricalQuantities, gamma: float) -> SolverState:
    """One forward-backward step ``w <- prox_{gamma lam R}(w - gamma (C_n w - u_n))``."""
    if not 0 < gamma < 2.0 / E.Ln:
        raise SolverConfigError(f"FB step {gamma:.6g} outside (0, 2/L_n) = (0, {2.0 / E.Ln:.6g})")
    w = state.w
    v_in = w - gamma * (E.Cn @ w - E.un)
    z, shrink = R.prox_split(gamma * lam, v_in)
    state.last_step_norm = float(np.linalg.norm(z - w))
    state.w, state.z = z, z
    state.last_shrink, state.last_gamma = shrink, gamma
    state.k += 1
    return state


def rspg_step(state: SolverState, R, lam: float, D: Dataset, spec: SolverSpec) -> SolverState:
    """One relaxed stochastic proximal-gradient step (Prox-SGD or SAGA)."""
    n = D.n
    k = state.k
    gamma = spec.gamma(k)
    i = state.next_index(n)
    x = D.X[i]
    w = state.w
    r = float(x @ w) - D.y[i]
    d = r * x
    if spec.method == SAGA:
        r_old = state.residuals[i]
        d = d + state.table_mean - r_old * x
        state.table_mean = state.table_mean + ((r - r_old) / n) * x
        state.residuals[i] = r
    elif spec.method != PROX_SGD:
        raise SolverConfigError(f"rspg_step does not run {spec.method!r}")
    v_in = w - gamma * d
    z, shrink = R.prox_split(gamma * lam, v_in)
    alpha = spec.alpha
    w_new = z if alpha == 1.0 else (1.0 - alpha) * w + alpha * z
    state.last_step_norm = float(np.linalg.norm(w_new - w))
    state.w, state.z = w_new, z
    state.last_shrink, state.last_gamma = shrink, gamma
    state.k = k + 1
    return state


def compute_dual_iterate(state: SolverState) -> np.ndarray:
    """``v_k = (w_k - gamma_k d_k - z_k) / gamma_k`` for the step just taken."""
    if state.last_shrink is None:
        raise ValueError("no step has been taken yet")
    return state.last_shrink / state.last_gamma


def dual_residual(R, lam: float, z, v, tol: StratumTolerance = DEFAULT_TOL) -> float:
    """Distance from ``v / lam`` to ``dR(z)``."""
    return R.subdifferential_at(z, tol).distance(v / lam)


# -- trace ------------------------------------------------------------------------

@dataclass
class TracePoint:
    k: int
    batch: float
    stratum: StratumDescriptor
    R0: int
    objective: float
    dual_residual: float
    v: np.ndarray
    step_ratio: float  # ||w_{k+1} - w_k|| / (alpha_k gamma_k), exposed for inspection only


@dataclass
class SolverTrace:
    method: str
    points: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    @property
    def R0(self) -> np.ndarray:
        return np.array([pt.R0 for pt in self.points], dtype=int)

    @property
    def batches(self) -> np.ndarray:
        return np.array([pt.batch for pt in self.points], dtype=float)

    @property
    def strata(self) -> list:
        return [pt.stratum for pt in self.points]

    def to_csv(self, path=None) -> str:
        """Render (and optionally write) the trace as CSV; floats use ``repr`` so reruns are byte-identical."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for pt in self.points:
            wr.writerow([_num(pt.batch), pt.k, pt.R0, repr(float(pt.objective)),
                         repr(float(pt.dual_residual)),
                         json.dumps(pt.stratum.to_json(), separators=(",", ":"))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["batch"] = float(row["batch"])
        row["k"] = int(row["k"])
        row["R0"] = int(row["R0"])
        row["objective"] = float(row["objective"])
        row["dual_residual"] = float(row["dual_residual"])
        row["stratum"] = json.loads(row["stratum"])
    return rows


def final_state_json(state: SolverState, R, lam: float, E: EmpiricalQuantities, spec: SolverSpec,
                     tol: StratumTolerance = DEFAULT_TOL) -> dict:
    stratum = R.stratum_of(state.z, tol)
    return {
        "method": spec.method,
        "spec": spec.to_json(),
        "lambda": lam,
        "k": state.k,
        "w": [float(v) for v in state.w],
        "z": [float(v) for v in state.z],
        "objective": erm_objective(R, lam, E, state.z),
        "R0": stratum.size,
        "stratum": stratum.to_json(),
    }


# -- drivers ----------------------------------------------------------------------

def validate_spec(spec: SolverSpec, E: EmpiricalQuantities) -> None:
    if spec.method == FB and not spec.gamma.gamma < 2.0 / E.Ln:
        raise SolverConfigError(
            f"FB step {spec.gamma.gamma:.6g} outside (0, 2/L_n) = (0, {2.0 / E.Ln:.6g})")


def run(R, lam: float, D: Dataset, spec: SolverSpec, E: EmpiricalQuantities | None = None,
        w_init=None, tol: StratumTolerance = DEFAULT_TOL, record_v: bool = True):
    """Run ``spec.iterations`` steps, recording one trace point every ``record_interval`` steps.

    The recorded stratum is that of ``z_k``. Returns ``(trace, state)``; raises
    :class:`SolverDiverged` carrying the healthy part of the trace if an
    iterate stops being finite.
    """
    if lam <= 0:
        raise SolverConfigError("lambda must be positive")
    E = E or empirical(D)
    validate_spec(spec, E)
    state = init_state(spec, D, w_init)
    trace = SolverTrace(spec.method)
    every = spec.record_interval(D.n)
    per_batch = spec.steps_per_batch(D.n)
    for _ in range(spec.iterations):
        if spec.method == FB:
            fb_step(state, R, lam, E, spec.gamma.gamma)
        else:
            rspg_step(state, R, lam, D, spec)
        if state.k % every == 0:
            objective = erm_objective(R, lam, E, state.z) if np.all(np.isfinite(state.w)) else np.nan
            if not math.isfinite(objective):
                raise SolverDiverged(f"{spec.method}: non-finite iterate at k={state.k}", trace, state)
            v = compute_dual_iterate(state)
            stratum = R.stratum_of(state.z, tol)
            alpha = 1.0 if spec.method == FB else spec.alpha
            trace.points.append(TracePoint(
                k=state.k,
                batch=state.k / per_batch,
                stratum=stratum,
                R0=stratum.size,
                objective=objective,
                dual_residual=dual_residual(R, lam, state.z, v, tol),
                v=v if record_v else None,
                step_ratio=state.last_step_norm / (alpha * state.last_gamma),
            ))
    if not np.all(np.isfinite(state.w)):
        raise SolverDiverged(f"{spec.method}: non-finite iterate at k={state.k}", trace, state)
    return trace, state


def solve_fb(R, lam: float, E: EmpiricalQuantities, w_init=None, factor: float = 1.8,
             tol: float = 1e-12, max_iters: int = 200_000):
    """FB run to a fixed-point tolerance; returns ``(w, iterations)``.

    Stops when ``||w_{k+1} - w_k|| / gamma <= tol``.
    """
    gamma = factor / E.Ln
    state = SolverState(w=np.zeros(E.un.size) if w_init is None else np.array(w_init, dtype=float),
                        z=np.zeros(E.un.size))
    for k in range(1, max_iters + 1):
        fb_step(state, R, lam, E, gamma)
        if not math.isfinite(state.last_step_norm):
            raise SolverDiverged(f"fb: non-finite iterate at k={k}")
        if state.last_step_norm / gamma <= tol:
            return state.w, k
    log.warning("solve_fb: no fixed point to %.1e after %d steps (last move %.3e)",
                tol, max_iters, state.last_step_norm / gamma)
    return state.w, max_iters


def validate_ha(spec: SolverSpec, E: EmpiricalQuantities, n: int | None = None) -> dict:
    """Check the verifiable parts of the step-size/variance hypotheses.

    Reports the step-range check ``gamma_k < 2/L_n``, the summability of
    ``alpha gamma_k^2`` under a constant-variance model, and whether the
    variance bound of the method can vanish. Only warns.
    """
    n = n or E.n
    warnings = []
    gmax = spec.gamma.max_value
    step_ok = gmax < 2.0 / E.Ln
    if not step_ok:
        warnings.append(f"step {gmax:.4g} is not below 2/L_n = {2.0 / E.Ln:.4g}")
    decaying = isinstance(spec.gamma, DecayingStep)
    sum_sq_finite = decaying  # sum alpha a^2/(k+b)^2 < inf; constant steps diverge
    sum_infinite = True  # both schedule families are non-summable
    if spec.method == FB:
        variance_vanishes = True  # deterministic: sigma_k = 0
    elif spec.method == SAGA:
        variance_vanishes = True  # variance-reduced: sigma_k -> 0 along convergent runs
    else:
        variance_vanishes = False
        warnings.append("Prox-SGD: sigma_k does not tend to 0, so ||w_{k+1}-w_k|| = o(alpha_k gamma_k) "
                        "cannot be guaranteed; finite-time identification is not expected")
        if not sum_sq_finite:
            warnings.append("Prox-SGD with a constant step: sum alpha gamma_k^2 sigma^2 diverges")
    for msg in warnings:
        log.warning("validate_ha: %s", msg)
    return {
        "method": spec.method,
        "step_range_ok": bool(step_ok),
        "gamma_max": gmax,
        "two_over_Ln": 2.0 / E.Ln,
        "sum_alpha_gamma_sq_finite_constant_sigma": bool(sum_sq_finite),
        "sum_gamma_infinite": sum_infinite,
        "variance_vanishes": variance_vanishes,
        "warnings": warnings,
    }
