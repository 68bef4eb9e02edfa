"""Data model: ground truth, sampling, empirical moments, ERM objective.

The least-squares ERM problem only sees the data through

    C_n = (1/n) sum_i x_i x_i^T,   u_n = (1/n) sum_i y_i x_i,

so the objective is evaluated in the compact form
``lam R(w) + <C_n w, w>/2 - <u_n, w> + mean(y^2)/2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .regularizers import Nuclear
from .rng import DATA, GROUND_TRUTH, stream

GAUSSIAN_IID = "gaussian_iid"
EXPLICIT_COVARIANCE = "explicit_covariance"

#: Ground-truth nonzeros (l1) are redrawn until every magnitude exceeds this.
MAGNITUDE_FLOOR = 0.1


@dataclass(frozen=True)
class PopulationModel:
    w0: np.ndarray
    C: np.ndarray
    noise_std: float = 0.0
    feature_law: str = GAUSSIAN_IID

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if C.shape != (w0.size, w0.size):
            raise ValueError(f"C has shape {C.shape}, expected {(w0.size, w0.size)}")
        if not np.allclose(C, C.T, atol=1e-12):
            raise ValueError("C must be symmetric")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.feature_law not in (GAUSSIAN_IID, EXPLICIT_COVARIANCE):
            raise ValueError(f"unknown feature law {self.feature_law!r}")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "C", C)

    @classmethod
    def gaussian(cls, w0, noise_std: float = 0.0) -> "PopulationModel":
        """Standard Gaussian features: the population covariance is exactly the identity."""
        w0 = np.asarray(w0, dtype=float)
        return cls(w0, np.eye(w0.size), noise_std, GAUSSIAN_IID)

    @property
    def u(self) -> np.ndarray:
        return self.C @ self.w0


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
            raise ValueError(f"inconsistent shapes X{X.shape} y{y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset has non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class EmpiricalQuantities:
    Cn: np.ndarray
    un: np.ndarray
    Ln: float
    Ln_max: float
    n: int
    y_sq_mean: float = field(default=0.0)


def generate_ground_truth(R, s: int, rng_seed: int) -> np.ndarray:
    """Random ``w0`` of complexity exactly ``s`` (support size or rank)."""
    if not 0 <= s <= R.complexity_bound:
        raise ValueError(f"complexity {s} outside [0, {R.complexity_bound}] for {R!r}")
    rng = stream(rng_seed, GROUND_TRUTH)
    if s == 0:
        return np.zeros(R.dim)
    if isinstance(R, Nuclear):
        p1, p2 = R.shape
        W = rng.standard_normal((p1, s)) @ rng.standard_normal((p2, s)).T
        return (W / linalg.operator_norm(W)).ravel()
    w = np.zeros(R.dim)
    idx = rng.choice(R.dim, size=s, replace=False)
    vals = rng.standard_normal(s)
    while np.any(np.abs(vals) < MAGNITUDE_FLOOR):
        small = np.abs(vals) < MAGNITUDE_FLOOR
        vals[small] = rng.standard_normal(int(small.sum()))
    w[idx] = vals
    return w


def _covariance_sqrt(C: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(C)
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def sample_dataset(model: PopulationModel, n: int, rng_seed: int) -> Dataset:
    """Draw ``n`` i.i.d. pairs ``y = <w0, x> + noise_std * g``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(rng_seed, DATA)
    p = model.w0.size
    X = rng.standard_normal((n, p))
    if model.feature_law == EXPLICIT_COVARIANCE:
        X = X @ _covariance_sqrt(model.C)
    y = X @ model.w0 + model.noise_std * rng.standard_normal(n)
    return Dataset(X, y, rng_seed, model.noise_std)


def empirical(D: Dataset) -> EmpiricalQuantities:
    n = D.n
    Cn = D.X.T @ D.X / n
    Cn = 0.5 * (Cn + Cn.T)
    un = D.X.T @ D.y / n
    return EmpiricalQuantities(
        Cn=Cn,
        un=un,
        Ln=linalg.operator_norm(Cn),
        Ln_max=float(np.max(np.einsum("ij,ij->i", D.X, D.X))),
        n=n,
        y_sq_mean=float(D.y @ D.y / n),
    )


def erm_objective(R, lam: float, E: EmpiricalQuantities, w) -> float:
    """``lam R(w) + (1/2n) sum_i (<x_i, w> - y_i)^2`` via the empirical moments."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    w = np.asarray(w, dtype=float)
    return float(lam * R.value(w) + 0.5 * w @ (E.Cn @ w) - E.un @ w + 0.5 * E.y_sq_mean)


def erm_objective_direct(R, lam: float, D: Dataset, w) -> float:
    """Same objective evaluated from the raw samples (reference implementation)."""
    r = D.X @ w - D.y
    return float(lam * R.value(w) + 0.5 * np.mean(r * r))


def lambda_schedule(n: int, lam0: float = 1.0, exponent: float = 1.0 / 3.0) -> float:
    """``lam_n = lam0 * n^(-exponent)``; the default decays slower than sqrt(log log n / n)."""
    return lam0 * float(n) ** (-exponent)


def sampling_diagnostics(model: PopulationModel, E: EmpiricalQuantities,
                         range_tol: float = 1e-6) -> dict:
    """Distance between empirical and population moments, and range inclusion."""
    u = model.u
    rn = max(float(np.linalg.norm(E.un - u)), linalg.operator_norm(E.Cn - model.C))
    P = linalg.range_projector(model.C)
    Pn = linalg.range_projector(E.Cn)
    leak = linalg.operator_norm(Pn - P @ Pn) if Pn.size else 0.0
    return {
        "r_n": rn,
        "rank_Cn": int(round(np.trace(Pn))),
        "rank_C": int(round(np.trace(P))),
        "range_included": bool(leak <= range_tol),
        "range_leak": leak,
    }


# -- persistence --------------------------------------------------------------

def save_dataset(D: Dataset, path, fmt: str = "bin") -> list[Path]:
    """Write ``D`` as JSON header + little-endian float64 payload, or as CSV.

    ``path`` is a stem: the binary format writes ``<stem>.json`` and
    ``<stem>.bin``, CSV writes ``<stem>.csv``. Returns the written paths.
    """
    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        out = stem.with_suffix(".csv")
        header = ",".join([f"x{j}" for j in range(D.p)] + ["y"])
        np.savetxt(out, np.column_stack([D.X, D.y]), delimiter=",", header=header,
                   comments="", fmt="%.17g")
        return [out]
    if fmt != "bin":
        raise ValueError(f"unknown dataset format {fmt!r}")
    bin_path = stem.with_suffix(".bin")
    head_path = stem.with_suffix(".json")
    payload = np.concatenate([D.X.ravel(), D.y]).astype("<f8")
    bin_path.write_bytes(payload.tobytes())
    head_path.write_text(json.dumps({
        "n": D.n, "p": D.p, "seed": D.seed, "noise_std": D.noise_std,
        "dtype": "<f8", "layout": "X row-major then y", "payload": bin_path.name,
    }, indent=2) + "\n")
    return [head_path, bin_path]


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset` (``.json`` header or ``.csv``)."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            cols = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if not cols or cols[-1] != "y" or data.shape[1] != len(cols):
            raise ValueError(f"{path}: expected columns x0..x(p-1),y")
        return Dataset(data[:, :-1], data[:, -1])
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    head = json.loads(path.read_text())
    n, p = int(head["n"]), int(head["p"])
    raw = np.frombuffer((path.parent / head["payload"]).read_bytes(), dtype="<f8")
    if raw.size != n * p + n:
        raise ValueError(f"{path}: payload has {raw.size} values, expected {n * p + n}")
    return Dataset(raw[: n * p].reshape(n, p).copy(), raw[n * p:].copy(),
                   int(head.get("seed", 0)), float(head.get("noise_std", 0.0)))
