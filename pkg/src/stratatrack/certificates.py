"""Dual certificates: the population certificate eta0, empirical certificates, IC.

The population certificate is the minimizer of ``<C^+ eta, eta>`` over
``dR(w0) ∩ Im C``. Both constraint sets admit exact Euclidean projections, so
it is computed by projected gradient, each projection onto the intersection
being carried out by Dykstra's alternating scheme.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from . import linalg
from .problem import EmpiricalQuantities
from .regularizers import DEFAULT_TOL, Nuclear, StratumTolerance
from .stratification import StratumDescriptor

POPULATION = "population"
EMPIRICAL = "empirical"


class CertificateError(RuntimeError):
    """Base class for certificate computation failures."""


class InfeasibleCertificate(CertificateError):
    """``dR(w0) ∩ Im C`` is empty: w0 does not solve the population problem."""


class CertificateNotConverged(CertificateError):
    pass


@dataclass
class CertificateSolverConfig:
    max_iters: int = 200_000
    step_factor: float = 0.9
    stationarity_tol: float = 1e-9
    dykstra_iters: int = 500
    dykstra_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.step_factor < 1:
            raise ValueError("step_factor must lie in (0, 1)")
        if min(self.max_iters, self.dykstra_iters) < 1:
            raise ValueError("iteration caps must be positive")
        if min(self.stationarity_tol, self.dykstra_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class Certificate:
    eta: np.ndarray
    provenance: str
    dual_stratum: StratumDescriptor
    kkt_residual: float
    lam: Optional[float] = None
    n: Optional[int] = None
    ic: Optional[dict] = None
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        prov = {"kind": self.provenance}
        if self.provenance == EMPIRICAL:
            prov.update({"lambda": self.lam, "n": self.n})
        out = {
            "eta": [float(v) for v in self.eta],
            "provenance": prov,
            "dual_stratum": self.dual_stratum.to_json(),
            "kkt_residual": float(self.kkt_residual),
        }
        if self.ic is not None:
            out["ic"] = dict(self.ic)
        return out

    @classmethod
    def from_json(cls, obj: dict, R) -> "Certificate":
        prov = obj["provenance"]
        return cls(
            eta=np.asarray(obj["eta"], dtype=float),
            provenance=prov["kind"],
            dual_stratum=StratumDescriptor.from_json(obj["dual_stratum"], R.complexity_bound),
            kkt_residual=float(obj["kkt_residual"]),
            lam=prov.get("lambda"),
            n=prov.get("n"),
            ic=obj.get("ic"),
        )


def dykstra(x0, project_a, project_b, iters: int, tol: float):
    """Project ``x0`` onto ``A ∩ B`` by Dykstra's algorithm.

    Returns ``(x, residual, iterations)`` where ``x`` is the last iterate
    (a point of ``B``) and ``residual`` its distance to ``A`` plus the size of
    the last update.
    """
    x = np.array(x0, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    residual = np.inf
    for it in range(1, iters + 1):
        y = project_a(x + p)
        p = x + p - y
        x_new = project_b(y + q)
        q = y + q - x_new
        residual = float(np.linalg.norm(x_new - y) + np.linalg.norm(x_new - x))
        x = x_new
        if residual <= tol:
            break
    return x, residual, it


def _feasible_affine_set(sub, basis_perp, p: int):
    """Intersection of ``aff dR(w0)`` with ``Im C`` as ``(point, orthonormal directions)``.

    Returns ``None`` when the intersection is empty.
    """
    a0, Q = sub.affine_hull()
    if basis_perp.shape[1] == 0:
        return a0, Q
    G = basis_perp.T @ Q
    rhs = -(basis_perp.T @ a0)
    if G.shape[1] == 0:
        m = np.zeros(0)
        null = np.zeros((0, 0))
    else:
        U, s, Vt = np.linalg.svd(G, full_matrices=True)
        rank = int(np.sum(s > linalg.RANK_TOL * max(s[0], 1.0))) if s.size else 0
        m = Vt[:rank].T @ ((U[:, :rank].T @ rhs) / s[:rank])
        null = Vt[rank:].T
    if np.linalg.norm(G @ m - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
        return None
    return a0 + Q @ m, Q @ null


def solve_population_certificate(R, w0, C, cfg: CertificateSolverConfig | None = None,
                                 tol: StratumTolerance = DEFAULT_TOL,
                                 eta_init=None) -> Certificate:
    """Population certificate ``eta0 = argmin{<C^+ eta, eta> : eta in dR(w0) ∩ Im C}``.

    Accelerated projected gradient (with adaptive restart) on ``<C^+ eta, eta>``.
    The projection onto the feasible set alternates, by Dykstra's algorithm,
    between ``dR(w0)`` and the affine set ``aff dR(w0) ∩ Im C``, which is
    projected onto exactly. ``eta_init`` overrides the default starting point
    (the projection of zero).
    """
    cfg = cfg or CertificateSolverConfig()
    w0 = np.asarray(w0, dtype=float)
    C = np.asarray(C, dtype=float)
    p = R.dim
    if C.shape != (p, p) or w0.shape != (p,):
        raise ValueError(f"shape mismatch: w0 {w0.shape}, C {C.shape}, regularizer dim {p}")
    sub = R.subdifferential_at(w0, tol)
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    keep = np.abs(evals) > linalg.RANK_TOL * np.abs(evals).max()
    full_rank = bool(keep.all())

    if full_rank and np.max(np.abs(C - np.eye(p))) <= 1e-12 and eta_init is None:
        # identity metric: the certificate is the minimal-norm subgradient
        eta = sub.project(np.zeros(p))
        return _population(R, eta, 0.0, tol, {"iterations": 0, "method": "min-norm"})

    C_pinv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    if full_rank:
        def project(v, iters=None, tol=None):
            return sub.project(v), 0.0
    else:
        affine = _feasible_affine_set(sub, evecs[:, ~keep], p)
        if affine is None:
            raise InfeasibleCertificate("aff dR(w0) does not meet Im C: no certificate exists")
        point, D = affine

        def project_affine(v):
            return point + D @ (D.T @ (v - point))

        # Dykstra stops at ``tol``; the cap only binds on hard, nearly degenerate sets
        def project(v, iters=50 * cfg.dykstra_iters, tol=cfg.dykstra_tol):
            x, res, _ = dykstra(v, sub.project, project_affine, iters, tol)
            return x, res

    start = np.zeros(p) if eta_init is None else np.asarray(eta_init, dtype=float)
    # failure of the first projection is read as infeasibility
    eta, res = project(start)
    if res > cfg.dykstra_tol:
        raise InfeasibleCertificate(
            f"dR(w0) ∩ Im C appears empty: Dykstra residual {res:.3e} > {cfg.dykstra_tol:g} "
            f"after {50 * cfg.dykstra_iters} iterations"
        )

    def grad(v):
        return 2.0 * (C_pinv @ v)

    def objective(v):
        return float(v @ C_pinv @ v)

    # the gradient 2 C^+ eta is 2||C^+||-Lipschitz; momentum needs step <= 1/L
    step = cfg.step_factor / (2.0 * float(np.max(np.abs(1.0 / evals[keep]))))
    # inner projections must be accurate well below what the stationarity test can see
    inner_tol = min(cfg.dykstra_tol, 0.1 * cfg.stationarity_tol * step)

    def stationarity(v):
        v_next, r = project(v - step * grad(v), tol=inner_tol)
        return float(np.linalg.norm(v_next - v)) / step, r

    y, t = eta.copy(), 1.0
    f_prev = objective(eta)
    stat = np.inf
    for k in range(1, cfg.max_iters + 1):
        eta_new, res = project(y - step * grad(y), tol=inner_tol)
        f_new = objective(eta_new)
        if f_new > f_prev and t > 1.0:
            # objective went up: drop the momentum and redo the step from eta
            y, t = eta.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = eta_new + ((t - 1.0) / t_new) * (eta_new - eta)
        moved = float(np.linalg.norm(eta_new - eta)) / step
        eta, t, f_prev = eta_new, t_new, f_new
        if moved <= cfg.stationarity_tol:
            stat, res = stationarity(eta)
            if stat <= cfg.stationarity_tol:
                break
    else:
        raise CertificateNotConverged(
            f"projected gradient stopped at max_iters={cfg.max_iters} with "
            f"stationarity {stat:.3e} (tol {cfg.stationarity_tol:g}), last Dykstra residual {res:.3e}"
        )
    if res > 10 * cfg.dykstra_tol:
        raise CertificateNotConverged(f"final projection residual {res:.3e} exceeds {10 * cfg.dykstra_tol:g}")
    info = {"iterations": k, "method": "accelerated-projected-gradient", "dykstra_residual": res,
            "objective": objective(eta)}
    return _population(R, eta, stat, tol, info)


def _population(R, eta, residual, tol, info) -> Certificate:
    return Certificate(eta=eta, provenance=POPULATION, dual_stratum=R.dual_stratum_of(eta, tol),
                       kkt_residual=float(residual), info=info)


def certificate_objective(eta, C) -> float:
    return float(eta @ linalg.pseudo_inverse(C) @ eta)


def empirical_certificate(R, lam: float, E: EmpiricalQuantities, w_hat,
                          tol: StratumTolerance = DEFAULT_TOL) -> Certificate:
    """``eta_hat = (u_n - C_n w_hat) / lam`` and its distance to ``dR(w_hat)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    w_hat = np.asarray(w_hat, dtype=float)
    eta = (E.un - E.Cn @ w_hat) / lam
    residual = R.subdifferential_at(w_hat, tol).distance(eta)
    # off-ball vectors (non-optimal w_hat) are reported against the clipped vector
    try:
        stratum = R.dual_stratum_of(eta, tol)
    except ValueError:
        stratum = R.dual_stratum_of(R.project_dual_ball(eta), tol)
    return Certificate(eta=eta, provenance=EMPIRICAL, dual_stratum=stratum,
                       kkt_residual=float(residual), lam=float(lam), n=E.n)


def irrepresentable_check(R, w0, cert: Certificate, margin: float = DEFAULT_TOL.active,
                          tol: StratumTolerance = DEFAULT_TOL):
    """Check ``eta0 ∈ ri dR(w0)`` with a safety margin.

    Returns ``(holds, report)``; ``report["margin"]`` is ``1 - max|off-support part|``
    (l1) or ``1 - ||complement block||_op`` (nuclear).
    """
    sub = R.subdifferential_at(np.asarray(w0, dtype=float), tol)
    attained = 1.0 - sub.complement_norm(cert.eta)
    holds = bool(attained >= margin) and sub.distance(cert.eta) <= max(1e-6, 10 * tol.active)
    return holds, {"holds": holds, "margin": float(attained), "required": float(margin)}


def _normal_cone_fit(R, eta, target, P, tol: StratumTolerance, iters: int = 3000) -> float:
    """``min ||P w - target||`` over ``w`` in the normal cone of the dual ball at ``eta``."""
    if isinstance(R, Nuclear):
        U, s, V = linalg.svd(eta.reshape(R.shape))
        k = int(np.sum(s >= 1.0 - tol.active))
        if k == 0:
            return float(np.linalg.norm(target))
        Uk, Vk = U[:, :k], V[:, :k]
        # columns: vec(Uk E_ab Vk^T) for the k*k matrix units
        G = np.einsum("ia,jb->ijab", Uk, Vk).reshape(R.dim, k * k)
        A = P @ G
        step = 1.0 / max(linalg.operator_norm(A) ** 2, 1e-300)
        M = np.zeros((k, k))
        Y, t = M.copy(), 1.0
        for _ in range(iters):
            grad = (A.T @ (A @ Y.ravel() - target)).reshape(k, k)
            Z = Y - step * grad
            Z = 0.5 * (Z + Z.T)
            ev, evec = np.linalg.eigh(Z)
            M_new = (evec * np.clip(ev, 0.0, None)) @ evec.T
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            Y = M_new + ((t - 1) / t_new) * (M_new - M)
            M, t = M_new, t_new
        return float(np.linalg.norm(A @ M.ravel() - target))
    active = np.flatnonzero(np.abs(eta) >= 1.0 - tol.active)
    if active.size == 0:
        return float(np.linalg.norm(target))
    A = P[:, active] * np.sign(eta[active])
    _, rnorm = nnls(A, target)
    return float(rnorm)


def dual_cross_check(R, lam: float, E: EmpiricalQuantities, cert: Certificate,
                     tol: StratumTolerance = DEFAULT_TOL) -> dict:
    """First-order stationarity of ``cert.eta`` for the empirical Fenchel dual.

    The dual is ``min_{eta in Im C_n} R*(eta) + lam/2 <C_n^+ eta, eta> - <C_n^+ u_n, eta>``
    with ``R*`` the indicator of the dual-norm unit ball. Stationarity asks for
    a normal-cone element ``w`` at ``eta`` with ``P w = C_n^+ (u_n - lam eta)``;
    the residual adds the best such fit to the distances of ``eta`` from the
    ball and from ``Im C_n``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    eta = np.asarray(cert.eta, dtype=float)
    P = linalg.range_projector(E.Cn)
    target = linalg.pseudo_inverse(E.Cn) @ (E.un - lam * eta)
    off_range = float(np.linalg.norm(eta - P @ eta))
    off_ball = float(np.linalg.norm(eta - R.project_dual_ball(eta)))
    fit = _normal_cone_fit(R, R.project_dual_ball(eta), target, P, tol)
    return {"residual": off_range + off_ball + fit, "range": off_range, "ball": off_ball,
            "stationarity": fit}
