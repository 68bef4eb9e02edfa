"""The l1 and nuclear norms: value, prox, subdifferential geometry and strata.

Both regularizers act on flat vectors. The nuclear norm reshapes its input
row-major into a ``p1 x p2`` matrix internally, so solver code never needs to
know which penalty it is running.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .stratification import (
    DUAL,
    PRIMAL,
    RANK,
    SUPPORT,
    StratumDescriptor,
    mirror_map as _mirror_map,
    mirror_map_inverse as _mirror_map_inverse,
)


class DualDomainError(ValueError):
    """A vector handed to ``dual_stratum_of`` lies outside the dual-norm unit ball."""


@dataclass(frozen=True)
class StratumTolerance:
    """Thresholds used to read off strata from floating-point vectors.

    ``support``: entries / singular values above this count as nonzero.
    ``active``: dual entries / singular values at least ``1 - active`` count as saturated.
    """

    support: float = 1e-10
    active: float = 1e-6


DEFAULT_TOL = StratumTolerance()


# -- subdifferential descriptors ---------------------------------------------

@dataclass(frozen=True)
class L1Subdiff:
    """``d||.||_1(w)``: signs fixed on the support, ``[-1, 1]`` elsewhere."""

    p: int
    fixed: np.ndarray  # indices of supp(w)
    signs: np.ndarray  # sign(w) on ``fixed``

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.p, dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)

    def project(self, eta: np.ndarray) -> np.ndarray:
        z = np.clip(eta, -1.0, 1.0)
        z[self.fixed] = self.signs
        return z

    def distance(self, eta: np.ndarray) -> float:
        return float(np.linalg.norm(eta - self.project(eta)))

    def contains(self, eta: np.ndarray, tol: float = 1e-8) -> bool:
        return self.distance(eta) <= tol

    def complement_norm(self, eta: np.ndarray) -> float:
        """Largest magnitude of ``eta`` off the support (0 if the support is everything)."""
        free = self.free
        return float(np.abs(eta[free]).max()) if free.size else 0.0

    def affine_hull(self):
        """``(a0, Q)`` with ``aff dR(w) = a0 + Im Q`` and ``Q`` having orthonormal columns."""
        a0 = np.zeros(self.p)
        a0[self.fixed] = self.signs
        return a0, np.eye(self.p)[:, self.free]


@dataclass(frozen=True)
class NuclearSubdiff:
    """``d||.||_*(W) = {U1 V1^T + U2 M V2^T : ||M||_op <= 1}``.

    ``U1, V1`` span the column/row spaces of ``W`` at its numerical rank,
    ``U2, V2`` their orthogonal complements.
    """

    shape: tuple
    U1: np.ndarray
    V1: np.ndarray
    U2: np.ndarray
    V2: np.ndarray

    def _fixed(self) -> np.ndarray:
        return self.U1 @ self.V1.T

    def project(self, eta: np.ndarray) -> np.ndarray:
        E = eta.reshape(self.shape)
        M = self.U2.T @ E @ self.V2
        if M.size:
            Um, s, Vm = linalg.svd(M)
            M = (Um * np.minimum(s, 1.0)) @ Vm.T
        return (self._fixed() + self.U2 @ M @ self.V2.T).ravel()

    def distance(self, eta: np.ndarray) -> float:
        return float(np.linalg.norm(eta - self.project(eta)))

    def contains(self, eta: np.ndarray, tol: float = 1e-8) -> bool:
        return self.distance(eta) <= tol

    def complement_norm(self, eta: np.ndarray) -> float:
        """Spectral norm of the component of ``eta`` acting between the complements."""
        M = self.U2.T @ eta.reshape(self.shape) @ self.V2
        return float(linalg.svd(M).S[0]) if M.size else 0.0

    def affine_hull(self):
        """``(a0, Q)`` with ``aff dR(W) = a0 + Im Q`` and ``Q`` having orthonormal columns."""
        k1, k2 = self.U2.shape[1], self.V2.shape[1]
        Q = np.einsum("ia,jb->ijab", self.U2, self.V2).reshape(self.shape[0] * self.shape[1], k1 * k2)
        return self._fixed().ravel(), Q


# -- regularizers -------------------------------------------------------------

class Regularizer:
    """Shared surface of :class:`L1` and :class:`Nuclear`."""

    stratum_kind: str
    dim: int
    complexity_bound: int

    def mirror_map(self, M: StratumDescriptor) -> StratumDescriptor:
        self._check_descriptor(M)
        return _mirror_map(M)

    def mirror_map_inverse(self, M: StratumDescriptor) -> StratumDescriptor:
        self._check_descriptor(M)
        return _mirror_map_inverse(M)

    def _check_descriptor(self, M: StratumDescriptor) -> None:
        if M.kind != self.stratum_kind or M.bound != self.complexity_bound:
            raise ValueError(f"descriptor {M} is not a stratum of {self!r}")


class L1(Regularizer):
    """``R(w) = sum_i |w_i|`` on ``R^p``."""

    stratum_kind = SUPPORT

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("p must be >= 1")
        self.p = int(p)
        self.dim = self.p
        self.complexity_bound = self.p

    def __repr__(self):
        return f"L1(p={self.p})"

    def __eq__(self, other):
        return isinstance(other, L1) and other.p == self.p

    def __hash__(self):
        return hash(("l1", self.p))

    def to_json(self) -> dict:
        return {"kind": "l1", "p": self.p}

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.p,):
            raise ValueError(f"expected a vector of length {self.p}, got shape {w.shape}")
        return w

    def value(self, w) -> float:
        return float(np.abs(self._check(w)).sum())

    def prox(self, t: float, w) -> np.ndarray:
        """Soft thresholding; entries with ``|w_i| <= t`` become exactly +0.0."""
        if t <= 0:
            raise ValueError("prox parameter must be positive")
        w = self._check(w)
        return np.where(np.abs(w) > t, w - t * np.sign(w), 0.0)

    def prox_split(self, t: float, w):
        """``(prox_{tR}(w), w - prox_{tR}(w))`` with the second part formed without cancellation."""
        w = self._check(w)
        return self.prox(t, w), np.clip(w, -t, t)

    def dual_norm(self, eta) -> float:
        return float(np.abs(self._check(eta)).max())

    def project_dual_ball(self, eta) -> np.ndarray:
        return np.clip(self._check(eta), -1.0, 1.0)

    def subdifferential_at(self, w, tol: StratumTolerance = DEFAULT_TOL) -> L1Subdiff:
        w = self._check(w)
        fixed = np.flatnonzero(np.abs(w) > tol.support)
        return L1Subdiff(self.p, fixed, np.sign(w[fixed]))

    def stratum_of(self, w, tol: StratumTolerance = DEFAULT_TOL) -> StratumDescriptor:
        w = self._check(w)
        return StratumDescriptor(SUPPORT, PRIMAL, np.flatnonzero(np.abs(w) > tol.support), self.p)

    def dual_stratum_of(self, eta, tol: StratumTolerance = DEFAULT_TOL) -> StratumDescriptor:
        mag = np.abs(self._check(eta))
        if mag.max() > 1.0 + tol.active:
            raise DualDomainError(f"||eta||_inf = {mag.max():.6g} exceeds 1 + {tol.active:g}")
        return StratumDescriptor(SUPPORT, DUAL, np.flatnonzero(mag >= 1.0 - tol.active), self.p)


class Nuclear(Regularizer):
    """Nuclear (trace) norm of ``p1 x p2`` matrices stored row-major as flat vectors."""

    stratum_kind = RANK

    def __init__(self, p1: int, p2: int):
        if p1 < 1 or p2 < 1:
            raise ValueError("p1 and p2 must be >= 1")
        self.shape = (int(p1), int(p2))
        self.p = self.dim = self.shape[0] * self.shape[1]
        self.complexity_bound = min(self.shape)

    def __repr__(self):
        return f"Nuclear({self.shape[0]}x{self.shape[1]})"

    def __eq__(self, other):
        return isinstance(other, Nuclear) and other.shape == self.shape

    def __hash__(self):
        return hash(("nuclear", self.shape))

    def to_json(self) -> dict:
        return {"kind": "nuclear", "shape": list(self.shape)}

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape == self.shape:
            return w.ravel()
        if w.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} entries or shape {self.shape}, got {w.shape}")
        return w

    def singular_values(self, w) -> np.ndarray:
        return linalg.svd(self._check(w).reshape(self.shape)).S

    def value(self, w) -> float:
        return float(self.singular_values(w).sum())

    def prox(self, t: float, w) -> np.ndarray:
        """Singular value soft thresholding."""
        if t <= 0:
            raise ValueError("prox parameter must be positive")
        U, s, V = linalg.svd(self._check(w).reshape(self.shape))
        return ((U * np.maximum(s - t, 0.0)) @ V.T).ravel()

    def prox_split(self, t: float, w):
        """``(prox_{tR}(w), w - prox_{tR}(w))`` from a single SVD."""
        if t <= 0:
            raise ValueError("prox parameter must be positive")
        U, s, V = linalg.svd(self._check(w).reshape(self.shape))
        return ((U * np.maximum(s - t, 0.0)) @ V.T).ravel(), ((U * np.minimum(s, t)) @ V.T).ravel()

    def dual_norm(self, eta) -> float:
        return float(self.singular_values(eta)[0])

    def project_dual_ball(self, eta) -> np.ndarray:
        U, s, V = linalg.svd(self._check(eta).reshape(self.shape))
        return ((U * np.minimum(s, 1.0)) @ V.T).ravel()

    def subdifferential_at(self, w, tol: StratumTolerance = DEFAULT_TOL) -> NuclearSubdiff:
        U, s, V = linalg.svd(self._check(w).reshape(self.shape), full=True)
        r = int(np.sum(s > tol.support))
        return NuclearSubdiff(self.shape, U[:, :r], V[:, :r], U[:, r:], V[:, r:])

    def stratum_of(self, w, tol: StratumTolerance = DEFAULT_TOL) -> StratumDescriptor:
        r = int(np.sum(self.singular_values(w) > tol.support))
        return StratumDescriptor(RANK, PRIMAL, r, self.complexity_bound)

    def dual_stratum_of(self, eta, tol: StratumTolerance = DEFAULT_TOL) -> StratumDescriptor:
        s = self.singular_values(eta)
        if s[0] > 1.0 + tol.active:
            raise DualDomainError(f"||eta||_op = {s[0]:.6g} exceeds 1 + {tol.active:g}")
        return StratumDescriptor(RANK, DUAL, int(np.sum(s >= 1.0 - tol.active)), self.complexity_bound)


def make_regularizer(kind: str, p: int | None = None, shape=None):
    """Build a regularizer from a kind name (``"l1"`` or ``"nuclear"``)."""
    if kind == "l1":
        if p is None:
            raise ValueError("l1 regularizer needs p")
        return L1(p)
    if kind == "nuclear":
        if shape is None:
            raise ValueError("nuclear regularizer needs shape (p1, p2)")
        return Nuclear(*shape)
    raise ValueError(f"unknown regularizer kind {kind!r}")


def regularizer_from_json(obj: dict):
    return make_regularizer(obj["kind"], p=obj.get("p"), shape=obj.get("shape"))
