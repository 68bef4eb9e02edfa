"""Finite stratum descriptors, their partial order, and the sandwich predicate.

A stratum is represented by its finite invariant: the support set for the
l1 norm, the rank for the nuclear norm. Primal strata are ordered by
inclusion of supports (or by rank); dual strata carry the reversed order,
so that the mirror map between them is order-reversing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

SUPPORT = "support"
RANK = "rank"
PRIMAL = "primal"
DUAL = "dual"


class StratumMismatch(ValueError):
    """Two descriptors of different kind or side were compared."""


@dataclass(frozen=True)
class StratumDescriptor:
    """A stratum of the l1 or nuclear-norm stratification.

    ``value`` is a frozenset of 0-based indices for ``kind == "support"`` and
    a nonnegative int for ``kind == "rank"``. ``bound`` is the ambient size
    (``p`` or ``min(p1, p2)``) and is used for validation only.
    """

    kind: str
    side: str
    value: Union[frozenset, int]
    bound: int

    def __post_init__(self):
        if self.kind not in (SUPPORT, RANK):
            raise ValueError(f"unknown stratum kind {self.kind!r}")
        if self.side not in (PRIMAL, DUAL):
            raise ValueError(f"unknown stratum side {self.side!r}")
        if self.bound < 0:
            raise ValueError("bound must be nonnegative")
        if self.kind == SUPPORT:
            object.__setattr__(self, "value", frozenset(int(i) for i in self.value))
            if any(i < 0 or i >= self.bound for i in self.value):
                raise ValueError(f"support indices out of range [0, {self.bound})")
        else:
            v = int(self.value)
            if v < 0 or v > self.bound:
                raise ValueError(f"rank {v} out of range [0, {self.bound}]")
            object.__setattr__(self, "value", v)

    @classmethod
    def support(cls, indices: Iterable[int], p: int, side: str = PRIMAL) -> "StratumDescriptor":
        return cls(SUPPORT, side, frozenset(indices), p)

    @classmethod
    def rank(cls, r: int, bound: int, side: str = PRIMAL) -> "StratumDescriptor":
        return cls(RANK, side, r, bound)

    @property
    def size(self) -> int:
        """Cardinality of the support, or the rank."""
        return len(self.value) if self.kind == SUPPORT else self.value

    def to_json(self) -> dict:
        value = sorted(self.value) if self.kind == SUPPORT else self.value
        return {"kind": self.kind, "side": self.side, "value": value}

    @classmethod
    def from_json(cls, obj: dict, bound: int) -> "StratumDescriptor":
        return cls(obj["kind"], obj["side"], obj["value"], bound)

    def __str__(self):
        if self.kind == SUPPORT:
            return f"{self.side}:support{sorted(self.value)}"
        return f"{self.side}:rank{self.value}"


def _check_compatible(M1: StratumDescriptor, M2: StratumDescriptor) -> None:
    if M1.kind != M2.kind or M1.side != M2.side:
        raise StratumMismatch(f"cannot compare {M1.kind}/{M1.side} with {M2.kind}/{M2.side}")
    if M1.bound != M2.bound:
        raise StratumMismatch(f"ambient sizes differ: {M1.bound} vs {M2.bound}")


def leq(M1: StratumDescriptor, M2: StratumDescriptor) -> bool:
    """Partial order ``M1 <= M2`` (``M1`` lies in the closure of ``M2``)."""
    _check_compatible(M1, M2)
    # subset test for frozensets, integer order for ranks; reversed on the dual side
    if M1.side == PRIMAL:
        return M1.value <= M2.value
    return M2.value <= M1.value


def complexity(M: StratumDescriptor) -> int:
    """Complexity ``R0``: support size (l1) or rank (nuclear) of a primal stratum."""
    if M.side != PRIMAL:
        raise ValueError("complexity is defined on primal strata; map dual strata back first")
    return M.size


def mirror_map(M: StratumDescriptor) -> StratumDescriptor:
    """Primal -> dual stratum (support I <-> active set I, rank r <-> r unit singular values)."""
    if M.side != PRIMAL:
        raise ValueError("mirror_map expects a primal stratum")
    return StratumDescriptor(M.kind, DUAL, M.value, M.bound)


def mirror_map_inverse(M: StratumDescriptor) -> StratumDescriptor:
    """Dual -> primal stratum; inverse of :func:`mirror_map`."""
    if M.side != DUAL:
        raise ValueError("mirror_map_inverse expects a dual stratum")
    return StratumDescriptor(M.kind, PRIMAL, M.value, M.bound)


def sandwich_check(M_low: StratumDescriptor, M: StratumDescriptor,
                   M_dual_high: StratumDescriptor, R=None) -> bool:
    """Return ``M_low <= M <= J_{R*}(M_dual_high)``.

    ``M_low`` and ``M`` are primal strata (truth and estimate), ``M_dual_high``
    is the dual stratum of the certificate. When a regularizer is given, the
    descriptors must be of the kind it produces.
    """
    if R is not None and any(D.kind != R.stratum_kind for D in (M_low, M, M_dual_high)):
        raise StratumMismatch(f"descriptor kind does not match regularizer {R!r}")
    if M_low.side != PRIMAL or M.side != PRIMAL or M_dual_high.side != DUAL:
        raise StratumMismatch("sandwich_check expects (primal, primal, dual)")
    return leq(M_low, M) and leq(M, mirror_map_inverse(M_dual_high))
