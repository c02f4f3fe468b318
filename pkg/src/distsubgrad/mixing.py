"""Doubly stochastic weight matrices, transition products and the geometric-rate certificate."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .topology import EdgeSet, TopologyError, TopologySchedule, degrees, is_symmetric

RULES = ("metropolis", "equal_neighbor", "explicit")
TOL = 1e-12
ETA_CAP = 0.5


class MixingError(ValueError):
    """A weight matrix violates one of the admissibility clauses."""


def metropolis_weights(edges: EdgeSet, m: int) -> np.ndarray:
    """Metropolis-Hastings weights ``1 / (1 + max(d_i, d_j))`` on each undirected link."""
    if not is_symmetric(edges):
        raise MixingError("metropolis weights need a symmetric (undirected) edge set")
    d = degrees(edges, m)
    A = np.zeros((m, m))
    for j, i in edges:
        if i != j:
            A[i, j] = 1.0 / (1.0 + max(d[i], d[j]))
    A[np.diag_indices(m)] = 1.0 - A.sum(axis=1)
    return A


def equal_neighbor_weights(edges: EdgeSet, m: int) -> np.ndarray:
    """Uniform weight ``1 / (1 + d_max)`` per link, remainder on the diagonal."""
    if not is_symmetric(edges):
        raise MixingError("equal-neighbor weights need a symmetric (undirected) edge set")
    d = degrees(edges, m)
    w = 1.0 / (1.0 + max(d, default=0))
    A = np.zeros((m, m))
    for j, i in edges:
        if i != j:
            A[i, j] = w
    A[np.diag_indices(m)] = 1.0 - A.sum(axis=1)
    return A


def check_mixing_matrix(A: np.ndarray, edges: EdgeSet | None = None, eta: float | None = None,
                        tol: float = TOL) -> None:
    """Raise :class:`MixingError` naming the first violated clause."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if A.ndim != 2 or A.shape != (m, m):
        raise MixingError(f"weight matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise MixingError("weight matrix has non-finite entries")
    if np.any(A < -tol):
        raise MixingError("nonnegativity: negative weight entries")
    if edges is not None:
        for i in range(m):
            for j in range(m):
                if (j, i) not in edges and abs(A[i, j]) > tol:
                    raise MixingError(f"support: a[{i},{j}] = {A[i, j]:g} but {j} is not a neighbor of {i}")
    if np.max(np.abs(A.sum(axis=1) - 1.0)) > tol:
        raise MixingError("row sums: every row must sum to 1")
    if eta is not None and edges is not None:
        for j, i in edges:
            if A[i, j] < eta - tol:
                raise MixingError(f"weight floor: a[{i},{j}] = {A[i, j]:g} below eta = {eta:g}")
    if np.max(np.abs(A.sum(axis=0) - 1.0)) > tol:
        raise MixingError("column sums: every column must sum to 1 (double stochasticity)")


def min_positive(A: np.ndarray) -> float:
    pos = A[A > TOL]
    return float(pos.min()) if pos.size else 1.0


@dataclass
class WeightSchedule:
    """Produces ``A(k)`` for each iteration of a topology schedule.

    ``explicit`` schedules cycle through ``matrices`` (``A(k) = matrices[(k-1) % len]``)
    and are validated against the topology at construction.
    """

    topology: TopologySchedule
    rule: str = "metropolis"
    matrices: Sequence[np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.rule not in RULES:
            raise MixingError(f"unknown weight rule {self.rule!r}; expected one of {RULES}")
        if self.rule == "explicit":
            if not self.matrices:
                raise MixingError("explicit weight rule needs at least one matrix")
            self.matrices = [np.asarray(M, dtype=float) for M in self.matrices]
            for idx, M in enumerate(self.matrices):
                if M.shape != (self.m, self.m):
                    raise MixingError(f"matrix {idx} has shape {M.shape}, expected {(self.m, self.m)}")
                k = idx + 1
                edges = self.topology.edges(k) if self.topology.kind != "random" else None
                try:
                    check_mixing_matrix(M, edges)
                except MixingError as exc:
                    raise MixingError(f"matrix {idx}: {exc}") from None
        elif self.topology.kind != "random":
            for k in range(1, len(self.topology.pattern) + 1):
                self.matrix(k)

    @property
    def m(self) -> int:
        return self.topology.m

    def matrix(self, k: int) -> np.ndarray:
        if self.rule == "explicit":
            return self.matrices[(k - 1) % len(self.matrices)]
        edges = self.topology.edges(k)
        A = self._cache.get(edges)
        if A is None:
            build = metropolis_weights if self.rule == "metropolis" else equal_neighbor_weights
            A = build(edges, self.m)
            A.setflags(write=False)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[edges] = A
        return A

    def is_static(self) -> bool:
        if self.rule == "explicit":
            return len(self.matrices) == 1
        return self.topology.kind == "static"

    def period(self) -> int | None:
        if self.rule == "explicit":
            return len(self.matrices) if self.topology.kind != "random" else None
        return self.topology.period

    def eta(self, horizon: int = 1) -> float:
        """Minimum positive weight over the schedule (exact for static and periodic kinds).

        Capped at 1/2: identity matrices (``m = 1`` or no links) satisfy any floor below 1.
        """
        p = self.period()
        span = range(1, (p if p is not None else max(horizon, 1)) + 1)
        return min(ETA_CAP, min(min_positive(self.matrix(k)) for k in span))

    def validate(self, horizon: int, eta: float | None = None) -> None:
        p = self.period()
        span = range(1, (p if p is not None else horizon) + 1)
        for k in span:
            try:
                check_mixing_matrix(self.matrix(k), self.topology.edges(k), eta)
            except MixingError as exc:
                raise MixingError(f"A({k}): {exc}") from None


def phi_product(matrices: Sequence[np.ndarray], k: int, s: int) -> np.ndarray:
    """``A(k) A(k-1) ... A(s+1)`` where ``matrices[t-1]`` holds ``A(t)``.

    ``k == s`` yields the identity.
    """
    if k < s:
        raise ValueError("phi_product needs k >= s")
    mats = [np.asarray(M, dtype=float) for M in matrices]
    if not mats:
        raise ValueError("no matrices given")
    m = mats[0].shape[0]
    if any(M.shape != (m, m) for M in mats):
        raise ValueError("dimension mismatch among weight matrices")
    if k > len(mats):
        raise ValueError(f"need A({k}) but only {len(mats)} matrices supplied")
    P = np.eye(m)
    for t in range(s + 1, k + 1):
        P = mats[t - 1] @ P
    return P


@dataclass(frozen=True)
class RateCertificate:
    theta: float
    beta: float


def rate_certificate(m: int, eta: float, Q: int) -> RateCertificate:
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    base = 1.0 - eta / (4.0 * m * m)
    return RateCertificate(theta=base ** -2.0, beta=base ** (1.0 / Q))


@dataclass
class GeometricRateReport:
    theta: float
    beta: float
    eta: float
    worst_ratio: float
    horizon: int
    s: int
    violations: list[int] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def verify_geometric_rate(weights: WeightSchedule, s: int, horizon: int, eta: float | None = None,
                          Q: int | None = None) -> GeometricRateReport:
    """Check ``max_ij |Phi(k,s)_ij - 1/m| <= theta beta^(k-s)`` for every ``k`` in ``(s, horizon]``."""
    if horizon <= s:
        raise ValueError("horizon must exceed s")
    m = weights.m
    Q = weights.topology.Q if Q is None else Q
    bad = weights.topology.verify(horizon) if weights.topology.kind == "random" else []
    if bad:
        raise TopologyError(f"connectivity window fails at k={bad[0]}")
    weights.validate(horizon)
    eta = weights.eta(horizon) if eta is None else eta
    cert = rate_certificate(m, eta, Q)
    P = np.eye(m)
    worst = 0.0
    violations = []
    for k in range(s + 1, horizon + 1):
        P = weights.matrix(k) @ P
        dev = float(np.max(np.abs(P - 1.0 / m)))
        bound = cert.theta * cert.beta ** (k - s)
        ratio = dev / bound
        worst = max(worst, ratio)
        if dev > bound:
            violations.append(k)
    return GeometricRateReport(cert.theta, cert.beta, eta, worst, horizon, s, violations)
