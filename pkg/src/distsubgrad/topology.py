"""Time-varying communication graphs and the Q-window connectivity check.

An edge ``(j, i)`` means agent ``j``'s iterate reaches agent ``i``, so the
neighbor set of ``i`` at iteration ``k`` is ``{j : (j, i) in E_k}``.  Agents
are 0-indexed.  Every produced edge set contains all self-loops.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

EdgeSet = frozenset  # frozenset[tuple[int, int]]

KINDS = ("static", "periodic", "random")


class TopologyError(ValueError):
    """Raised for malformed schedules or failed connectivity requirements."""


def _normalize(edges: Iterable[Sequence[int]], m: int, symmetric: bool) -> EdgeSet:
    out = set()
    for e in edges:
        j, i = (int(e[0]), int(e[1]))
        if not (0 <= j < m and 0 <= i < m):
            raise TopologyError(f"edge {(j, i)} out of range for m={m}")
        out.add((j, i))
        if symmetric:
            out.add((i, j))
    out.update((i, i) for i in range(m))
    return frozenset(out)


def complete_edges(m: int) -> list[tuple[int, int]]:
    return [(j, i) for j in range(m) for i in range(m) if i != j]


def path_edges(m: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(m - 1)]


def ring_edges(m: int) -> list[tuple[int, int]]:
    if m < 3:
        return path_edges(m)
    return [(i, (i + 1) % m) for i in range(m)]


def star_edges(m: int) -> list[tuple[int, int]]:
    return [(0, i) for i in range(1, m)]


PRESETS = {
    "complete": complete_edges,
    "path": path_edges,
    "ring": ring_edges,
    "star": star_edges,
    "empty": lambda m: [],
}


def preset_edges(name: str, m: int) -> list[tuple[int, int]]:
    try:
        return PRESETS[name](m)
    except KeyError:
        raise TopologyError(f"unknown graph preset {name!r}; expected one of {sorted(PRESETS)}") from None


def is_strongly_connected(edges: Iterable[tuple[int, int]], m: int) -> bool:
    """Forward and backward reachability from node 0 must both cover all nodes."""
    if m <= 1:
        return True
    fwd: list[list[int]] = [[] for _ in range(m)]
    bwd: list[list[int]] = [[] for _ in range(m)]
    for j, i in edges:
        if i != j:
            fwd[j].append(i)
            bwd[i].append(j)
    for adj in (fwd, bwd):
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != m:
            return False
    return True


@dataclass(frozen=True)
class TopologySchedule:
    """Generator of edge sets ``E_k`` for ``k >= 1``.

    Build instances through :meth:`static`, :meth:`periodic` or :meth:`random`.
    A random schedule draws each candidate link independently with
    probability ``probability`` at every iteration; the draw for iteration
    ``k`` depends only on ``(seed, k)``.
    """

    m: int
    Q: int
    kind: str
    pattern: tuple[EdgeSet, ...] = ()
    candidates: tuple[tuple[int, int], ...] = ()
    probability: float = 1.0
    seed: int = 0
    symmetric: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.m < 1:
            raise TopologyError("m must be >= 1")
        if self.Q < 1:
            raise TopologyError("Q must be >= 1")
        if self.kind not in KINDS:
            raise TopologyError(f"unknown topology kind {self.kind!r}")
        if self.kind == "random" and not 0.0 <= self.probability <= 1.0:
            raise TopologyError("activation probability must lie in [0, 1]")

    @classmethod
    def static(cls, m, edges, Q=1, symmetric=False, require_connected=True):
        sched = cls(m=m, Q=Q, kind="static", pattern=(_normalize(edges, m, symmetric),), symmetric=symmetric)
        sched._check_construction(require_connected)
        return sched

    @classmethod
    def periodic(cls, m, edge_lists, Q=None, symmetric=False, require_connected=True):
        pattern = tuple(_normalize(e, m, symmetric) for e in edge_lists)
        if not pattern:
            raise TopologyError("periodic schedule needs at least one edge set")
        sched = cls(m=m, Q=len(pattern) if Q is None else Q, kind="periodic", pattern=pattern, symmetric=symmetric)
        sched._check_construction(require_connected)
        return sched

    @classmethod
    def random(cls, m, probability, Q=1, seed=0, candidates=None, symmetric=True):
        if candidates is None:
            candidates = [(j, i) for j in range(m) for i in range(j + 1, m)] if symmetric else complete_edges(m)
        cands = tuple(sorted({(int(j), int(i)) for j, i in candidates if j != i}))
        return cls(m=m, Q=Q, kind="random", candidates=cands, probability=float(probability),
                   seed=int(seed), symmetric=symmetric)

    def _check_construction(self, require_connected):
        if require_connected:
            bad = self.verify(max(self.Q, len(self.pattern) + self.Q - 1))
            if bad:
                raise TopologyError(f"{self.Q}-window union graph not strongly connected starting at k={bad[0]}")

    @property
    def period(self) -> int | None:
        return len(self.pattern) if self.kind != "random" else None

    def edges(self, k: int) -> EdgeSet:
        if k < 1:
            raise TopologyError("iterations are numbered from k=1")
        if self.kind != "random":
            return self.pattern[(k - 1) % len(self.pattern)]
        hit = self._cache.get(k)
        if hit is None:
            rng = np.random.default_rng([self.seed, k])
            mask = rng.random(len(self.candidates)) < self.probability
            chosen = [c for c, on in zip(self.candidates, mask) if on]
            hit = _normalize(chosen, self.m, self.symmetric)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[k] = hit
        return hit

    def neighbors(self, k: int, i: int) -> set[int]:
        return {j for j, t in self.edges(k) if t == i}

    def is_q_connected(self, k_start: int, Q: int | None = None) -> bool:
        Q = self.Q if Q is None else Q
        if Q < 1:
            raise TopologyError("Q must be >= 1")
        union = set()
        for l in range(1, Q + 1):
            union |= self.edges(k_start + l)
        return is_strongly_connected(union, self.m)

    def verify(self, horizon: int, Q: int | None = None) -> list[int]:
        """Return every window start ``k`` in ``[0, horizon - Q]`` that fails."""
        Q = self.Q if Q is None else Q
        if horizon < Q:
            raise TopologyError(f"horizon {horizon} shorter than window Q={Q}")
        starts = range(0, horizon - Q + 1)
        if self.kind == "random":
            return [k for k in starts if not self.is_q_connected(k, Q)]
        period = len(self.pattern)
        ok = {r: self.is_q_connected(r, Q) for r in range(min(period, len(starts)))}
        return [k for k in starts if not ok[k % period]]


def neighbors(schedule: TopologySchedule, k: int, i: int) -> set[int]:
    return schedule.neighbors(k, i)


def is_q_connected(schedule: TopologySchedule, k_start: int, Q: int) -> bool:
    return schedule.is_q_connected(k_start, Q)


def verify_schedule(schedule: TopologySchedule, horizon: int) -> list[int]:
    return schedule.verify(horizon)


@lru_cache(maxsize=None)
def degrees(edges: EdgeSet, m: int) -> tuple[int, ...]:
    """Out-degree of each agent, ignoring self-loops."""
    d = [0] * m
    for j, i in edges:
        if i != j:
            d[j] += 1
    return tuple(d)


def is_symmetric(edges: EdgeSet) -> bool:
    return all((i, j) in edges for j, i in edges)


def union_edges(sets: Iterable[EdgeSet]) -> EdgeSet:
    return frozenset(itertools.chain.from_iterable(sets))
