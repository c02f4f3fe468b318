"""Constraint sets with exact Euclidean projections and convex component functions.

All projections and oracles accept arrays whose last axis is the decision
vector, so a stack of agent iterates ``(..., n)`` is handled in one call.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np


class ProblemError(ValueError):
    pass


class NoUniformBound(ProblemError):
    """The subgradients of a component are unbounded over the set."""


# ---------------------------------------------------------------- sets


class ConvexSet:
    dim: int
    bounded: bool = True

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.linalg.norm(self.project(x) - x, axis=-1) <= tol))

    def diameter(self) -> float:
        """``max_{x,y in X} ||x - y||``."""
        return math.inf

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise ProblemError(f"{type(self).__name__} is unbounded")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise ProblemError(f"cannot sample uniformly from unbounded {type(self).__name__}")


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ProblemError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo.copy())
        object.__setattr__(self, "upper", hi.copy())

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def project(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def bounding_box(self):
        if not self.bounded:
            return super().bounding_box()
        return self.lower, self.upper

    def sample(self, rng, size):
        if not self.bounded:
            return super().sample(rng, size)
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def vertices(self):
        return np.array(np.meshgrid(*zip(self.lower, self.upper), indexing="ij")).reshape(self.dim, -1).T


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ProblemError("ball radius must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)).copy())

    @property
    def dim(self):
        return self.center.shape[0]

    def project(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
        return self.center + d * scale

    def diameter(self):
        return 2.0 * self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def sample(self, rng, size):
        g = rng.standard_normal((size, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.random((size, 1)) ** (1.0 / self.dim)
        return self.center + self.radius * u * g


@dataclass(frozen=True, eq=False)
class Simplex(ConvexSet):
    """Probability simplex ``{x >= 0, sum(x) = 1}``."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ProblemError("simplex dimension must be >= 1")

    def project(self, x):
        # sort-based projection, vectorized over leading axes
        x = np.asarray(x, dtype=float)
        u = -np.sort(-x, axis=-1)
        css = np.cumsum(u, axis=-1) - 1.0
        ind = np.arange(1, x.shape[-1] + 1)
        cond = u - css / ind > 0
        rho = x.shape[-1] - 1 - np.argmax(cond[..., ::-1], axis=-1)
        tau = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
        return np.maximum(x - tau, 0.0)

    def diameter(self):
        return math.sqrt(2.0) if self.dim > 1 else 0.0

    def bounding_box(self):
        return np.zeros(self.dim), np.ones(self.dim)

    def sample(self, rng, size):
        return rng.dirichlet(np.ones(self.dim), size=size)

    def vertices(self):
        return np.eye(self.dim)


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """``{x : normal . x <= offset}``."""

    normal: np.ndarray
    offset: float
    bounded = False

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.normal, dtype=float)).copy()
        if not np.any(a):
            raise ProblemError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", a)

    @property
    def dim(self):
        return self.normal.shape[0]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        excess = np.maximum(x @ self.normal - self.offset, 0.0)
        return x - (excess / (self.normal @ self.normal))[..., None] * self.normal


@dataclass(frozen=True, eq=False)
class WholeSpace(ConvexSet):
    dim: int
    bounded = False

    def project(self, x):
        return np.asarray(x, dtype=float)


def project(convex_set: ConvexSet, x) -> np.ndarray:
    return convex_set.project(np.asarray(x, dtype=float))


# ---------------------------------------------------------------- components


class Component:
    """Convex function with value and subgradient oracles.

    Oracles are vectorized over leading axes.  At kinks the subgradient of
    minimum norm is returned.
    """

    dim: int

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_bound(self, convex_set: ConvexSet) -> float | None:
        """Closed-form ``sup ||grad f(x)||`` over the set, or ``None`` if unknown."""
        return None


@dataclass(frozen=True, eq=False)
class WeightedQuadratic(Component):
    """``sum_d q_d (x_d - c_d)^2`` with ``q >= 0``."""

    center: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        q = np.broadcast_to(np.asarray(self.weights, dtype=float), c.shape).copy()
        if np.any(q < 0):
            raise ProblemError("quadratic weights must be nonnegative")
        object.__setattr__(self, "center", c.copy())
        object.__setattr__(self, "weights", q)

    @property
    def dim(self):
        return self.center.shape[0]

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return np.sum(self.weights * d * d, axis=-1)

    def subgradient(self, x):
        return 2.0 * self.weights * (np.asarray(x, dtype=float) - self.center)

    def exact_bound(self, s):
        q2 = 2.0 * self.weights
        if isinstance(s, Box) and s.bounded:
            far = np.maximum(np.abs(s.lower - self.center), np.abs(s.upper - self.center))
            return float(np.linalg.norm(q2 * far))
        if isinstance(s, Simplex):
            return float(np.max(np.linalg.norm(q2 * (s.vertices() - self.center), axis=1)))
        if isinstance(s, Ball):
            return float(q2.max() * (s.radius + np.linalg.norm(s.center - self.center)))
        if not np.any(self.weights):
            return 0.0
        raise NoUniformBound(f"no uniform bound: quadratic component over unbounded {type(s).__name__}")


def Quadratic(center) -> WeightedQuadratic:
    """``||x - c||^2``."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    return WeightedQuadratic(c, np.ones_like(c))


@dataclass(frozen=True, eq=False)
class AbsDeviation(Component):
    """``scale * ||x - c||_1``; subgradient ``scale * sign(x - c)`` (0 at ties)."""

    center: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)).copy())
        if self.scale < 0:
            raise ProblemError("scale must be nonnegative")

    @property
    def dim(self):
        return self.center.shape[0]

    def value(self, x):
        return self.scale * np.sum(np.abs(np.asarray(x, dtype=float) - self.center), axis=-1)

    def subgradient(self, x):
        return self.scale * np.sign(np.asarray(x, dtype=float) - self.center)

    def exact_bound(self, s):
        return self.scale * math.sqrt(self.dim)


@dataclass(frozen=True, eq=False)
class Hinge(Component):
    """``max(0, a . x + b)``; subgradient ``a`` on the active side, 0 at the kink."""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)).copy())

    @property
    def dim(self):
        return self.a.shape[0]

    def value(self, x):
        return np.maximum(0.0, np.asarray(x, dtype=float) @ self.a + self.b)

    def subgradient(self, x):
        active = (np.asarray(x, dtype=float) @ self.a + self.b) > 0
        return active[..., None] * self.a

    def exact_bound(self, s):
        return float(np.linalg.norm(self.a))


def subgradient(c: Component, x) -> np.ndarray:
    return c.subgradient(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class BoundEstimate:
    value: float
    approximate: bool


def subgradient_bound(c: Component, convex_set: ConvexSet, samples: int = 4096, seed: int = 0,
                      safety: float = 1.1) -> BoundEstimate:
    """``C`` with ``||grad f(x)|| <= C`` on the set; sampled sup times ``safety`` when no closed form."""
    exact = c.exact_bound(convex_set)
    if exact is not None:
        return BoundEstimate(float(exact), False)
    if not convex_set.bounded:
        raise NoUniformBound(f"no uniform bound: cannot sample unbounded {type(convex_set).__name__}")
    pts = convex_set.sample(np.random.default_rng(seed), samples)
    sup = float(np.max(np.linalg.norm(c.subgradient(pts), axis=-1)))
    return BoundEstimate(safety * sup, True)


# ---------------------------------------------------------------- problem


@dataclass
class Problem:
    """``minimize sum_i f_i(x) over X``; component ``i`` belongs to agent ``i``."""

    components: Sequence[Component]
    constraint: ConvexSet
    f_star: float | None = None
    x_star: np.ndarray | None = None
    declared_bounds: Sequence[float | None] | None = None
    _groups: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.components:
            raise ProblemError("problem needs at least one component")
        n = self.constraint.dim
        for idx, c in enumerate(self.components):
            if c.dim != n:
                raise ProblemError(f"component {idx} has dimension {c.dim}, set has {n}")
        if self.x_star is not None:
            self.x_star = np.atleast_1d(np.asarray(self.x_star, dtype=float))
            if not self.constraint.contains(self.x_star, 1e-9):
                raise ProblemError("declared x* is not in X")
            if self.f_star is not None and abs(self.value(self.x_star) - self.f_star) > 1e-9:
                raise ProblemError(f"declared f* = {self.f_star} but f(x*) = {self.value(self.x_star)}")
        self._groups = _group_components(self.components)

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.constraint.dim

    def value(self, x) -> np.ndarray | float:
        """``f(x) = sum_i f_i(x)``, vectorized over leading axes."""
        x = np.asarray(x, dtype=float)
        total = sum(c.value(x) for c in self.components)
        return float(total) if np.ndim(total) == 0 else total

    def subgradients(self, V: np.ndarray) -> np.ndarray:
        """Row ``i`` of the agent axis (``-2``) gets agent ``i``'s own subgradient."""
        if len(self._groups) == 1:
            return self._groups[0][1](V)
        out = np.empty_like(V)
        for idx, batch in self._groups:
            out[..., idx, :] = batch(V[..., idx, :])
        return out

    def bounds(self) -> np.ndarray:
        """Per-agent subgradient bounds ``C_i`` (declared values take precedence)."""
        out = []
        for idx, c in enumerate(self.components):
            declared = None if self.declared_bounds is None else self.declared_bounds[idx]
            out.append(declared if declared is not None else subgradient_bound(c, self.constraint).value)
        return np.array(out, dtype=float)


def _group_components(components):
    """Stack same-type built-ins so one vectorized call serves many agents."""
    groups: dict = {}
    for idx, c in enumerate(components):
        groups.setdefault(type(c), []).append(idx)
    out = []
    for typ, idx in groups.items():
        idx = np.array(idx)
        comps = [components[i] for i in idx]
        if typ is WeightedQuadratic:
            C = np.stack([c.center for c in comps])
            Wt = 2.0 * np.stack([c.weights for c in comps])
            out.append((idx, lambda V, C=C, Wt=Wt: Wt * (V - C)))
        elif typ is AbsDeviation:
            C = np.stack([c.center for c in comps])
            S = np.array([c.scale for c in comps])[:, None]
            out.append((idx, lambda V, C=C, S=S: S * np.sign(V - C)))
        elif typ is Hinge:
            Av = np.stack([c.a for c in comps])
            B = np.array([c.b for c in comps])
            out.append((idx, lambda V, Av=Av, B=B: ((np.sum(V * Av, axis=-1) + B) > 0)[..., None] * Av))
        else:
            out.append((idx, lambda V, comps=comps: np.stack(
                [c.subgradient(V[..., t, :]) for t, c in enumerate(comps)], axis=-2)))
    return out


def solve_reference(p: Problem, tolerance: float = 1e-9, points_per_axis: int = 21,
                    max_rounds: int = 200) -> tuple[float, np.ndarray]:
    """Brute-force grid search with zooming; candidate points are projected into X.

    Intended for ``n <= 3``.  Returns ``(f*, x*)``.
    """
    if not p.constraint.bounded:
        raise ProblemError("reference solver needs a bounded constraint set")
    lo, hi = (np.array(a, dtype=float) for a in p.constraint.bounding_box())
    n = p.dim
    best_x, best_f = None, math.inf
    for _ in range(max_rounds):
        axes = [np.linspace(lo[d], hi[d], points_per_axis) for d in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        cand = p.constraint.project(grid)
        vals = p.value(cand)
        t = int(np.argmin(vals))
        if vals[t] <= best_f:
            best_f, best_x = float(vals[t]), cand[t]
        step = (hi - lo) / (points_per_axis - 1)
        if np.max(step) < tolerance:
            break
        lo, hi = best_x - 2 * step, best_x + 2 * step
    return best_f, best_x
