"""Subgradient error models, stepsize schedules, stochastic-approximation
estimators and numeric checks for convolution-type scalar sequences.

Random draws are keyed, not streamed: the draw for ``(seed, replica, agent, k)``
comes from a generator seeded with ``SeedSequence(seed, spawn_key=(replica,
agent, chunk))`` where ``chunk = (k - 1) // CHUNK``.  Changing the number of
agents or the horizon therefore never perturbs another agent's errors.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

CHUNK = 1024
NOISE_KINDS = ("none", "gaussian", "uniform", "biased")
STEPSIZE_KINDS = ("constant", "harmonic", "power")


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _per_agent(value, m: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(m, float(arr))
    if arr.shape != (m,):
        raise ValueError(f"{name} must be a scalar or have one entry per agent ({m})")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


# ---------------------------------------------------------------- noise


@dataclass
class NoiseModel:
    """Additive subgradient errors ``eps_{i,k}``.

    kinds
      ``none``      zero errors
      ``gaussian``  ``N(0, sigma_i^2 I_n)``
      ``uniform``   uniform on the ball of radius ``radius_i``
      ``biased``    ``b_i * k^(-bias_decay)`` plus ``N(0, sigma_i^2 I_n)``
    """

    kind: str
    m: int
    n: int
    sigma: np.ndarray | float = 0.0
    radius: np.ndarray | float = 0.0
    bias: np.ndarray | float = 0.0
    bias_decay: float = 0.0
    seed: int = 0
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        self.sigma = _per_agent(self.sigma, self.m, "sigma")
        self.radius = _per_agent(self.radius, self.m, "radius")
        b = np.asarray(self.bias, dtype=float)
        if b.ndim == 0:
            b = np.full((self.m, self.n), float(b))
        elif b.shape == (self.m,):
            b = np.repeat(b[:, None], self.n, axis=1)
        if b.shape != (self.m, self.n):
            raise ValueError(f"bias must be scalar, per-agent, or shape {(self.m, self.n)}")
        self.bias = b
        if self.bias_decay < 0:
            raise ValueError("bias_decay must be nonnegative")

    @classmethod
    def none(cls, m, n):
        return cls("none", m, n)

    @property
    def is_zero(self) -> bool:
        if self.kind == "none":
            return True
        if self.kind == "gaussian":
            return not np.any(self.sigma)
        if self.kind == "uniform":
            return not np.any(self.radius)
        return not np.any(self.sigma) and not np.any(self.bias)

    def nu_bar(self) -> np.ndarray:
        """Declared root-mean-square bounds, ``E||eps_i||^2 <= nu_bar_i^2``."""
        n = self.n
        if self.kind == "none":
            return np.zeros(self.m)
        if self.kind == "gaussian":
            return self.sigma * math.sqrt(n)
        if self.kind == "uniform":
            return self.radius.copy()
        return np.sqrt(np.sum(self.bias ** 2, axis=1) + n * self.sigma ** 2)

    def mu_bar(self) -> np.ndarray:
        """``limsup ||E eps_{i,k}||``."""
        if self.kind != "biased" or self.bias_decay > 0:
            return np.zeros(self.m)
        return np.linalg.norm(self.bias, axis=1)

    def mean(self, k: int) -> np.ndarray:
        """``E eps_{.,k}`` as an ``(m, n)`` array."""
        if self.kind != "biased":
            return np.zeros((self.m, self.n))
        return self.bias * float(k) ** (-self.bias_decay)

    def _standard(self, replica: int, agent: int, chunk: int) -> np.ndarray:
        key = (replica, agent, chunk)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        rng = keyed_rng(self.seed, replica, agent, chunk)
        z = rng.standard_normal((CHUNK, self.n))
        if self.kind == "uniform":
            u = rng.random(CHUNK)
            nrm = np.linalg.norm(z, axis=1)
            nrm[nrm == 0] = 1.0
            z = z / nrm[:, None] * (u ** (1.0 / self.n))[:, None]
        self._cache[key] = z
        if len(self._cache) > 512:
            self._cache.popitem(last=False)
        return z

    def chunk(self, c: int, replicas: Sequence[int] = (0,)) -> np.ndarray:
        """Errors for ``k = c*CHUNK + 1 .. (c+1)*CHUNK`` as ``(CHUNK, R, m, n)``."""
        R = len(replicas)
        out = np.zeros((CHUNK, R, self.m, self.n))
        if self.is_zero:
            return out
        scale = self.radius if self.kind == "uniform" else self.sigma
        for r_idx, r in enumerate(replicas):
            for i in range(self.m):
                if scale[i] != 0.0:
                    out[:, r_idx, i, :] = scale[i] * self._standard(r, i, c)
        if self.kind == "biased":
            ks = np.arange(c * CHUNK + 1, (c + 1) * CHUNK + 1, dtype=float)
            out += (ks ** (-self.bias_decay))[:, None, None, None] * self.bias
        return out

    def sample(self, agent: int, k: int, x=None, replica: int = 0) -> np.ndarray:
        """One draw of ``eps_{agent,k}``; ``x`` is accepted for interface symmetry and ignored."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.is_zero:
            return np.zeros(self.n)
        c, row = divmod(k - 1, CHUNK)
        scale = self.radius if self.kind == "uniform" else self.sigma
        eps = scale[agent] * self._standard(replica, agent, c)[row] if scale[agent] else np.zeros(self.n)
        if self.kind == "biased":
            eps = eps + self.bias[agent] * float(k) ** (-self.bias_decay)
        return eps


def sample_error(model: NoiseModel, agent: int, k: int, x=None) -> np.ndarray:
    return model.sample(agent, k, x)


# ---------------------------------------------------------------- stepsizes


@dataclass(frozen=True)
class StepsizeSchedule:
    """``constant``: ``a``; ``harmonic``: ``a/(k+b)``; ``power``: ``a/(k+b)^p``, ``p`` in (1/2, 1]."""

    kind: str = "harmonic"
    a: float = 1.0
    b: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in STEPSIZE_KINDS:
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if self.a < 0 or (self.a == 0 and self.kind != "constant"):
            raise ValueError("stepsize scale a must be positive (zero allowed for a constant stepsize)")
        if self.b < 0:
            raise ValueError("stepsize offset b must be nonnegative")
        if self.kind == "power" and not 0.5 < self.p <= 1.0:
            raise ValueError("power stepsize exponent must lie in (0.5, 1]")

    def __call__(self, k):
        return self.values(k) if np.ndim(k) else float(self.values(np.array([k]))[0])

    def values(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=float)
        if np.any(ks < 1):
            raise ValueError("stepsizes are indexed from k=1")
        if self.kind == "constant":
            return np.full(ks.shape, float(self.a))
        p = 1.0 if self.kind == "harmonic" else self.p
        return self.a / (ks + self.b) ** p

    @property
    def limit(self) -> float:
        return float(self.a) if self.kind == "constant" else 0.0

    @property
    def sums_diverge(self) -> bool:
        return self.a > 0

    @property
    def squares_summable(self) -> bool:
        return self.kind != "constant"


def stepsize(s: StepsizeSchedule, k: int) -> float:
    return s(k)


# ---------------------------------------------------------------- estimators


@dataclass
class RobbinsMonro:
    """Sampled-gradient estimator ``grad_g(x, r)`` with ``r ~ R``.

    ``sampler(rng, size)`` returns ``size`` independent samples of ``R``;
    ``mean_gradient(x)`` (optional) is ``E grad_g(x, R)`` and enables error reporting.
    """

    gradient: Callable
    sampler: Callable
    mean_gradient: Callable | None = None
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def draw(self, k: int, agent: int = 0):
        c, row = divmod(k - 1, CHUNK)
        key = (agent, c)
        block = self._cache.get(key)
        if block is None:
            if len(self._cache) > 64:
                self._cache.clear()
            block = self._cache[key] = self.sampler(keyed_rng(self.seed, agent, c), CHUNK)
        return block[row]

    def __call__(self, x, k: int, agent: int = 0):
        return self.gradient(x, self.draw(k, agent))

    def error(self, x, k: int, agent: int = 0):
        if self.mean_gradient is None:
            raise ValueError("error needs mean_gradient")
        return self(x, k, agent) - self.mean_gradient(x)


def rm_subgradient(est: RobbinsMonro, x, k: int, agent: int = 0):
    return est(x, k, agent)


@dataclass
class KieferWolfowitz:
    """Finite-difference estimator ``[G(x + beta_k) - G(x)] / beta_k`` for scalar ``x``.

    ``G(x) = value(x, r)`` with ``r = sampler(rng, x)`` a fresh sample of ``R(x)``;
    the two evaluations use independent samples.  The spacing is
    ``beta0 / k**spacing_power`` unless ``spacing`` is given.
    """

    value: Callable
    sampler: Callable | None = None
    beta0: float = 0.1
    spacing_power: float = 0.25
    spacing: Callable | None = None
    seed: int = 0

    def beta(self, k: int) -> float:
        if self.spacing is not None:
            return float(self.spacing(k))
        return self.beta0 / float(k) ** self.spacing_power

    def _sample_value(self, x, rng):
        r = None if self.sampler is None else self.sampler(rng, x)
        return self.value(x, r)

    def __call__(self, x: float, k: int, agent: int = 0, beta: float | None = None) -> float:
        b = self.beta(k) if beta is None else float(beta)
        if not b > 0:
            raise ValueError("finite-difference spacing must be positive")
        rng = keyed_rng(self.seed, agent, k)
        upper = self._sample_value(x + b, rng)
        lower = self._sample_value(x, rng)
        return (upper - lower) / b


def kw_subgradient(est: KieferWolfowitz, x: float, k: int, beta: float | None = None) -> float:
    return est(x, k, beta=beta)


# ---------------------------------------------------------------- scalar sequences


def convolution_sequence(gammas, beta: float) -> np.ndarray:
    """``s_k = sum_{l<=k} beta^(k-l) gamma_l`` for every ``k``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    return lfilter([1.0], [1.0, -beta], np.asarray(gammas, dtype=float))


@dataclass
class ConvolutionReport:
    final: float
    predicted: float | None
    error: float | None
    horizon: int


def convolution_limit_check(gammas, beta: float, limit: float | None = None) -> ConvolutionReport:
    """Compare the last convolution term with ``limit / (1 - beta)``."""
    s = convolution_sequence(gammas, beta)
    predicted = None if limit is None else limit / (1.0 - beta)
    err = None if predicted is None else abs(s[-1] - predicted)
    return ConvolutionReport(float(s[-1]), predicted, err, len(s))


@dataclass
class SummabilityReport:
    partial_sums: np.ndarray
    bound: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.partial_sums <= self.bound * (1 + 1e-12) + 1e-12))


def summable_convolution_check(gammas, beta: float) -> SummabilityReport:
    """Partial sums of the convolution sequence against ``sum(gamma) / (1 - beta)``."""
    g = np.asarray(gammas, dtype=float)
    if np.any(g < 0):
        raise ValueError("gammas must be nonnegative")
    s = convolution_sequence(g, beta)
    return SummabilityReport(np.cumsum(s), float(g.sum() / (1.0 - beta)))


@dataclass
class WeightedAverageReport:
    ratios: np.ndarray
    limsup_gamma: float
    tolerance: float

    @property
    def final(self) -> float:
        return float(self.ratios[-1])

    @property
    def holds(self) -> bool:
        return self.final <= self.limsup_gamma + self.tolerance


def weighted_average_limit_check(gammas, zetas, limsup_gamma: float | None = None,
                                 tolerance: float = 1e-2, tail: float = 0.1) -> WeightedAverageReport:
    """Running ratio ``sum gamma_k zeta_k / sum zeta_k``.

    Without a declared ``limsup_gamma`` the max over the last ``tail`` fraction
    of ``gammas`` stands in for it.
    """
    g = np.asarray(gammas, dtype=float)
    z = np.asarray(zetas, dtype=float)
    if np.any(z <= 0):
        raise ValueError("zetas must be positive")
    ratios = np.cumsum(g * z) / np.cumsum(z)
    if limsup_gamma is None:
        start = int(len(g) * (1.0 - tail))
        limsup_gamma = float(np.max(g[start:]))
    return WeightedAverageReport(ratios, float(limsup_gamma), tolerance)
