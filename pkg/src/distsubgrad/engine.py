"""Synchronous simulation of consensus + projected stochastic subgradient steps.

One iteration, for every agent ``i`` and ``k -> k+1``::

    v_{i,k}   = sum_j a_ij(k+1) w_{j,k}
    w_{i,k+1} = P_X[ v_{i,k} - alpha_{k+1} (grad f_i(v_{i,k}) + eps_{i,k+1}) ]

Replicas are simulated together along a leading batch axis; replica ``r``
draws its errors from the key ``(seed, r, agent, chunk)``, so a batch of
replicas gives the same numbers as running each one alone.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .mixing import MixingError, WeightSchedule, rate_certificate
from .problem import Problem
from .stochastic import CHUNK, NoiseModel, StepsizeSchedule, keyed_rng

log = logging.getLogger(__name__)

METRICS = ("disagreement", "f_w", "f_z", "p_norm", "eps_norm", "f_y", "z")
INIT_KEY = 2**31 - 1


class SimulationError(RuntimeError):
    pass


class AssumptionViolation(RuntimeError):
    """Connectivity or weight conditions failed under the ``abort`` policy."""

    def __init__(self, message, windows=()):
        super().__init__(message)
        self.windows = list(windows)


@dataclass
class SimConfig:
    problem: Problem
    weights: WeightSchedule
    noise: NoiseModel
    stepsize: StepsizeSchedule
    horizon: int
    initial: np.ndarray | None = None
    init_seed: int = 0
    policy: str = "abort"
    trace_stride: int = 1
    record_states: bool = False
    check_displacement: bool = False

    def __post_init__(self):
        p = self.problem
        if self.weights.m != p.m:
            raise ValueError(f"topology has {self.weights.m} agents, problem has {p.m} components")
        if (self.noise.m, self.noise.n) != (p.m, p.dim):
            raise ValueError("noise model shape does not match the problem")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.policy not in ("abort", "warn", "off"):
            raise ValueError("policy must be abort, warn or off")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if self.initial is None:
            self.initial = p.constraint.sample(keyed_rng(self.init_seed, INIT_KEY), p.m)
        self.initial = np.array(self.initial, dtype=float).reshape(p.m, p.dim)
        if np.max(np.linalg.norm(p.constraint.project(self.initial) - self.initial, axis=-1)) > 1e-12:
            raise ValueError("initial iterates must lie in X")

    @property
    def m(self) -> int:
        return self.problem.m

    @property
    def n(self) -> int:
        return self.problem.dim

    @property
    def seed(self) -> int:
        return self.noise.seed


@dataclass
class SimState:
    k: int
    w: np.ndarray
    v: np.ndarray | None = None

    @property
    def y(self) -> np.ndarray:
        return self.w.mean(axis=-2)


def initial_state(config: SimConfig) -> SimState:
    return SimState(0, config.initial.copy())


def mix(state: SimState, A: np.ndarray) -> np.ndarray:
    """``v_i = sum_j a_ij w_j`` for every agent."""
    return np.asarray(A) @ state.w


def disagreement(state: SimState) -> np.ndarray:
    """``||y_k - w_{j,k}||`` for every agent ``j``."""
    return np.linalg.norm(state.w - state.y[..., None, :], axis=-1)


def _update(problem, v, alpha, eps):
    return problem.constraint.project(v - alpha * (problem.subgradients(v) + eps))


def step(config: SimConfig, state: SimState, eps: np.ndarray | None = None) -> SimState:
    """Advance one synchronous round; errors are drawn from the keyed noise stream unless given."""
    k1 = state.k + 1
    A = config.weights.matrix(k1)
    v = mix(state, A)
    if eps is None:
        eps = np.stack([config.noise.sample(i, k1) for i in range(config.m)])
    w = _update(config.problem, v, config.stepsize(k1), eps)
    if not np.all(np.isfinite(w)):
        raise SimulationError(f"non-finite iterate at k={k1}: {w!r}")
    return SimState(k1, w, v)


# ---------------------------------------------------------------- traces


@dataclass
class RunTrace:
    """Per-iteration diagnostics with a leading replica axis.

    Row ``0`` holds ``k = 0``; ``alpha``, ``z``, ``f_z``, ``p_norm`` and
    ``eps_norm`` are ``nan`` there.  Only every ``trace_stride``-th iteration
    (and the last) is recorded.
    """

    ks: np.ndarray
    alpha: np.ndarray
    disagreement: np.ndarray
    f_y: np.ndarray
    f_w: np.ndarray
    f_z: np.ndarray
    p_norm: np.ndarray
    eps_norm: np.ndarray
    z: np.ndarray
    w0: np.ndarray
    v1: np.ndarray
    w_final: np.ndarray
    replicas: list
    seed: int
    horizon: int
    displacement_violations: int = 0
    states: dict | None = None
    wall_time: float = 0.0

    @property
    def n_replicas(self) -> int:
        return len(self.replicas)

    @property
    def m(self) -> int:
        return self.w0.shape[0]

    def replica(self, idx: int) -> RunTrace:
        one = slice(idx, idx + 1)
        states = None
        if self.states is not None:
            states = {k: v[:, one] for k, v in self.states.items()}
        return RunTrace(self.ks, self.alpha, self.disagreement[:, one], self.f_y[:, one], self.f_w[:, one],
                        self.f_z[:, one], self.p_norm[:, one], self.eps_norm[:, one], self.z[:, one],
                        self.w0, self.v1[one], self.w_final[one], [self.replicas[idx]], self.seed,
                        self.horizon, states=states, wall_time=self.wall_time)

    def aggregate(self) -> AggregatedTrace:
        mean, se = {}, {}
        R = self.n_replicas
        for name in METRICS:
            mean[name], se[name] = replica_stats(getattr(self, name), axis=1)
        return AggregatedTrace(self.ks, self.alpha, mean, se, R, self)


def replica_stats(arr: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error across replicas; exactly ``(x, 0)`` when all replicas agree."""
    first = np.take(arr, [0], axis=axis)
    dev = arr - first
    R = arr.shape[axis]
    mean = np.squeeze(first, axis=axis) + dev.mean(axis=axis)
    if R == 1:
        return mean, np.zeros_like(mean)
    return mean, dev.std(axis=axis, ddof=1) / math.sqrt(R)


@dataclass
class AggregatedTrace:
    ks: np.ndarray
    alpha: np.ndarray
    mean: dict
    se: dict
    n_replicas: int
    trace: RunTrace = field(repr=False)

    @property
    def m(self) -> int:
        return self.trace.m

    def tail_mask(self, fraction: float = 0.1) -> np.ndarray:
        K = self.ks[-1]
        return self.ks >= K - fraction * K

    def tail_mean(self, name: str, fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """Mean over the final window of the replica mean, with a standard error across replicas."""
        mask = self.tail_mask(fraction)
        return replica_stats(getattr(self.trace, name)[mask].mean(axis=0))


def _columns(m: int, n: int, metrics) -> list[str]:
    cols = ["k", "alpha"]
    for name in metrics:
        if name == "f_y":
            cols += ["f_y", "f_y_se"]
        elif name == "z":
            cols += [f"z_{j}_{d}" for j in range(m) for d in range(n)]
            cols += [f"z_se_{j}_{d}" for j in range(m) for d in range(n)]
        else:
            cols += [f"{name}_{j}" for j in range(m)]
            cols += [f"{name}_se_{j}" for j in range(m)]
    return cols


def write_csv(agg: AggregatedTrace, path, metrics=METRICS, include_initial: bool = False) -> None:
    """One row per recorded iteration ``k >= 1`` (plus ``k = 0`` if asked): ``k, alpha``, then
    per-agent groups (means, then standard errors)."""
    m, n = agg.trace.w0.shape
    metrics = [name for name in METRICS if name in metrics]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(_columns(m, n, metrics))
        for row, k in enumerate(agg.ks):
            if k == 0 and not include_initial:
                continue
            vals = [int(k), agg.alpha[row]]
            for name in metrics:
                mu, se = agg.mean[name][row], agg.se[name][row]
                vals += list(np.ravel(mu)) + list(np.ravel(se))
            out.writerow([vals[0]] + [repr(float(x)) for x in vals[1:]])


# ---------------------------------------------------------------- simulation


def check_assumptions(config: SimConfig) -> list[int]:
    """Verify connectivity windows and weight admissibility over the horizon, per the policy."""
    if config.policy == "off":
        return []
    topo = config.weights.topology
    bad = topo.verify(max(config.horizon, topo.Q)) if config.horizon >= topo.Q or topo.kind != "random" else []
    problems = []
    if bad:
        problems.append(f"{topo.Q}-window union graph not strongly connected at k={bad[:10]}")
    try:
        config.weights.validate(config.horizon)
    except MixingError as exc:
        problems.append(str(exc))
    if problems:
        msg = "; ".join(problems)
        if config.policy == "abort":
            raise AssumptionViolation(msg, bad)
        warnings.warn(msg, stacklevel=3)
    return bad


def _simulate(config: SimConfig, replicas: list[int]) -> RunTrace:
    started = time.perf_counter()
    p, noise = config.problem, config.noise
    m, n, K, R = config.m, config.n, config.horizon, len(replicas)
    alphas = config.stepsize.values(np.arange(1, K + 2))  # alphas[k-1] = alpha_k
    rec = np.unique(np.r_[np.arange(0, K + 1, config.trace_stride), K])
    rows = len(rec)

    tr = dict(
        disagreement=np.empty((rows, R, m)), f_y=np.empty((rows, R)), f_w=np.empty((rows, R, m)),
        f_z=np.full((rows, R, m), np.nan), p_norm=np.full((rows, R, m), np.nan),
        eps_norm=np.full((rows, R, m), np.nan), z=np.full((rows, R, m, n), np.nan),
    )
    w = np.broadcast_to(config.initial, (R, m, n)).copy()
    y0 = w.mean(axis=1)
    tr["disagreement"][0] = np.linalg.norm(w - y0[:, None], axis=-1)
    tr["f_y"][0] = p.value(y0)
    tr["f_w"][0] = p.value(w)

    C = p.bounds() if config.check_displacement else None
    violations = 0
    states = None
    if config.record_states:
        states = dict(w=np.empty((K + 1, R, m, n)), v=np.empty((K + 1, R, m, n)), eps=np.empty((K, R, m, n)))
        states["w"][0] = w
    v1 = None
    sum_alpha = 0.0
    sum_aw = np.zeros((R, m, n))
    static_A = config.weights.matrix(1) if config.weights.is_static() else None
    project = p.constraint.project
    subgrad = p.subgradients
    quiet = noise.is_zero

    for c in range(math.ceil(K / CHUNK)):
        k_lo = c * CHUNK + 1
        L = min(CHUNK, K - k_lo + 1)
        eps = noise.chunk(c, replicas)[:L]
        W = np.empty((L, R, m, n))
        V = np.empty((L, R, m, n))
        for t in range(L):
            k1 = k_lo + t
            A = static_A if static_A is not None else config.weights.matrix(k1)
            v = A @ w
            g = subgrad(v) if quiet else subgrad(v) + eps[t]
            w = project(v - alphas[k1 - 1] * g)
            W[t] = w
            V[t] = v
        if not np.all(np.isfinite(W)):
            t_bad, r_bad = np.argwhere(~np.isfinite(W))[0][:2]
            r = replicas[r_bad]
            raise SimulationError(
                f"non-finite iterate at k={k_lo + t_bad} in replica {r} (seed {noise.seed}, key {r})")
        ks = np.arange(k_lo, k_lo + L)
        if k_lo <= 2 <= k_lo + L - 1:
            v1 = V[2 - k_lo].copy()
        if states is not None:
            states["w"][ks] = W
            states["v"][ks - 1] = V
            states["eps"][ks - 1] = eps

        # running weighted averages z_{j,t} = sum_{k<=t} alpha_{k+1} w_{j,k} / sum alpha_{k+1}
        a_next = alphas[ks]
        cum_aw = sum_aw + np.cumsum(a_next[:, None, None, None] * W, axis=0)
        cum_a = sum_alpha + np.cumsum(a_next)
        sum_aw, sum_alpha = cum_aw[-1].copy(), float(cum_a[-1])

        if config.check_displacement:
            pn = np.linalg.norm(W - V, axis=-1)
            en = np.linalg.norm(eps, axis=-1)
            rhs = alphas[ks - 1][:, None, None] * (C + en)
            violations += int(np.sum(pn > rhs + 1e-9 * (1.0 + rhs)))

        sel = np.searchsorted(rec, ks)
        hit = (sel < rows) & (rec[np.minimum(sel, rows - 1)] == ks)
        if not np.any(hit):
            continue
        rrows, t_idx = sel[hit], np.nonzero(hit)[0]
        Wr, Vr, Er = W[t_idx], V[t_idx], eps[t_idx]
        Y = Wr.mean(axis=2)
        with np.errstate(invalid="ignore"):  # alpha == 0 leaves z undefined
            Z = cum_aw[t_idx] / cum_a[t_idx][:, None, None, None]
        tr["disagreement"][rrows] = np.linalg.norm(Wr - Y[:, :, None], axis=-1)
        tr["f_y"][rrows] = p.value(Y)
        tr["f_w"][rrows] = p.value(Wr)
        tr["p_norm"][rrows] = np.linalg.norm(Wr - Vr, axis=-1)
        tr["eps_norm"][rrows] = np.linalg.norm(Er, axis=-1)
        tr["z"][rrows] = Z
        tr["f_z"][rrows] = p.value(Z)

    A_next = config.weights.matrix(K + 1)
    if v1 is None:
        v1 = A_next @ w
    if states is not None:
        states["v"][K] = A_next @ w
    alpha_col = np.r_[np.nan, alphas[rec[1:] - 1]]
    log.debug("simulated %d replica(s) x %d steps in %.2fs", R, K, time.perf_counter() - started)
    return RunTrace(rec, alpha_col, w0=config.initial.copy(), v1=v1, w_final=w, replicas=list(replicas),
                    seed=noise.seed, horizon=K, displacement_violations=violations, states=states,
                    wall_time=time.perf_counter() - started, **tr)


def run(config: SimConfig, replica: int = 0) -> RunTrace:
    """Simulate ``config.horizon`` iterations for one replica."""
    check_assumptions(config)
    return _simulate(config, [replica])


def monte_carlo(config: SimConfig, replicas: int, batch: int | None = None) -> AggregatedTrace:
    """Independent replicas ``0 .. replicas-1``, aggregated into means and standard errors."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    check_assumptions(config)
    ids = list(range(replicas))
    batch = replicas if batch is None else batch
    parts = [_simulate(config, ids[s:s + batch]) for s in range(0, replicas, batch)]
    return _concat(parts).aggregate()


def _concat(parts: list[RunTrace]) -> RunTrace:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = {name: np.concatenate([getattr(t, name) for t in parts], axis=1) for name in METRICS}
    states = None
    if first.states is not None:
        states = {k: np.concatenate([t.states[k] for t in parts], axis=1) for k in first.states}
    return RunTrace(first.ks, first.alpha, w0=first.w0,
                    v1=np.concatenate([t.v1 for t in parts]),
                    w_final=np.concatenate([t.w_final for t in parts]),
                    replicas=[r for t in parts for r in t.replicas], seed=first.seed, horizon=first.horizon,
                    displacement_violations=sum(t.displacement_violations for t in parts), states=states,
                    wall_time=sum(t.wall_time for t in parts), **cat)


# ---------------------------------------------------------------- per-realization inequality checks


def _require_states(trace):
    if trace.states is None:
        raise ValueError("run with record_states=True to check per-realization inequalities")
    return trace.states


def displacement_violations(config: SimConfig, trace: RunTrace, tol: float = 1e-9) -> int:
    """Count ``||w_{i,k+1} - v_{i,k}|| > alpha_{k+1} (C_i + ||eps_{i,k+1}||)``."""
    st = _require_states(trace)
    K = trace.horizon
    C = config.problem.bounds()
    alphas = config.stepsize.values(np.arange(1, K + 1))
    pn = np.linalg.norm(st["w"][1:] - st["v"][:-1], axis=-1)
    rhs = alphas[:, None, None] * (C + np.linalg.norm(st["eps"], axis=-1))
    return int(np.sum(pn > rhs + tol))


def disagreement_bound_violations(config: SimConfig, trace: RunTrace, tol: float = 1e-9) -> int:
    """Count agents/iterations where ``||y_{k+1} - w_{j,k+1}||`` exceeds its realized geometric bound."""
    st = _require_states(trace)
    K, m = trace.horizon, config.m
    if m == 1:
        return 0
    topo = config.weights.topology
    cert = rate_certificate(m, config.weights.eta(K), topo.Q)
    theta, beta = cert.theta, cert.beta
    C = config.problem.bounds()
    alphas = config.stepsize.values(np.arange(1, K + 1))
    W = st["w"]
    max_w0 = np.max(np.linalg.norm(W[0], axis=-1), axis=-1)  # (R,)
    load = C + np.linalg.norm(st["eps"], axis=-1)  # (K, R, m), row l-1 <-> eps_l
    s = alphas[:, None] * load.sum(axis=-1)  # alpha_l sum_i (C_i + ||eps_{i,l}||)
    conv = lfilter([1.0], [1.0, -beta], s, axis=0)  # sum_{l<=k} beta^(k-l) s_l
    past = np.vstack([np.zeros((1, s.shape[1])), theta * beta * conv[:-1]])  # index k: l = 1..k
    kk = np.arange(1, K + 1)[:, None]
    rhs = (m * theta * beta ** kk * max_w0
           + past
           + alphas[:, None] / m * load.sum(axis=-1))[:, :, None] + alphas[:, None, None] * load
    Y = W[1:].mean(axis=2, keepdims=True)
    lhs = np.linalg.norm(Y - W[1:], axis=-1)
    return int(np.sum(lhs > rhs + tol))


def iterate_relation_violations(config: SimConfig, trace: RunTrace, iterations, points,
                                tol: float = 1e-9) -> int:
    """Check the squared-distance recursion for ``sum_i ||v_{i,k+1} - z||^2`` at the given ``k`` and ``z``."""
    st = _require_states(trace)
    p = config.problem
    C = p.bounds()
    Cmax = float(C.max())
    bad = 0
    for k in iterations:
        if not 0 <= k < trace.horizon:
            raise ValueError(f"iteration {k} outside [0, {trace.horizon})")
        a = config.stepsize(k + 1)
        Wk, Vk, Vn, E = st["w"][k], st["v"][k], st["v"][k + 1], st["eps"][k]
        Yk = Wk.mean(axis=1)
        dis = np.linalg.norm(Wk - Yk[:, None], axis=-1).sum(axis=-1)
        load = ((C + np.linalg.norm(E, axis=-1)) ** 2).sum(axis=-1)
        for z in points:
            z = np.asarray(z, dtype=float)
            lhs = np.sum((Vn - z) ** 2, axis=(-2, -1))
            rhs = (np.sum((Vk - z) ** 2, axis=(-2, -1))
                   - 2 * a * (p.value(Yk) - p.value(z))
                   + 2 * a * Cmax * dis
                   - 2 * a * np.sum(E * (Vk - z), axis=(-2, -1))
                   + a * a * load)
            bad += int(np.sum(lhs > rhs + tol * (1.0 + np.abs(rhs))))
    return bad
