"""Closed-form performance bounds, the epsilon-optimality stopping rule, and
comparisons of those bounds against Monte Carlo estimates.

All function-value bounds are reported as excess over ``f*``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import SimState, replica_stats, step
from .mixing import rate_certificate


class BoundError(ValueError):
    pass


@dataclass
class BoundInputs:
    m: int
    theta: float
    beta: float
    eta: float
    Q: int
    C: np.ndarray
    nu_bar: np.ndarray
    mu_bar: np.ndarray
    alpha: float
    D: float
    sum_v1_dist2: float | None = None
    max_w0: float | None = None

    def __post_init__(self):
        self.C = np.atleast_1d(np.asarray(self.C, dtype=float))
        self.nu_bar = np.broadcast_to(np.asarray(self.nu_bar, dtype=float), self.C.shape).copy()
        self.mu_bar = np.broadcast_to(np.asarray(self.mu_bar, dtype=float), self.C.shape).copy()
        for name in ("C", "nu_bar", "mu_bar"):
            if np.any(getattr(self, name) < 0):
                raise BoundError(f"{name} must be nonnegative")
        if self.alpha < 0:
            raise BoundError("alpha must be nonnegative")
        if not 0.0 <= self.beta < 1.0:
            raise BoundError(f"beta must lie in [0, 1), got {self.beta}")
        if self.theta < 0 or self.D < 0:
            raise BoundError("theta and D must be nonnegative")

    @property
    def load(self) -> float:
        """``max_i (C_i + nu_bar_i)``."""
        return float(np.max(self.C + self.nu_bar))

    @property
    def mixing_factor(self) -> float:
        """``m theta beta / (1 - beta)``."""
        return self.m * self.theta * self.beta / (1.0 - self.beta)

    def replace(self, **changes) -> BoundInputs:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return BoundInputs(**d)

    def to_dict(self) -> dict:
        return {k: _plain(getattr(self, k)) for k in self.__dataclass_fields__}


def _plain(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x.ravel()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def bound_inputs(config, x_star=None, trace=None, *, alpha: float | None = None, eta: float | None = None,
                 nu_bar=None, mu_bar=None) -> BoundInputs:
    """Collect bound inputs from a simulation config.

    ``sum_v1_dist2`` is the replica mean of ``sum_i ||v_{i,1} - x*||^2`` when a
    trace is given; otherwise ``v_{i,1}`` comes from an error-free first step.
    """
    p = config.problem
    m = p.m
    topo = config.weights.topology
    eta = config.weights.eta(config.horizon) if eta is None else eta
    cert = rate_certificate(m, eta, topo.Q)
    x_star = p.x_star if x_star is None else np.atleast_1d(np.asarray(x_star, dtype=float))
    sum_v1 = None
    if x_star is not None:
        if trace is not None:
            sum_v1 = float(np.mean(np.sum((trace.v1 - x_star) ** 2, axis=(-2, -1))))
        else:
            s1 = step(config, SimState(0, config.initial.copy()), eps=np.zeros((m, p.dim)))
            v1 = config.weights.matrix(2) @ s1.w
            sum_v1 = float(np.sum((v1 - x_star) ** 2))
    return BoundInputs(
        m=m, theta=cert.theta, beta=cert.beta, eta=eta, Q=topo.Q, C=p.bounds(),
        nu_bar=config.noise.nu_bar() if nu_bar is None else nu_bar,
        mu_bar=config.noise.mu_bar() if mu_bar is None else mu_bar,
        alpha=config.stepsize.limit if alpha is None else alpha,
        D=p.constraint.diameter(), sum_v1_dist2=sum_v1,
        max_w0=float(np.max(np.linalg.norm(config.initial, axis=-1))),
    )


# ---------------------------------------------------------------- bounds


def disagreement_bound(inp: BoundInputs) -> float:
    """Asymptotic bound on ``E||y_{k+1} - w_{j,k+1}||``."""
    return inp.alpha * inp.load * (2.0 + inp.mixing_factor)


def alpha_term(inp: BoundInputs, alpha: float | None = None) -> float:
    """``m alpha (max{C_i + nu_bar_i})^2 (9/2 + 2 m theta beta / (1 - beta))``."""
    a = inp.alpha if alpha is None else alpha
    return inp.m * a * inp.load ** 2 * (4.5 + 2.0 * inp.mixing_factor)


def bias_term(inp: BoundInputs) -> float:
    """``D sum_i mu_bar_i``; needs a bounded set when any bias is present."""
    total = float(np.sum(inp.mu_bar))
    if total == 0.0:
        return 0.0
    if not math.isfinite(inp.D):
        raise BoundError("the biased-error term needs a bounded constraint set "
                         "(diameter of X is infinite while mu_bar > 0)")
    return inp.D * total


def function_value_bound(inp: BoundInputs) -> float:
    """Excess bound for ``liminf E f(w_{j,k})``."""
    return bias_term(inp) + alpha_term(inp)


def averaged_bound(inp: BoundInputs) -> float:
    """Excess bound for ``limsup E f(z_{j,t})``; same expression as :func:`function_value_bound`."""
    return function_value_bound(inp)


def finite_time_bound(inp: BoundInputs, t: int, alpha: float | None = None) -> float:
    """Excess bound on ``E f(z_{j,t})`` for zero-mean errors and a constant stepsize."""
    a = inp.alpha if alpha is None else float(alpha)
    if t < 1:
        raise BoundError("finite-time bound needs t >= 1")
    if not a > 0:
        raise BoundError("finite-time bound needs a positive constant stepsize")
    if np.any(inp.mu_bar > 0):
        raise BoundError("finite-time bound assumes zero-mean errors (mu_bar = 0)")
    if inp.sum_v1_dist2 is None or inp.max_w0 is None:
        raise BoundError("missing v_{i,1} / w_{i,0} data for the finite-time bound")
    init = inp.sum_v1_dist2 / (2.0 * t * a)
    topo = 2.0 * inp.m ** 2 * inp.theta * inp.beta ** 2 / (t * (1.0 - inp.beta)) * float(np.max(inp.C)) * inp.max_w0
    return init + topo + alpha_term(inp, a)


# ---------------------------------------------------------------- stopping rule


@dataclass(frozen=True)
class StoppingRule:
    A: float
    B: float
    C: float
    eps: float
    psi: float
    alpha: float
    N: int

    def bound(self, t: int | None = None, alpha: float | None = None) -> float:
        """``A/(t alpha) + B/t + C alpha``, the finite-time bound in constant form."""
        t = self.N if t is None else t
        a = self.alpha if alpha is None else alpha
        return self.A / (t * a) + self.B / t + self.C * a


def stopping_rule(A: float, B: float, C: float, eps: float) -> StoppingRule:
    """Iterations ``N`` and stepsize ``alpha`` that bring the finite-time bound below ``eps``."""
    if not (A > 0 and C > 0 and eps > 0):
        raise BoundError("stopping rule needs A > 0, C > 0 and eps > 0")
    if B < 0:
        raise BoundError("stopping rule needs B >= 0")
    root = math.sqrt(A * C)
    # positive root of B x^2 + 2 sqrt(AC) x - eps = 0, in a form stable for B -> 0
    psi = eps / (root + math.sqrt(A * C + B * eps))
    alpha = math.sqrt(A) * psi / math.sqrt(C)
    N = max(1, math.ceil(1.0 / psi ** 2 * (1.0 - 1e-12)))
    rule = StoppingRule(A, B, C, eps, psi, alpha, N)
    achieved = rule.bound()
    if achieved > eps + 1e-9:
        raise AssertionError(f"stopping rule bound {achieved} exceeds eps {eps}")
    return rule


def certificate_constants(inp: BoundInputs) -> tuple[float, float, float]:
    """``(A, B, C)`` of the finite-time bound written as ``A/(t alpha) + B/t + C alpha``."""
    if inp.sum_v1_dist2 is None or inp.max_w0 is None:
        raise BoundError("missing v_{i,1} / w_{i,0} data")
    A = 0.5 * inp.sum_v1_dist2
    B = 2.0 * inp.m ** 2 * inp.theta * inp.beta ** 2 / (1.0 - inp.beta) * float(np.max(inp.C)) * inp.max_w0
    C = inp.m * inp.load ** 2 * (4.5 + 2.0 * inp.mixing_factor)
    return A, B, C


def constants_from_run(config, trace, x_star=None) -> tuple[float, float, float]:
    if trace is None or getattr(trace, "v1", None) is None:
        raise BoundError("trace does not contain v_{i,1}")
    return certificate_constants(bound_inputs(config, x_star, trace))


# ---------------------------------------------------------------- reports


@dataclass
class BoundEntry:
    name: str
    kind: str  # limsup, liminf or finite
    value: float
    t: int | None = None
    empirical: float | None = None
    se: float | None = None
    margin: float | None = None
    verdict: bool | None = None
    note: str = ""


@dataclass
class BoundReport:
    inputs: BoundInputs
    entries: list = field(default_factory=list)
    stopping: StoppingRule | None = None
    notes: list = field(default_factory=list)

    def entry(self, name: str, t: int | None = None) -> BoundEntry:
        for e in self.entries:
            if e.name == name and e.t == t:
                return e
        raise KeyError((name, t))

    @property
    def passed(self) -> bool | None:
        verdicts = [e.verdict for e in self.entries if e.verdict is not None]
        return all(verdicts) if verdicts else None

    def to_dict(self) -> dict:
        return {
            "theta": self.inputs.theta,
            "beta": self.inputs.beta,
            "inputs": self.inputs.to_dict(),
            "bounds": [{k: _plain(v) for k, v in asdict(e).items()} for e in self.entries],
            "stopping_rule": None if self.stopping is None else asdict(self.stopping),
            "passed": self.passed,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def bound_report(inp: BoundInputs, ts=(), eps: float | None = None) -> BoundReport:
    rep = BoundReport(inp)
    rep.entries.append(BoundEntry("disagreement", "limsup", disagreement_bound(inp)))
    try:
        fv = function_value_bound(inp)
    except BoundError as exc:
        rep.notes.append(str(exc))
    else:
        rep.entries.append(BoundEntry("function_value", "liminf", fv))
        rep.entries.append(BoundEntry("averaged", "limsup", averaged_bound(inp)))
    if not math.isfinite(inp.D) and not np.any(inp.mu_bar > 0):
        rep.notes.append("X is unbounded and mu_bar = 0: the diameter term is unused; C_i must be declared")
    finite_ok = inp.alpha > 0 and not np.any(inp.mu_bar > 0) and inp.sum_v1_dist2 is not None
    for t in ts:
        if finite_ok:
            rep.entries.append(BoundEntry("finite_time", "finite", finite_time_bound(inp, int(t)), t=int(t)))
    if ts and not finite_ok:
        rep.notes.append("finite-time bound skipped: needs constant alpha > 0, zero-mean errors and x*")
    if eps is not None:
        rep.stopping = stopping_rule(*certificate_constants(inp), eps)
    return rep


def _tail_stat(arr: np.ndarray, mask: np.ndarray):
    """Per-agent tail mean over the masked rows and its standard error across replicas."""
    return replica_stats(arr[mask].mean(axis=0))


def _judge(entry: BoundEntry, emp: np.ndarray, se: np.ndarray, slack: float):
    margins = entry.value - emp - slack * se
    j = int(np.argmin(margins))
    entry.empirical, entry.se, entry.margin = float(emp[j]), float(se[j]), float(margins[j])
    entry.verdict = bool(entry.margin >= 0)


def bound_vs_empirical(report: BoundReport, agg, f_star: float | None = None, tail: float = 0.1,
                       slack: float = 3.0, min_replicas: int = 30) -> BoundReport:
    """Attach Monte Carlo statistics, margins and verdicts to ``report`` (in place).

    limsup-type bounds use the tail mean over the last ``tail`` fraction of
    iterations; liminf-type bounds use the running minimum of the replica
    mean.  Margins subtract ``slack`` standard errors; the worst agent decides.
    Function-value verdicts are skipped when ``f_star`` is unknown.
    """
    tr = agg.trace
    ks = agg.ks
    R = agg.n_replicas
    noisy = bool(np.any(report.inputs.nu_bar > 0))
    if noisy and R < min_replicas:
        report.notes.append(f"insufficient replicas: {R} < {min_replicas}; verdicts are indicative only")
    mask = agg.tail_mask(tail) & (ks >= 1)
    for e in report.entries:
        if e.name == "disagreement":
            emp, se = _tail_stat(tr.disagreement, mask)
            _judge(e, emp, se, slack)
            continue
        if f_star is None:
            e.note = "f* unknown: no verdict"
            if e.name == "averaged":
                e.empirical = float(np.max(_tail_stat(tr.f_z, mask)[0]))
            continue
        if e.name == "function_value":
            mean, se_rows = replica_stats(tr.f_w, axis=1)  # (rows, m)
            best = np.argmin(mean, axis=0)
            agents = np.arange(mean.shape[1])
            _judge(e, mean[best, agents] - f_star, se_rows[best, agents], slack)
        elif e.name == "averaged":
            emp, se = _tail_stat(tr.f_z, mask)
            _judge(e, emp - f_star, se, slack)
        elif e.name == "finite_time":
            hit = np.nonzero(ks == e.t)[0]
            if not hit.size:
                e.note = f"t={e.t} not recorded in trace"
                continue
            mean, se = replica_stats(tr.f_z[hit[0]])
            _judge(e, mean - f_star, se, slack)
    return report
