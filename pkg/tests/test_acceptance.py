"""Acceptance criteria, each run at its stated tolerance."""

import math
import time

import numpy as np
import pytest

from distsubgrad.bounds import (alpha_term, bound_inputs, bound_report, bound_vs_empirical, constants_from_run,
                                finite_time_bound, stopping_rule)
from distsubgrad.engine import (disagreement_bound_violations, displacement_violations,
                                iterate_relation_violations, monte_carlo, run)
from distsubgrad.mixing import WeightSchedule, rate_certificate, verify_geometric_rate
from distsubgrad.stochastic import (KieferWolfowitz, RobbinsMonro, StepsizeSchedule, convolution_limit_check,
                                    convolution_sequence, summable_convolution_check,
                                    weighted_average_limit_check)
from distsubgrad.topology import TopologySchedule

from helpers import quadratic_config

HARMONIC = StepsizeSchedule("harmonic", 1.0, 10.0)


def _random_periodic_schedule(rng):
    """Random spanning tree split across Q edge sets, plus random extra links; every Q-window is connected."""
    m = int(rng.integers(2, 9))
    Q = int(rng.integers(1, 4))
    order = rng.permutation(m)
    tree = [(int(order[rng.integers(0, t)]), int(order[t])) for t in range(1, m)]
    sets = [[] for _ in range(Q)]
    for e in tree:
        sets[int(rng.integers(0, Q))].append(e)
    for s in sets:
        for j in range(m):
            for i in range(j + 1, m):
                if rng.random() < 0.15:
                    s.append((j, i))
    return TopologySchedule.periodic(m, sets, Q=Q, symmetric=True)


@pytest.mark.criterion(1, "mixing certificate holds on 20 random periodic schedules, k <= 200")
def test_criterion_01_mixing_certificate():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    total = 0
    for _ in range(20):
        ws = WeightSchedule(_random_periodic_schedule(rng), "metropolis")
        rep = verify_geometric_rate(ws, 0, 200)
        total += len(rep.violations)
    elapsed = time.perf_counter() - started
    assert total == 0
    assert elapsed < 5.0


@pytest.mark.criterion(2, "diminishing stepsize reaches x* = 0 on every seed")
def test_criterion_02_exact_optimum():
    started = time.perf_counter()
    cfg = quadratic_config(horizon=200_000, sigma=0.1, stepsize=HARMONIC, trace_stride=10_000)
    agg = monte_carlo(cfg, 20)
    elapsed = time.perf_counter() - started
    w = agg.trace.w_final[..., 0]  # (seeds, agents)
    assert np.all(np.max(np.abs(w), axis=1) < 5e-3)
    assert np.mean(w ** 2) < 1e-4
    assert elapsed < 60.0


@pytest.mark.criterion(3, "consensus in mean: tail disagreement < 1e-3 over 100 replicas")
def test_criterion_03_consensus_in_mean():
    cfg = quadratic_config(horizon=200_000, sigma=0.1, stepsize=HARMONIC, trace_stride=100)
    agg = monte_carlo(cfg, 100)
    tail, _ = agg.tail_mean("disagreement", 0.1)
    assert np.all(tail < 1e-3)


@pytest.mark.criterion(4, "constant stepsize: E f(z_t) - f* below the finite-time bound at t = 100, 1000, 5000")
def test_criterion_04_finite_time_bound():
    started = time.perf_counter()
    cfg = quadratic_config(horizon=5000, sigma=0.1, stepsize=StepsizeSchedule("constant", 0.02))
    agg = monte_carlo(cfg, 100)
    rep = bound_report(bound_inputs(cfg, trace=agg.trace), ts=[100, 1000, 5000])
    bound_vs_empirical(rep, agg, f_star=8.0)
    elapsed = time.perf_counter() - started
    for t in (100, 1000, 5000):
        e = rep.entry("finite_time", t)
        assert e.verdict, (t, e)
    assert elapsed < 120.0


def _fixed_point_rule(eps, alpha=0.01, rounds=20):
    """The constant A depends on v_{i,1}, hence on alpha; iterate until alpha_eps is stable."""
    for _ in range(rounds):
        cfg = quadratic_config(horizon=2, graph="path", stepsize=StepsizeSchedule("constant", alpha))
        rule = stopping_rule(*constants_from_run(cfg, run(cfg)), eps)
        if abs(rule.alpha - alpha) <= 1e-12 * alpha:
            return rule
        alpha = rule.alpha
    raise AssertionError("stepsize fixed point did not settle")


@pytest.mark.criterion(5, "stopping rule: N_eps steps at alpha_eps give f(z) - f* <= eps")
@pytest.mark.parametrize("eps", [0.5, 0.1])
def test_criterion_05_stopping_rule(eps):
    rule = _fixed_point_rule(eps)
    cfg = quadratic_config(horizon=rule.N, graph="path", stepsize=StepsizeSchedule("constant", rule.alpha),
                           trace_stride=rule.N)
    tr = run(cfg)
    assert constants_from_run(cfg, tr) == pytest.approx((rule.A, rule.B, rule.C), rel=1e-9)
    assert finite_time_bound(bound_inputs(cfg, trace=tr), rule.N) <= eps + 1e-9
    assert np.all(tr.f_z[-1, 0] - 8.0 <= eps)


@pytest.mark.criterion(6, "per-realization displacement and iterate-relation oracles, zero violations")
def test_criterion_06_per_realization_oracles():
    cfg = quadratic_config(horizon=10_000, sigma=0.5, graph="path", stepsize=HARMONIC, record_states=True,
                           check_displacement=True)
    tr = run(cfg)
    assert tr.displacement_violations == 0
    assert displacement_violations(cfg, tr, tol=1e-9) == 0
    assert disagreement_bound_violations(cfg, tr, tol=1e-9) == 0
    rng = np.random.default_rng(6)
    iters = rng.choice(10_000, size=100, replace=False)
    zs = cfg.problem.constraint.sample(rng, 5)
    assert iterate_relation_violations(cfg, tr, iters, zs, tol=1e-9) == 0


@pytest.mark.criterion(7, "biased errors: running-min f(w) - f* within D * sum(mu_bar); unbiased below 1e-2")
def test_criterion_07_bias_term():
    def statistic(bias):
        cfg = quadratic_config(horizon=20_000, sigma=0.1, bias=bias, stepsize=HARMONIC, trace_stride=10)
        agg = monte_carlo(cfg, 100)
        rep = bound_vs_empirical(bound_report(bound_inputs(cfg, trace=agg.trace)), agg, f_star=8.0)
        return rep.entry("function_value"), cfg

    biased, cfg = statistic(0.05)
    D_sum_mu = cfg.problem.constraint.diameter() * 3 * 0.05
    assert biased.value == pytest.approx(D_sum_mu, rel=1e-12)
    assert biased.empirical <= D_sum_mu + 3 * biased.se
    unbiased, _ = statistic(0.0)
    assert unbiased.empirical < 1e-2


@pytest.mark.criterion(8, "alpha-term of the function-value bound scales as m^4 (ratio 16 +- 10%)")
def test_criterion_08_m4_scaling():
    from distsubgrad.bounds import BoundInputs
    eta = 0.5
    terms = []
    for m in (4, 8, 16):
        cert = rate_certificate(m, eta, 1)
        inp = BoundInputs(m, cert.theta, cert.beta, eta, 1, np.ones(m), np.zeros(m), np.zeros(m), 0.01, 2.0)
        terms.append(alpha_term(inp))
    for lo, hi in zip(terms, terms[1:]):
        assert abs(hi / lo - 16) <= 1.6


@pytest.mark.criterion(9, "Robbins-Monro error mean within 3 sigma/sqrt(N); Kiefer-Wolfowitz bias equals beta within 5%")
def test_criterion_09_estimators():
    N = 100_000
    rm = RobbinsMonro(lambda x, r: 2 * (x - r), lambda rng, n: rng.normal(0.0, 1.0, n), lambda x: 2 * x, seed=9)
    errs = np.array([rm.error(0.3, k) for k in range(1, N + 1)])
    sigma = 2.0
    assert abs(errs.mean()) < 3 * sigma / math.sqrt(N)
    kw = KieferWolfowitz(lambda x, r: x * x)
    for beta in (1e-1, 1e-2, 1e-3):
        bias = kw(0.7, 1, beta=beta) - 2 * 0.7
        assert bias == pytest.approx(beta, rel=0.05)


@pytest.mark.criterion(10, "scalar convolution and weighted-average checks")
def test_criterion_10_sequence_checks():
    assert abs(convolution_sequence(np.ones(200), 0.5)[-1] - 2.0) < 1e-10
    assert convolution_limit_check(np.ones(200), 0.5, 1.0).error < 1e-10
    assert convolution_sequence(np.zeros(50), 0.5)[-1] == 0.0
    assert convolution_sequence(1 / np.arange(1, 1001), 0.5)[-1] < 0.01
    assert summable_convolution_check(1 / np.arange(1, 5001) ** 2, 0.9).holds
    k = np.arange(1, 10_001)
    assert weighted_average_limit_check(np.full(100, 0.7), np.linspace(0.1, 2, 100)).ratios[-1] == pytest.approx(0.7)
    assert abs(weighted_average_limit_check(3 + 1 / k, np.ones(10_000), 3.0).final - 3) < 0.01
    alt = weighted_average_limit_check((-1.0) ** k, np.ones(10_000), 1.0)
    assert alt.holds and np.all(np.abs(alt.ratios) <= 1)
