import math

import numpy as np
import pytest

from distsubgrad.bounds import (BoundError, BoundInputs, alpha_term, averaged_bound, bound_inputs, bound_report,
                                bound_vs_empirical, certificate_constants, constants_from_run, disagreement_bound,
                                finite_time_bound, function_value_bound, stopping_rule)
from distsubgrad.engine import initial_state, monte_carlo, run, step
from distsubgrad.mixing import rate_certificate
from distsubgrad.stochastic import StepsizeSchedule

from helpers import quadratic_config


def _inputs(m=2, eta=0.5, Q=1, alpha=0.1, C=1.0, nu=0.0, mu=0.0, D=2.0, v1=None, w0=None):
    cert = rate_certificate(m, eta, Q)
    return BoundInputs(m, cert.theta, cert.beta, eta, Q, np.full(m, C), np.full(m, nu), np.full(m, mu),
                       alpha, D, v1, w0)


def test_disagreement_bound_examples():
    assert disagreement_bound(_inputs(alpha=0.0)) == 0.0
    # direct evaluation 0.1 * (2 + 2 theta beta / (1 - beta)) with theta = 0.96875^-2
    assert disagreement_bound(_inputs()) == pytest.approx(6.806451612903228, rel=1e-12)
    assert disagreement_bound(_inputs()) == pytest.approx(6.806, abs=1e-3)
    assert disagreement_bound(_inputs(C=2.0)) == pytest.approx(2 * disagreement_bound(_inputs()), rel=1e-14)


def test_beta_must_be_below_one():
    with pytest.raises(BoundError):
        BoundInputs(2, 1.0, 1.0, 0.5, 1, [1, 1], [0, 0], [0, 0], 0.1, 2.0)


def test_function_value_bound_examples():
    assert function_value_bound(_inputs(alpha=0.0)) == 0.0
    inp = _inputs(m=3, eta=1 / 3, alpha=0.01, C=6.0, D=2.0)
    assert inp.theta == pytest.approx(1.0187789326578742, rel=1e-12)
    assert function_value_bound(inp) == pytest.approx(711.2405607476604, rel=1e-12)
    assert function_value_bound(_inputs(m=3, eta=1 / 3, alpha=0.0, mu=0.1, D=2.0)) == pytest.approx(0.6)


def test_unbounded_set_with_bias_is_rejected():
    with pytest.raises(BoundError, match="bounded"):
        function_value_bound(_inputs(mu=0.1, D=math.inf))
    assert function_value_bound(_inputs(D=math.inf)) == alpha_term(_inputs())


def test_averaged_bound_equals_function_value_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        inp = _inputs(m=int(rng.integers(1, 6)), eta=float(rng.uniform(0.05, 0.5)), alpha=float(rng.random()),
                      C=float(rng.random() * 5), nu=float(rng.random()), mu=float(rng.random()))
        assert averaged_bound(inp) == function_value_bound(inp) >= 0


def test_finite_time_bound_examples():
    inp = _inputs(m=3, eta=1 / 3, alpha=0.1, v1=3.0, w0=0.0)
    assert finite_time_bound(inp, 100) - alpha_term(inp) == pytest.approx(0.15, rel=1e-12)
    at_opt = _inputs(m=3, eta=1 / 3, alpha=0.1, v1=0.0, w0=0.0)
    assert finite_time_bound(at_opt, 10) == alpha_term(at_opt)
    small = _inputs(m=2, eta=0.5, alpha=0.1, v1=3.0, w0=1.0)
    assert abs(finite_time_bound(small, 10 ** 12) - averaged_bound(small)) < 1e-9
    full = _inputs(m=3, eta=1 / 3, alpha=0.1, v1=3.0, w0=1.0)
    A, B, _ = certificate_constants(full)
    for t in (10 ** 6, 10 ** 12):
        assert finite_time_bound(full, t) - averaged_bound(full) == pytest.approx((A / 0.1 + B) / t, rel=1e-3)
    ts = [1, 10, 100, 1000]
    vals = [finite_time_bound(full, t) for t in ts]
    assert vals == sorted(vals, reverse=True)


def test_finite_time_bound_errors():
    inp = _inputs(v1=1.0, w0=1.0)
    with pytest.raises(BoundError):
        finite_time_bound(inp, 0)
    with pytest.raises(BoundError):
        finite_time_bound(inp, 10, alpha=0.0)
    with pytest.raises(BoundError, match="zero-mean"):
        finite_time_bound(_inputs(v1=1.0, w0=1.0, mu=0.1), 10)
    with pytest.raises(BoundError, match="missing"):
        finite_time_bound(_inputs(), 10)


def test_monotonicity():
    base = dict(m=3, eta=0.3, alpha=0.05, C=2.0, nu=0.5)
    b0 = _inputs(**base)
    for change in ({"alpha": 0.1}, {"m": 4}, {"C": 3.0}, {"nu": 0.9}):
        b1 = _inputs(**{**base, **change})
        assert disagreement_bound(b1) >= disagreement_bound(b0)
        assert alpha_term(b1) >= alpha_term(b0)
    bigger_theta = b0.replace(theta=b0.theta * 1.5)
    assert disagreement_bound(bigger_theta) >= disagreement_bound(b0)


def test_m4_scaling():
    terms = [alpha_term(_inputs(m=m, eta=0.5, alpha=0.01)) for m in (4, 8, 16)]
    for lo, hi in zip(terms, terms[1:]):
        assert hi / lo == pytest.approx(16, rel=0.1)


def test_stopping_rule_examples():
    r = stopping_rule(1, 1, 1, 1)
    assert r.psi == pytest.approx(math.sqrt(2) - 1, rel=1e-12)
    assert r.N == 6 and r.alpha == pytest.approx(0.414214, abs=1e-6)
    lin = stopping_rule(1, 0, 1, 0.2)
    assert lin.psi == pytest.approx(0.1, rel=1e-12) and lin.N == 100 and lin.alpha == pytest.approx(0.1)
    ratio = stopping_rule(1, 1e6, 1, 4e-3).psi / stopping_rule(1, 1e6, 1, 1e-3).psi
    assert ratio == pytest.approx(2.0, rel=0.05)


def test_stopping_rule_root_solves_quadratic_and_bound_is_met():
    rng = np.random.default_rng(3)
    for _ in range(200):
        A, B, C, eps = rng.uniform(1e-3, 1e3, 4)
        r = stopping_rule(A, B, C, eps)
        assert abs(B * r.psi ** 2 + 2 * math.sqrt(A * C) * r.psi - eps) <= 1e-9 * eps
        assert r.bound() <= eps + 1e-9


def test_stopping_rule_errors():
    for args in ((0, 1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0), (1, -1, 1, 1)):
        with pytest.raises(BoundError):
            stopping_rule(*args)


def test_constants_from_run():
    cfg = quadratic_config(horizon=10, stepsize=StepsizeSchedule("constant", 0.01), graph="path")
    tr = run(cfg)
    A, B, C = constants_from_run(cfg, tr)
    inp = bound_inputs(cfg, trace=tr)
    w1 = step(cfg, initial_state(cfg)).w
    v1 = cfg.weights.matrix(2) @ w1
    assert A == pytest.approx(0.5 * np.sum(v1 ** 2), rel=1e-12)
    theta, beta = inp.theta, inp.beta
    assert B == pytest.approx(2 * 9 * theta * beta ** 2 / (1 - beta) * 6.0 * 1.0, rel=1e-12)
    assert C == pytest.approx(3 * 36 * (4.5 + 2 * 3 * theta * beta / (1 - beta)), rel=1e-12)
    at_opt = quadratic_config(horizon=5, initial=((0.0,), (0.0,), (0.0,)), stepsize=StepsizeSchedule("constant", 0.0))
    assert constants_from_run(at_opt, run(at_opt))[0] == 0.0
    tiny = bound_inputs(cfg, trace=tr).replace(beta=0.0)
    assert certificate_constants(tiny)[1] == 0.0
    with pytest.raises(BoundError):
        constants_from_run(cfg, None)


def test_v1_recorded_matches_states():
    cfg = quadratic_config(horizon=4, sigma=0.3, record_states=True)
    tr = run(cfg)
    np.testing.assert_array_equal(tr.v1[0], tr.states["v"][1, 0])


def test_bound_vs_empirical_zero_noise_alpha_zero():
    cfg = quadratic_config(horizon=300, stepsize=StepsizeSchedule("constant", 0.0))
    agg = monte_carlo(cfg, 1)
    rep = bound_report(bound_inputs(cfg, trace=agg.trace))
    bound_vs_empirical(rep, agg, f_star=8.0)
    e = rep.entry("disagreement")
    assert e.value == 0.0 and e.empirical < 1e-12 and e.verdict


def test_bound_vs_empirical_constant_stepsize_passes():
    cfg = quadratic_config(horizon=2000, sigma=0.1, stepsize=StepsizeSchedule("constant", 0.02))
    agg = monte_carlo(cfg, 30)
    rep = bound_report(bound_inputs(cfg, trace=agg.trace), ts=[100, 2000])
    bound_vs_empirical(rep, agg, f_star=8.0)
    assert rep.entry("finite_time", 2000).verdict
    assert rep.passed is True


def test_misdeclared_noise_is_detected():
    cfg = quadratic_config(horizon=2000, sigma=2.0, stepsize=StepsizeSchedule("constant", 0.05))
    agg = monte_carlo(cfg, 30)
    inp = bound_inputs(cfg, trace=agg.trace, nu_bar=0.0).replace(C=np.zeros(3), theta=0.0)
    rep = bound_vs_empirical(bound_report(inp), agg, f_star=8.0)
    assert rep.entry("disagreement").verdict is False
    assert rep.passed is False


def test_unknown_f_star_gives_no_function_verdict_and_flags_replicas():
    cfg = quadratic_config(horizon=200, sigma=0.1, stepsize=StepsizeSchedule("constant", 0.02))
    agg = monte_carlo(cfg, 3)
    rep = bound_vs_empirical(bound_report(bound_inputs(cfg, trace=agg.trace), ts=[100]), agg, f_star=None)
    assert rep.entry("function_value").verdict is None
    assert rep.entry("finite_time", 100).verdict is None
    assert any("insufficient replicas" in n for n in rep.notes)
    assert '"passed"' in rep.to_json()
