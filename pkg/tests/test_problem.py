import math

import numpy as np
import pytest

from distsubgrad.problem import (AbsDeviation, Ball, Box, Halfspace, Hinge, NoUniformBound, Problem,
                                 ProblemError, Quadratic, Simplex, WeightedQuadratic, WholeSpace, project,
                                 solve_reference, subgradient, subgradient_bound)


def test_projection_examples():
    np.testing.assert_array_equal(project(Box([0, 0], [1, 1]), [2, -1]), [1, 0])
    np.testing.assert_allclose(project(Ball([0, 0], 1.0), [3, 4]), [0.6, 0.8])
    np.testing.assert_allclose(project(Simplex(3), [0.5, 0.5, 0.5]), [1 / 3] * 3)


def test_simplex_projection_matches_kkt_oracle():
    rng = np.random.default_rng(0)
    X = Simplex(4)
    for x in rng.normal(size=(50, 4)) * 3:
        p = X.project(x)
        # KKT: p = max(x - tau, 0) with sum 1; find tau by bisection independently
        lo, hi = x.min() - 1, x.max()
        for _ in range(200):
            tau = 0.5 * (lo + hi)
            if np.maximum(x - tau, 0).sum() > 1:
                lo = tau
            else:
                hi = tau
        np.testing.assert_allclose(p, np.maximum(x - tau, 0), atol=1e-10)


def test_halfspace_and_whole_space():
    H = Halfspace([1.0, 1.0], 1.0)
    np.testing.assert_allclose(H.project([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_array_equal(H.project([0.0, 0.0]), [0.0, 0.0])
    assert WholeSpace(2).diameter() == math.inf
    with pytest.raises(ProblemError):
        WholeSpace(2).sample(np.random.default_rng(0), 3)


def test_diameters():
    assert Box([-1], [1]).diameter() == 2.0
    assert Ball([0, 0], 1.5).diameter() == 3.0
    assert Simplex(3).diameter() == pytest.approx(math.sqrt(2))


def test_subgradient_examples():
    np.testing.assert_array_equal(subgradient(Quadratic([1, 0]), [0, 0]), [-2, 0])
    assert subgradient(AbsDeviation([0.0]), [0.0])[0] == 0.0
    assert subgradient(Hinge([1.0], 0.0), [0.0])[0] == 0.0
    assert subgradient(Hinge([1.0], 0.0), [0.5])[0] == 1.0


def test_subgradient_bound_examples():
    assert subgradient_bound(Quadratic([2.0]), Box([-1], [1])).value == 6.0
    assert subgradient_bound(AbsDeviation([0.0]), WholeSpace(1)).value == 1.0
    c = np.array([0.3, -0.4])
    b = subgradient_bound(Quadratic(c), Ball([0, 0], 2.0))
    assert b.value == pytest.approx(2 * (2.0 + 0.5)) and not b.approximate


def test_no_uniform_bound():
    with pytest.raises(NoUniformBound, match="no uniform bound"):
        subgradient_bound(Quadratic([0.0]), WholeSpace(1))


def test_sampled_bound_is_flagged_approximate():
    class Cubic(WeightedQuadratic):
        def exact_bound(self, s):
            return None
    b = subgradient_bound(Cubic([0.0], [1.0]), Box([-1], [1]))
    assert b.approximate and b.value >= 2.0


def test_reference_problems():
    p = Problem([Quadratic([-2.0]), Quadratic([0.0]), Quadratic([2.0])], Box([-1], [1]))
    f, x = solve_reference(p)
    assert f == pytest.approx(8.0, abs=1e-9) and abs(x[0]) < 1e-6
    f, x = solve_reference(Problem([AbsDeviation([0.3])], Box([0], [1])))
    assert f == pytest.approx(0.0, abs=1e-8) and x[0] == pytest.approx(0.3, abs=1e-8)
    f, x = solve_reference(Problem([Quadratic([0, 0]), Quadratic([1, 1])], Box([0, 0], [1, 1])))
    assert f == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-5)


def test_problem_validates_declared_optimum():
    comps = [Quadratic([-2.0]), Quadratic([0.0]), Quadratic([2.0])]
    Problem(comps, Box([-1], [1]), f_star=8.0, x_star=[0.0])
    with pytest.raises(ProblemError, match="not in X"):
        Problem(comps, Box([-1], [1]), f_star=8.0, x_star=[3.0])
    with pytest.raises(ProblemError, match="declared f"):
        Problem(comps, Box([-1], [1]), f_star=7.0, x_star=[0.0])


def test_problem_subgradients_per_agent_mixed_types():
    comps = [Quadratic([1.0, 0.0]), AbsDeviation([0.0, 0.0], 2.0), Hinge([1.0, -1.0], 0.5)]
    p = Problem(comps, Box([-2, -2], [2, 2]))
    V = np.array([[0.0, 0.0], [1.0, -1.0], [1.0, 0.0]])
    G = p.subgradients(np.stack([V, V]))
    for r in range(2):
        for i, c in enumerate(comps):
            np.testing.assert_array_equal(G[r, i], c.subgradient(V[i]))
    np.testing.assert_allclose(p.bounds(), [2 * math.hypot(3, 2), 2 * math.sqrt(2), math.sqrt(2)])
