import math

import numpy as np
import pytest

from flowprob.errors import InfeasibleAlpha
from flowprob.kde import KdeModel
from flowprob.optimize import (BoxConstraint, OptimizationProblem, bisect_level, kkt_residuals, solve_chance,
                               solve_kkt)


@pytest.fixture(scope="module")
def ex2_problem():
    from conftest import cached_scenario
    return cached_scenario("example2").problem(20000, 3)


def test_bisect_level():
    assert bisect_level(lambda t: t, 0.3, 0.0, 1.0) == pytest.approx(0.3, abs=1e-9)
    assert bisect_level(lambda t: t, 0.3, 0.5, 1.0) == 0.5
    with pytest.raises(InfeasibleAlpha):
        bisect_level(lambda t: t, 2.0, 0.0, 1.0)


def test_deterministic_inlet(example1):
    con, p_det = example1.inlet_constraint(1000, 0)
    assert p_det == pytest.approx(math.sqrt(3200), abs=1e-9)


def test_inlet_matches_bisection(example1):
    con, p_det = example1.inlet_constraint(50000, 7)
    res = example1.optimize_inlet(50000, 7)
    ref = bisect_level(lambda p: con.prob(np.array([p])), 0.8, p_det, 62.0)
    assert res.x[0] == pytest.approx(ref, abs=1e-4)
    assert res.x[0] > p_det
    assert res.estimate.value == pytest.approx(0.8, abs=1e-6)
    assert res.kkt.max_residual < 1e-6


def test_box_optimum_satisfies_kkt(ex2_problem):
    res = solve_chance(ex2_problem)
    assert res.estimate.value == pytest.approx(0.75, abs=1e-6)
    assert res.kkt.max_residual < 1e-6
    assert res.kkt.mu > 0
    assert np.all(res.x >= ex2_problem.start - 1e-9)
    direct = solve_kkt(ex2_problem, res.x + 0.3)
    np.testing.assert_allclose(direct.x, res.x, atol=1e-5)


def test_kkt_residuals_flag_wrong_points(ex2_problem):
    res = solve_chance(ex2_problem)
    shifted = kkt_residuals(ex2_problem, res.x - 0.5, res.kkt.mu)
    assert shifted.feasibility > 1e-3
    assert kkt_residuals(ex2_problem, res.x, 2 * res.kkt.mu).stationarity > 1e-3


def test_higher_level_costs_more(ex2_problem):
    objs = []
    for alpha in (0.5, 0.7, 0.78):
        ex2_problem.alpha = alpha
        objs.append(solve_chance(ex2_problem).objective)
    ex2_problem.alpha = 0.75
    assert objs[0] < objs[1] < objs[2]


def test_slack_constraint_returns_lower_box():
    rng = np.random.default_rng(0)
    model = KdeModel.fit(rng.normal(size=(500, 1)))
    con = BoxConstraint(model, np.array([-10.0]))
    problem = OptimizationProblem("upper_pressure_bounds", con, 0.5, np.array([5.0]), np.array([5.0]))
    res = solve_chance(problem)
    assert res.x[0] == 5.0 and res.kkt.mu == 0.0 and res.kkt.max_residual == 0.0


def test_alpha_must_be_a_probability():
    rng = np.random.default_rng(0)
    con = BoxConstraint(KdeModel.fit(rng.normal(size=(50, 1))), np.array([-10.0]))
    with pytest.raises(ValueError):
        OptimizationProblem("upper_pressure_bounds", con, 1.0, np.array([0.0]), np.array([0.0]))
