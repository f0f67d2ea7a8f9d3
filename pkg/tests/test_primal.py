import math

import numpy as np
import pytest

import oracles
from robustss.instances import build_instance, generate_random_instance
from robustss.measures import HullAmbiguity, Measure, build_ambiguity
from robustss.primal import (
    AdmissibilityError,
    NoEquivalentMeasure,
    expected_utility,
    full_wealth,
    solve_robust_primal,
    solve_u,
    solve_u_P,
    verify_minimax,
)
from robustss.tolerances import SADDLE_TOL
from robustss.utility import LogUtility, PowerUtility

LOG = LogUtility()
Q = oracles.Q_BIN
KL_R1, _ = oracles.kl_min_binomial(0.4, 0.6)


def test_expected_utility_examples():
    P = Measure([0.5, 0.5])
    assert expected_utility(P, np.array([1.0, 1.0]), LOG) == 0.0
    assert expected_utility(P, np.array([0.75, 1.5]), LOG) == pytest.approx(0.0588915, abs=1e-7)
    with pytest.raises(AdmissibilityError):
        expected_utility(P, np.array([0.0, 2.0]), LOG)
    # a null path may carry zero wealth
    assert expected_utility(Measure([0.0, 1.0]), np.array([0.0, 1.0]), LOG) == 0.0


def test_u_P_at_martingale_measure(binomial_system):
    sol = solve_u_P(1.0, Measure(Q), binomial_system, LOG)
    assert sol.value == pytest.approx(0.0, abs=SADDLE_TOL)
    assert np.allclose(sol.wealth, 1.0, atol=1e-7)


def test_u_P_complete_market(binomial_system):
    P = np.array([0.5, 0.5])
    X, val = oracles.complete_market_log(1.0, P, Q)
    brute, delta = oracles.brute_force_delta(P, 1.0, np.log)
    sol = solve_u_P(1.0, Measure(P), binomial_system, LOG)
    assert sol.value == pytest.approx(val, abs=SADDLE_TOL)
    assert sol.value == pytest.approx(0.0588915, abs=1e-7)
    assert sol.value == pytest.approx(brute, abs=1e-8)
    assert np.allclose(sol.wealth, X, atol=1e-7)
    assert sol.strategy.delta[0] == pytest.approx(delta, abs=1e-4)
    assert 0 <= sol.certified_gap <= SADDLE_TOL
    assert sol.admissible
    sol2 = solve_u_P(2.0, Measure(P), binomial_system, LOG)
    assert sol2.value == pytest.approx(val + math.log(2.0), abs=SADDLE_TOL)


def test_u_P_power_closed_form(binomial_system):
    P = np.array([0.3, 0.7])
    X, val = oracles.complete_market_power(1.5, P, Q, 0.5)
    sol = solve_u_P(1.5, Measure(P), binomial_system, PowerUtility(0.5))
    assert sol.value == pytest.approx(val, abs=SADDLE_TOL)
    assert np.allclose(sol.wealth, X, atol=1e-6)


def test_u_P_needs_equivalent_measure(binomial_system):
    with pytest.raises(NoEquivalentMeasure):
        solve_u_P(1.0, Measure([0.0, 1.0]), binomial_system, LOG)


@pytest.mark.parametrize("seed", [1, 4, 9, 13, 22])
def test_u_P_against_slsqp(seed):
    ms, am = generate_random_instance(seed, kind="hull")
    inst = build_instance(ms, am, "log")
    opts = [(o["kind"], o["maturity"], o["strike"], o["price"]) for o in ms["options"]]
    _, G = oracles.gains_matrix(ms["s0"], ms["levels"], opts)
    P = Measure(np.asarray(am["measures"][0]))
    ref, _ = oracles.u_P_numeric(1.0, P.weights, G, np.log, lambda w: 1.0 / w)
    sol = solve_u_P(1.0, P, inst.system, LOG)
    # SLSQP is a lower bound on the true sup; the certified value must not be worse
    assert sol.value >= ref - 1e-7
    assert sol.value <= ref + 1e-5
    assert np.allclose(full_wealth(inst.system, sol.strategy), sol.wealth)


def test_r1_robust_primal(r1):
    sol = solve_robust_primal(1.0, r1.ambiguity, r1.system, r1.utility)
    assert sol.value == pytest.approx(0.0097123, abs=1e-6)
    assert sol.value == pytest.approx(KL_R1, abs=SADDLE_TOL)
    assert np.allclose(sol.worst_measure.weights, [0.6, 0.4], atol=1e-6)
    assert np.allclose(sol.wealth, [0.9, 1.2], atol=1e-6)
    assert 0 <= sol.certified_gap <= SADDLE_TOL


def test_r1_worst_measure_optimality(r1):
    sol = solve_robust_primal(1.0, r1.ambiguity, r1.system, r1.utility)
    for v in r1.ambiguity.vertices:
        assert expected_utility(v, sol.wealth, LOG) >= sol.value - SADDLE_TOL


def test_singleton_hull_equals_u_P(binomial_system):
    P = Measure([0.45, 0.55])
    sol = solve_robust_primal(1.0, HullAmbiguity([P]), binomial_system, LOG)
    ref = solve_u_P(1.0, P, binomial_system, LOG)
    assert abs(sol.value - ref.value) <= 1e-9
    rv = solve_u(1.0, HullAmbiguity([P]), binomial_system, LOG)
    assert abs(rv.value - ref.value) <= 1e-9
    assert verify_minimax(sol.value, rv.value)["gap"] <= 1e-9


def test_hull_containing_Q(binomial_system):
    amb = HullAmbiguity([Measure([0.5, 0.5]), Measure([0.8, 0.2])])  # Q = (2/3, 1/3) is a mix
    sol = solve_robust_primal(1.0, amb, binomial_system, LOG)
    assert sol.value == pytest.approx(0.0, abs=SADDLE_TOL)
    assert np.allclose(sol.wealth, 1.0, atol=1e-6)


def test_r1_robust_value(r1):
    rv = solve_u(1.0, r1.ambiguity, r1.system, r1.utility)
    assert rv.value == pytest.approx(KL_R1, abs=SADDLE_TOL)
    assert np.allclose(rv.measure.weights, [0.6, 0.4], atol=1e-5)
    assert 0 <= rv.certified_gap <= SADDLE_TOL


def test_band_robust_value(binomial_system):
    band = build_ambiguity({"type": "density_band", "alpha": 0.5, "beta": 2.0}, binomial_system)
    rv = solve_u(1.0, band, binomial_system, LOG)
    assert rv.value == pytest.approx(0.0, abs=SADDLE_TOL)
    assert np.allclose(rv.measure.weights, Q, atol=1e-5)
    sol = solve_robust_primal(1.0, band, binomial_system, LOG)
    assert sol.value == pytest.approx(0.0, abs=SADDLE_TOL)


def test_minimax_r1_and_negative_control(r1):
    a = solve_robust_primal(1.0, r1.ambiguity, r1.system, r1.utility).value
    b = solve_u(1.0, r1.ambiguity, r1.system, r1.utility).value
    rep = verify_minimax(a, b)
    assert rep["pass"] and rep["gap"] <= 2 * SADDLE_TOL
    assert not verify_minimax(a + 1e-3, b)["pass"]


def test_value_monotone_concave_and_scaling(r1):
    xs = [0.5, 1.0, 2.0, 4.0]
    vals = [solve_robust_primal(x, r1.ambiguity, r1.system, r1.utility).value for x in xs]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # midpoint concavity on the doubling grid, in log-wealth: the midpoint of (0.5, 2) is 1.25
    mid = solve_robust_primal(1.25, r1.ambiguity, r1.system, r1.utility).value
    assert mid >= 0.5 * (vals[0] + vals[2]) - 1e-6
    for lam, x in ((2.0, 1.0), (0.5, 1.0), (10.0, 1.0)):
        v = solve_robust_primal(lam * x, r1.ambiguity, r1.system, r1.utility).value
        assert v - vals[1] == pytest.approx(math.log(lam), abs=1e-6)


def test_primal_rejects_nonpositive_wealth(r1):
    with pytest.raises(ValueError):
        solve_robust_primal(0.0, r1.ambiguity, r1.system, r1.utility)


@pytest.mark.parametrize("seed", [0, 3, 5, 8])
@pytest.mark.parametrize("utility", ["log", "power:0.5", "bexp:0.5"])
def test_random_minimax(seed, utility):
    ms, am = generate_random_instance(seed)
    inst = build_instance(ms, am, utility)
    a = solve_robust_primal(1.0, inst.ambiguity, inst.system, inst.utility)
    b = solve_u(1.0, inst.ambiguity, inst.system, inst.utility)
    assert verify_minimax(a.value, b.value)["pass"]
    E = inst.ambiguity.union_support()
    assert np.all(a.wealth[E] >= 0)
