import math

import numpy as np
import pytest

import oracles
from robustss.dual import (
    SaddleReport,
    conjugate_search,
    dual_objective,
    recover_optimizers,
    solve_v,
    solve_v_P,
    theorem2_verify,
)
from robustss.instances import Instance, build_instance, generate_random_instance
from robustss.measures import HullAmbiguity, Measure, build_ambiguity, equivalent_martingale_for
from robustss.pipeline import run_pipeline
from robustss.primal import solve_robust_primal
from robustss.tolerances import SADDLE_TOL
from robustss.utility import BoundedExpUtility, LogUtility, PowerUtility

LOG = LogUtility()
Q = oracles.Q_BIN
P_R1 = np.array([0.6, 0.4])
KL_R1 = oracles.kl(P_R1, Q)


def test_dual_objective_examples():
    assert dual_objective(P_R1, Q, 1.0, LOG) == pytest.approx(-0.9902877, abs=1e-7)
    assert dual_objective(P_R1, Q, 1.0, LOG) == pytest.approx(oracles.log_dual_value(1.0, P_R1, Q), abs=1e-14)
    assert dual_objective(P_R1, [1.0, 0.0], 1.0, LOG) == math.inf
    assert dual_objective(Q, Q, 1.0, LOG) == pytest.approx(-1.0, abs=1e-15)
    # bounded family: a q-null charged path costs p V(0) = p sup U
    b = BoundedExpUtility(0.5)
    assert dual_objective(P_R1, [1.0, 0.0], 1.0, b) == pytest.approx(0.6 * b.V(1.0 / 0.6) + 0.4 * 1.0, abs=1e-9)
    # p = 0 paths contribute nothing
    assert dual_objective([1.0, 0.0], [1.0, 0.0], 2.0, LOG) == pytest.approx(LOG.V(2.0))


def test_perspective_joint_convexity():
    rng = np.random.default_rng(11)
    for u in (LOG, PowerUtility(0.3), BoundedExpUtility(0.5)):
        for _ in range(50):
            p1, q1, p2, q2 = rng.dirichlet(np.ones(5), size=4)
            y = float(np.exp(rng.uniform(-1, 1)))
            mid = dual_objective((p1 + p2) / 2, (q1 + q2) / 2, y, u)
            avg = 0.5 * (dual_objective(p1, q1, y, u) + dual_objective(p2, q2, y, u))
            assert mid <= avg + 1e-10


def test_v_P_binomial(binomial_system):
    P = Measure(P_R1)
    s = solve_v_P(1.0, P, binomial_system, LOG)
    assert s.value == pytest.approx(-0.9902877, abs=1e-7)
    assert np.allclose(s.Q_hat.weights, Q, atol=1e-9)
    s2 = solve_v_P(2.0, P, binomial_system, LOG)
    assert s2.value == pytest.approx(-1.6834349, abs=1e-7)
    assert s2.value == pytest.approx(oracles.log_dual_value(2.0, P_R1, Q), abs=SADDLE_TOL)
    assert solve_v_P(1.0, Measure(Q), binomial_system, LOG).value == pytest.approx(-1.0, abs=SADDLE_TOL)


def test_v_P_power_closed_form(binomial_system):
    u = PowerUtility(0.5)
    P = np.array([0.3, 0.7])
    s = solve_v_P(0.8, Measure(P), binomial_system, u)
    ref = float(P @ u.V(0.8 * Q / P))
    assert s.value == pytest.approx(ref, abs=SADDLE_TOL)


def test_v_r1(r1):
    s = solve_v(1.0, r1.ambiguity, r1.system, r1.utility)
    assert s.value == pytest.approx(-1.0 + KL_R1, abs=SADDLE_TOL)
    assert np.allclose(s.P_hat.weights, P_R1, atol=1e-5)
    assert r1.system.is_calibrated(s.Q_hat.weights)
    assert 0 <= s.certified_gap <= SADDLE_TOL


def test_v_singleton_matches_v_P(binomial_system):
    P = Measure([0.45, 0.55])
    a = solve_v(1.3, HullAmbiguity([P]), binomial_system, LOG)
    b = solve_v_P(1.3, P, binomial_system, LOG)
    assert a.value == pytest.approx(b.value, abs=SADDLE_TOL)


def test_v_band_containing_Q(binomial_system):
    band = build_ambiguity({"type": "density_band", "alpha": 0.5, "beta": 2.0}, binomial_system)
    s = solve_v(1.0, band, binomial_system, LOG)
    assert s.value == pytest.approx(-1.0, abs=SADDLE_TOL)
    assert np.allclose(s.P_hat.weights, Q, atol=1e-5)
    assert np.allclose(s.Q_hat.weights, Q, atol=1e-9)


def test_v_convex_decreasing(r1):
    ys = np.logspace(-1, 1, 9)
    vs = np.array([solve_v(y, r1.ambiguity, r1.system, r1.utility).value for y in ys])
    assert np.all(np.diff(vs) < 0)
    # log: v(y) = -ln y - 1 + KL_R1 exactly
    assert np.allclose(vs, -np.log(ys) - 1 + KL_R1, atol=SADDLE_TOL)
    vm = np.array([solve_v(y, r1.ambiguity, r1.system, r1.utility).value for y in (ys[:-1] + ys[1:]) / 2])
    assert np.all(vm <= 0.5 * (vs[:-1] + vs[1:]) + 1e-10)


@pytest.mark.parametrize("x0, y_ref", [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)])
def test_conjugate_search_r1(r1, x0, y_ref):
    c = conjugate_search(x0, r1.ambiguity, r1.system, r1.utility)
    assert c.y_hat == pytest.approx(y_ref, abs=1e-6)
    assert c.value == pytest.approx(math.log(x0) + KL_R1, abs=3 * SADDLE_TOL)


def test_conjugate_search_singleton_Q(binomial_system):
    c = conjugate_search(1.0, HullAmbiguity([Measure(Q)]), binomial_system, LOG)
    assert c.y_hat == pytest.approx(1.0, abs=1e-6)
    assert c.value == pytest.approx(0.0, abs=SADDLE_TOL)


def test_recover_optimizers_r1(binomial_system):
    X, Y, price = recover_optimizers(Measure(P_R1), Measure(Q), 1.0, 1.0, LOG, binomial_system)
    assert np.allclose(Y, [10.0 / 9.0, 5.0 / 6.0], atol=1e-12)
    assert np.allclose(X, [0.9, 1.2], atol=1e-12)
    assert float(P_R1 @ (X * Y)) == pytest.approx(1.0, abs=1e-14)
    X, _, _ = recover_optimizers(Measure(Q), Measure(Q), 1.0, 1.0, LOG)
    assert np.allclose(X, 1.0)


def test_recover_extends_off_support():
    ms = {"T": 1, "s0": 1.0, "levels": [[0.5, 1.0, 2.0]], "options": []}
    inst = build_instance(ms, {"type": "hull", "measures": [[0.5, 0.0, 0.5]]}, "log")
    Qh = equivalent_martingale_for(Measure([0.5, 0.0, 0.5]), inst.system).measure
    X, Y, price = recover_optimizers(Measure([0.5, 0.0, 0.5]), Qh, 1.0, 1.0, LOG, inst.system)
    assert np.all(np.isfinite(X)) and np.all(X >= -1e-12)
    # the extension is the wealth of a strategy from the superhedging price
    assert price == pytest.approx(float(Qh.weights @ np.nan_to_num(X)), abs=1e-9)


def _r1_saddle(r1):
    run = run_pipeline(r1, 1.0)
    sd = run.report["saddle"]
    return SaddleReport(
        sd["x0"], sd["u_hat"], sd["u"], sd["y_hat"], sd["v_y"], sd["v_P_y"], np.asarray(sd["X_hat"]),
        np.asarray(sd["P_hat"]), np.asarray(sd["Q_hat"]), sd["minimax_gap"], sd["conjugacy_gap"],
    )


def test_theorem2_r1(r1):
    res = theorem2_verify(_r1_saddle(r1), LOG)
    assert res["pass"]
    for k in ("r1", "r2", "r3", "r4", "r5"):
        assert res[k]["value"] <= 1e-6


def test_theorem2_negative_control(r1):
    s = _r1_saddle(r1)
    s.y_hat += 0.1
    res = theorem2_verify(s, LOG)
    assert not res["pass"]
    assert not res["r2"]["pass"] and not res["r4"]["pass"]


def test_theorem2_singleton_Q(binomial_system):
    amb = HullAmbiguity([Measure(Q)])
    inst = Instance(binomial_system.market, binomial_system, amb, LOG, {}, {}, [])
    rep = run_pipeline(inst, 1.0).report
    assert rep["pass"]
    for k in ("r1", "r2", "r3", "r4", "r5"):
        assert rep["checks"][f"theorem2_{k}"]["value"] <= 1e-9


@pytest.mark.parametrize("seed", [2, 6, 7])
def test_weak_duality_grid(seed):
    ms, am = generate_random_instance(seed)
    inst = build_instance(ms, am, "log")
    u_hat = solve_robust_primal(1.0, inst.ambiguity, inst.system, inst.utility).value
    for y in np.logspace(-0.7, 0.7, 5):
        v = solve_v(float(y), inst.ambiguity, inst.system, inst.utility).value
        assert u_hat <= v + y + 2 * SADDLE_TOL
