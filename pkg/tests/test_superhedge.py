import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from robustss.instances import build_instance, generate_random_instance
from robustss.measures import Measure
from robustss.superhedge import (
    ClaimVector,
    closedness_probe,
    duality_gap,
    homogeneity_subadditivity,
    l0_bound_check,
    max_calibrated_expectation,
    polar_membership_C,
    product_inequality,
    random_calibrated_measures,
    random_member_claim,
    solidity_probe,
    superhedge_price,
)

CALL = np.array([0.0, 1.0])  # (K=1 call on the binomial: down pays 0, up pays 1)
P_R1 = Measure([0.6, 0.4])


def test_binomial_call(binomial_system):
    x_ref, d_ref = oracles.replicate_2x2(CALL)
    sh = superhedge_price(CALL, binomial_system)
    assert sh.price == pytest.approx(1.0 / 3.0, abs=1e-10)
    assert sh.price == pytest.approx(x_ref, abs=1e-12)
    assert sh.strategy.delta[0] == pytest.approx(d_ref, abs=1e-10)
    assert np.all(sh.wealth >= CALL - 1e-12)


def test_constant_claim(binomial_system):
    sh = superhedge_price(np.ones(2), binomial_system)
    assert sh.price == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sh.strategy.theta, 0.0, atol=1e-12)
    g = duality_gap(np.ones(2), binomial_system)
    assert g["gap"] <= 1e-12


def test_scaled_call(binomial_system):
    x_ref, _ = oracles.replicate_2x2(4 * CALL)
    assert superhedge_price(4 * CALL, binomial_system).price == pytest.approx(x_ref, abs=1e-10)
    assert x_ref == pytest.approx(4.0 / 3.0)


def test_max_calibrated_expectation(binomial_system):
    v, Q = max_calibrated_expectation(CALL, binomial_system)
    assert v == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert np.allclose(Q.weights, oracles.Q_BIN, atol=1e-12)
    assert max_calibrated_expectation([0.9, 1.2], binomial_system)[0] == pytest.approx(1.0, abs=1e-12)
    assert max_calibrated_expectation([1.0, 1.0], binomial_system)[0] == pytest.approx(1.0, abs=1e-12)


def test_binomial_duality_gap(binomial_system):
    g = duality_gap(CALL, binomial_system)
    assert g["gap"] <= 1e-10 and g["pass"]


def test_claim_vector_contract():
    with pytest.raises(ValueError):
        ClaimVector([1.0, -0.1])
    with pytest.raises(ValueError):
        ClaimVector([1.0, 2.0], scope=[True])
    c = ClaimVector([1.0, 2.0], scope=[True, False])
    assert c.scope.dtype == bool


def test_polar_membership_examples(binomial_system):
    r = polar_membership_C([0.9, 1.2], P_R1, binomial_system)
    assert r.member and r.max_expectation == pytest.approx(1.0, abs=1e-12)
    assert np.all(r.wealth >= np.array([0.9, 1.2]) - 1e-9)
    r = polar_membership_C([0.0, 2.0], P_R1, binomial_system)
    assert r.member and r.max_expectation == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert r.strategy.x == 1.0
    r = polar_membership_C([0.0, 4.0], P_R1, binomial_system)
    assert not r.member
    assert np.allclose(r.density, [10.0 / 9.0, 5.0 / 6.0], atol=1e-12)
    assert r.violation == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_l0_bound_examples():
    Q = Measure(oracles.Q_BIN)
    r = l0_bound_check(P_R1, Q, [0.9, 1.2], 4.0)
    assert r["lhs"] == 0.0 and r["pass"]
    r = l0_bound_check(P_R1, Q, [0.9, 1.2], 1.0)
    assert r["lhs"] == pytest.approx(0.4)
    assert r["rhs"] == pytest.approx(1.4)
    assert r["pass"]
    with pytest.raises(ValueError):
        l0_bound_check(P_R1, Measure([1.0, 0.0]), [1.0, 1.0], 2.0)


def _instance(seed):
    ms, am = generate_random_instance(seed)
    return build_instance(ms, am, "log")


@pytest.mark.parametrize("seed", range(6))
def test_random_duality(seed):
    inst = _instance(seed)
    rng = np.random.default_rng(seed)
    n = inst.system.n_paths
    for _ in range(10):
        c = rng.exponential(size=n) * (rng.uniform(size=n) < 0.7)
        g = duality_gap(c, inst.system)
        assert g["gap"] <= 1e-8
        sh = superhedge_price(c, inst.system)
        assert np.all(sh.wealth >= c - 1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_random_polar_probes(seed):
    inst = _instance(seed)
    rng = np.random.default_rng(100 + seed)
    E = inst.ambiguity.union_support()
    P = Measure.clean(rng.dirichlet(np.ones(E.sum())) @ np.eye(inst.system.n_paths)[E], drop=0.0)
    for _ in range(5):
        c = random_member_claim(P, inst.system, rng)
        assert polar_membership_C(c, P, inst.system).member
        assert all(solidity_probe(c, P, inst.system, rng))
        assert all(product_inequality(c, P, inst.system, rng))
        Qs = random_calibrated_measures(inst.system, P.support, rng, 3)
        for q in Qs:
            r = l0_bound_check(P, Measure.clean(q, drop=0.0), c, float(rng.uniform(0.5, 5.0)))
            assert r["pass"]
    assert all(closedness_probe(P, inst.system, rng))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_homogeneity_subadditivity(seed, lam):
    rng = np.random.default_rng(seed)
    inst = _instance(seed % 20)
    n = inst.system.n_paths
    r = homogeneity_subadditivity(rng.exponential(size=n), rng.exponential(size=n), inst.system, lam)
    assert r["homogeneity"] and r["subadditivity"]
