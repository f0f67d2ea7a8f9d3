"""Superhedging LP, calibrated-expectation LP and finite-scale polar-set checks.

Claims are per-path arrays in lexicographic path order. A *scope* mask selects
the paths where domination is required (a measure's support, or every path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import TradingStrategy
from .measures import Measure, MartingaleSystem
from .optim.lp import LinearProgram, LPError, solve_lp
from .tolerances import DUALITY_GAP_TOL, FEAS_TOL


@dataclass(frozen=True)
class ClaimVector:
    values: np.ndarray
    scope: np.ndarray | None = None  # boolean mask; None means every path
    role: str = "claim"  # "claim" or "density"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("claim values must be finite")
        if np.any(v < 0):
            raise ValueError(f"claim values must be nonnegative, got min {v.min()}")
        object.__setattr__(self, "values", v)
        if self.scope is not None:
            s = np.asarray(self.scope, dtype=bool).reshape(-1)
            if s.size != v.size:
                raise ValueError("scope mask and claim have different lengths")
            object.__setattr__(self, "scope", s)


@dataclass
class SuperhedgeResult:
    price: float
    strategy: TradingStrategy | None
    wealth: np.ndarray | None  # x* + gains @ theta on every path
    status: str
    diagnostics: dict = field(default_factory=dict)


def _claim_and_scope(c, n, scope):
    if isinstance(c, ClaimVector):
        vals = c.values
        scope = c.scope if scope is None else scope
    else:
        vals = np.asarray(c, dtype=float).reshape(-1)
    if vals.size != n:
        raise ValueError(f"claim has {vals.size} values for {n} paths")
    mask = np.ones(n, dtype=bool) if scope is None else np.asarray(scope, dtype=bool)
    if mask.dtype == bool and mask.size != n:
        raise ValueError("scope mask has the wrong length")
    return vals, mask


def superhedge_price(c, system: MartingaleSystem, scope=None, nonneg_on=None) -> SuperhedgeResult:
    """min x such that x + gains @ theta >= c on ``scope`` (and >= 0 on ``nonneg_on``)."""
    n = system.n_paths
    vals, mask = _claim_and_scope(c, n, scope)
    G = system.gains
    k = G.shape[1]
    rows = [np.hstack([-np.ones((mask.sum(), 1)), -G[mask]])]
    rhs = [-vals[mask]]
    if nonneg_on is not None:
        extra = np.asarray(nonneg_on, dtype=bool) & ~mask
        if extra.any():
            rows.append(np.hstack([-np.ones((extra.sum(), 1)), -G[extra]]))
            rhs.append(np.zeros(extra.sum()))
    cvec = np.r_[1.0, np.zeros(k)]
    res = solve_lp(LinearProgram(cvec, np.vstack(rows), np.concatenate(rhs), lb=-np.inf))
    if res.status == "unbounded":
        return SuperhedgeResult(-math.inf, None, None, "unbounded", {"certificate": res.certificate})
    if not res.ok:
        raise LPError(f"superhedging LP failed: {res.status}")
    x, theta = res.x[0], res.x[1:]
    strat = TradingStrategy.from_theta(x, theta, system.n_nodes)
    return SuperhedgeResult(float(x), strat, x + G @ theta, "optimal", {"residuals": res.residuals})


def max_calibrated_expectation(c, system: MartingaleSystem, scope=None):
    """max E_Q[c] over calibrated Q vanishing off ``scope``. Returns (value, Q)."""
    n = system.n_paths
    vals, mask = _claim_and_scope(c, n, scope)
    ub = np.where(mask, np.inf, 0.0)
    res = solve_lp(LinearProgram(vals, A_eq=system.A, b_eq=system.b, ub=ub, sense="max"))
    if res.status == "infeasible":
        raise LPError("no calibrated measure lives on the scope")
    if not res.ok:
        raise LPError(f"calibrated-expectation LP failed: {res.status}")
    return float(res.fun), Measure.clean(np.clip(res.x, 0, None), drop=0.0)


def duality_gap(c, system: MartingaleSystem, scope=None, tol: float = DUALITY_GAP_TOL) -> dict:
    sh = superhedge_price(c, system, scope)
    val, Q = max_calibrated_expectation(c, system, scope)
    gap = abs(sh.price - val)
    return {"superhedge": sh.price, "max_expectation": val, "gap": gap, "tol": tol, "pass": bool(gap <= tol), "Q": Q}


@dataclass
class PolarResult:
    member: bool
    max_expectation: float
    strategy: TradingStrategy | None = None  # wealth-1 strategy dominating c on support(P)
    wealth: np.ndarray | None = None
    density: np.ndarray | None = None  # dQ/dP of the violating Q, on support(P)
    violation: float = 0.0  # E_P[c d] of the counterexample


def polar_membership_C(c, P: Measure, system: MartingaleSystem, slack: float = FEAS_TOL) -> PolarResult:
    """Is c dominated on support(P) by terminal wealth from initial capital 1?"""
    S = P.support
    vals, _ = _claim_and_scope(c, system.n_paths, None)
    val, Q = max_calibrated_expectation(vals, system, scope=S)
    if val <= 1.0 + slack:
        sh = superhedge_price(vals, system, scope=S)
        theta = sh.strategy.theta
        strat = TradingStrategy.from_theta(1.0, theta, system.n_nodes)
        return PolarResult(True, val, strat, 1.0 + system.gains @ theta)
    d = np.zeros(system.n_paths)
    d[S] = Q.weights[S] / P.weights[S]
    return PolarResult(False, val, density=d, violation=float(P.weights[S] @ (vals[S] * d[S])))


def l0_bound_check(P: Measure, Q: Measure, c, K: float) -> dict:
    """P(c > K) <= P(dQ/dP <= 1/sqrt K) + E_P[(dQ/dP) c] / sqrt K, by direct summation."""
    if not K > 0:
        raise ValueError("K must be positive")
    p, q = P.weights, Q.weights
    S = p > 0
    if np.any((q > 0) != S):
        raise ValueError("Q must be equivalent to P")
    vals = np.asarray(c, dtype=float)
    d = np.zeros(p.size)
    d[S] = q[S] / p[S]
    rk = 1.0 / math.sqrt(K)
    lhs = float(p[S & (vals > K)].sum())
    rhs = float(p[S & (d <= rk)].sum()) + rk * float(p[S] @ (d[S] * vals[S]))
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs <= rhs + 1e-12)}


# -- randomized probes of the polar structure -----------------------------------------


def random_calibrated_measures(system: MartingaleSystem, support, rng, n: int):
    """Calibrated measures on ``support``: random mixtures of LP vertices and the max-min point."""
    from .measures import find_calibrated_measure

    mask = np.asarray(support, dtype=bool)
    base = find_calibrated_measure(system, mask).measure.weights
    ub = np.where(mask, np.inf, 0.0)
    verts = [base]
    for _ in range(4):
        res = solve_lp(LinearProgram(rng.normal(size=system.n_paths), A_eq=system.A, b_eq=system.b, ub=ub))
        if res.ok:
            verts.append(np.clip(res.x, 0, None))
    V = np.vstack(verts)
    out = []
    for _ in range(n):
        lam = rng.dirichlet(np.ones(len(verts)))
        lam[0] += 0.05  # keep every path of the support charged
        q = lam @ V
        out.append(q / q.sum())
    return out


def random_member_claim(P: Measure, system: MartingaleSystem, rng) -> np.ndarray:
    """Random c in C_P: a random admissible wealth from capital 1, shaved by a random solid factor."""
    S = P.support
    G = system.gains
    d = rng.normal(size=G.shape[1])
    g = G[S] @ d
    neg = g < 0
    t = 0.9 / max(float(np.max(-g[neg])), 1e-12) if neg.any() else 1.0
    t *= rng.uniform()
    c = np.zeros(system.n_paths)
    c[S] = (1.0 + t * g) * rng.uniform(0.5, 1.0, size=S.sum())
    return c


def solidity_probe(c, P: Measure, system: MartingaleSystem, rng, n: int = 5) -> list:
    """For certified c, every 0 <= c' <= c must also be certified."""
    base = polar_membership_C(c, P, system)
    out = []
    if not base.member:
        return out
    for _ in range(n):
        cp = np.asarray(c) * rng.uniform(0, 1, size=len(c))
        out.append(bool(polar_membership_C(cp, P, system).member))
    return out


def product_inequality(c, P: Measure, system: MartingaleSystem, rng, n: int = 5, tol: float = 1e-8) -> list:
    """E_P[c dQ/dP] <= 1 for calibrated Q on support(P); returns the list of slack values."""
    S = P.support
    vals = np.asarray(c, dtype=float)
    out = []
    for q in random_calibrated_measures(system, S, rng, n):
        d = q[S] / P.weights[S]
        out.append(float(P.weights[S] @ (vals[S] * d)) - 1.0 <= tol)
    return out


def closedness_probe(P: Measure, system: MartingaleSystem, rng, n_terms: int = 6) -> list:
    """Claims from strategies converging to an admissible limit; every term and the limit are certified."""
    S = P.support
    G = system.gains
    d = rng.normal(size=G.shape[1])
    g = G[S] @ d
    neg = g < 0
    t = 1.0 / float(np.max(-g[neg])) if neg.any() else 1.0
    theta = t * d  # boundary of admissibility: 1 + G theta >= 0 with equality somewhere
    out = []
    for k in range(1, n_terms + 1):
        th = (1.0 - 1.0 / (k + 1)) * theta
        c = np.clip(1.0 + G @ th, 0, None)
        out.append(bool(polar_membership_C(c, P, system).member))
    c_lim = np.clip(1.0 + G @ theta, 0, None)
    out.append(bool(polar_membership_C(c_lim, P, system).member))
    return out


def homogeneity_subadditivity(c1, c2, system: MartingaleSystem, lam: float, scope=None, tol: float = 1e-9) -> dict:
    p1 = superhedge_price(c1, system, scope).price
    p2 = superhedge_price(c2, system, scope).price
    pl = superhedge_price(lam * np.asarray(c1), system, scope).price
    ps = superhedge_price(np.asarray(c1) + np.asarray(c2), system, scope).price
    return {
        "homogeneity": abs(pl - lam * p1) <= tol * max(1.0, abs(lam * p1)),
        "subadditivity": ps <= p1 + p2 + tol,
    }
