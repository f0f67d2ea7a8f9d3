"""Robust primal problem: sup over semi-static strategies of the worst-case expected utility.

Two independent routes are implemented:

* :func:`solve_robust_primal` solves sup_theta inf_P directly, as one concave
  program whose inner infimum is replaced by its LP dual (hull: epigraph over
  the vertices; density band: dual of the lifted (p, r) LP).
* :func:`solve_u` solves inf_P u_P(x), minimizing the convex map P -> u_P(x)
  whose every evaluation is a full inner utility maximization.

:func:`verify_minimax` compares them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import MarketError, TradingStrategy
from .measures import (
    Ambiguity,
    DensityBand,
    HullAmbiguity,
    Measure,
    MartingaleSystem,
    equivalent_martingale_for,
    find_calibrated_measure,
)
from .optim.barrier import BarrierError, _solve_pd, barrier_maximize, newton_maximize
from .optim.concave import IterationCapExceeded, Polytope, cut_bound, maximize_concave
from .optim.lp import LinearProgram, solve_lp
from .tolerances import SADDLE_TOL, SOLVER_GAP, XMIN
from .utility import UtilityFamily, clamp_wealth


class AdmissibilityError(ValueError):
    """Terminal wealth is not positive on a path the measure charges."""


class NoEquivalentMeasure(MarketError):
    def __init__(self, message):
        super().__init__(message, "assumption_P2")


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PrimalSolution:
    value: float
    strategy: TradingStrategy
    worst_measure: Measure
    certified_gap: float
    wealth: np.ndarray  # terminal wealth on every path
    support: np.ndarray  # paths where admissibility is enforced
    diagnostics: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return bool(np.all(self.wealth[self.support] >= -1e-12))


@dataclass(frozen=True)
class StrategyBasis:
    """Orthonormal coordinates for the wealth increments reachable on a set of paths.

    W = x + Q phi on ``paths``; ``theta = M phi`` maps back to node/instrument holdings.
    """

    paths: np.ndarray  # boolean mask
    Q: np.ndarray
    M: np.ndarray
    n_nodes: int

    @classmethod
    def build(cls, system: MartingaleSystem, paths) -> "StrategyBasis":
        paths = np.asarray(paths, dtype=bool)
        G = system.gains[paths]
        if G.shape[1] == 0:
            return cls(paths, np.zeros((G.shape[0], 0)), np.zeros((0, 0)), system.n_nodes)
        U, s, Vt = np.linalg.svd(G, full_matrices=False)
        r = int(np.sum(s > 1e-10 * max(1.0, s[0]))) if s.size else 0
        return cls(paths, U[:, :r], Vt[:r].T / s[:r], system.n_nodes)

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    def strategy(self, x: float, phi) -> TradingStrategy:
        theta = self.M @ np.asarray(phi, dtype=float) if self.dim else np.zeros(self.M.shape[0])
        return TradingStrategy.from_theta(x, theta, self.n_nodes)


def full_wealth(system: MartingaleSystem, strategy: TradingStrategy) -> np.ndarray:
    return strategy.x + system.gains @ strategy.theta


def expected_utility(P: Measure, strategy_or_wealth, utility: UtilityFamily, system: MartingaleSystem | None = None) -> float:
    """E_P U(wealth). Wealth <= 0 on a charged path is an admissibility violation."""
    if isinstance(strategy_or_wealth, TradingStrategy):
        if system is None:
            raise ValueError("a strategy needs the martingale system to evaluate wealth")
        wealth = full_wealth(system, strategy_or_wealth)
    else:
        wealth = np.asarray(strategy_or_wealth, dtype=float)
    s = P.support
    w = wealth[s]
    if np.any(w <= 0):
        raise AdmissibilityError(f"wealth {w.min():.3e} <= 0 on a path with positive probability")
    return float(P.weights[s] @ utility.U(clamp_wealth(w, XMIN)))


# -- per-measure problem u_P -------------------------------------------------


def _utility_objective(x, p, Q, utility):
    def fun(phi, order):
        W = x + Q @ phi
        if np.any(W <= 0):
            return -math.inf if order == 0 else (-math.inf, None, None)
        f = float(p @ utility.U(W))
        if order == 0:
            return f
        g = Q.T @ (p * utility.dU(W))
        H = (Q * (p * utility.d2U(W))[:, None]).T @ Q
        return f, g, H

    return fun


def _inner_u_P(x, p, basis: StrategyBasis, utility, phi0=None):
    """Newton solve of max E_p U(x + Q phi) on the basis paths. Returns (phi, value, W)."""
    if basis.dim == 0:
        W = np.full(basis.Q.shape[0], float(x))
        return np.zeros(0), float(p @ utility.U(W)), W
    fun = _utility_objective(x, p, basis.Q, utility)
    phi0 = np.zeros(basis.dim) if phi0 is None else phi0
    if not np.isfinite(fun(phi0, 0)):
        phi0 = np.zeros(basis.dim)
    phi, f, _ = newton_maximize(fun, phi0)
    return phi, f, x + basis.Q @ phi


def _certify_strategy(fun, basis, x, phi, tol, extra_cuts=()):
    """Cutting-plane certificate of a near-optimal phi over the admissible polytope."""
    poly = Polytope(A_ub=-basis.Q, b_ub=np.full(basis.Q.shape[0], float(x)), n=basis.dim)
    f = lambda z: fun(z, 0)  # noqa: E731
    grad = lambda z: fun(z, 2)[1]  # noqa: E731
    return maximize_concave(f, grad, poly, tol, x0=phi, cuts=list(extra_cuts))


def solve_u_P(x: float, P: Measure, system: MartingaleSystem, utility: UtilityFamily, tol: float = SADDLE_TOL) -> PrimalSolution:
    """u_P(x) = sup over strategies of E_P U(wealth), admissibility on support(P)."""
    if not x > 0:
        raise ValueError(f"initial wealth must be positive, got {x}")
    eq = equivalent_martingale_for(P, system)
    if not eq.feasible:
        raise NoEquivalentMeasure("no calibrated martingale measure is equivalent to P")
    S = P.support
    basis = StrategyBasis.build(system, S)
    p = P.weights[S]
    phi, f, _ = _inner_u_P(x, p, basis, utility)
    gap = 0.0
    if basis.dim:
        cert = _certify_strategy(_utility_objective(x, p, basis.Q, utility), basis, x, phi, tol)
        phi, f, gap = cert.x, cert.value, cert.certified_gap
    strat = basis.strategy(x, phi)
    return PrimalSolution(f, strat, P, gap, full_wealth(system, strat), S, {"basis_dim": basis.dim})


# -- robust primal, sup-inf route ------------------------------------------------


def _check_assumption_p2(ambiguity: Ambiguity, system: MartingaleSystem):
    if isinstance(ambiguity, HullAmbiguity):
        for k, v in enumerate(ambiguity.vertices):
            if not equivalent_martingale_for(v, system).feasible:
                raise NoEquivalentMeasure(f"hull vertex {k} has no equivalent calibrated martingale measure")


def _phi_ranges(Q, x, phi):
    """max over the admissible polytope of |phi_i - phi*_i|, per coordinate."""
    n, d = Q.shape
    out = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        for sense in ("min", "max"):
            res = solve_lp(LinearProgram(e, -Q, np.full(n, float(x)), lb=-np.inf, sense=sense))
            if not res.ok:
                return np.full(d, np.inf)
            out[i] = max(out[i], abs(res.fun - phi[i]))
    return out


def _band_certificate_measure(band: DensityBand, E, W, Q, utility, R) -> np.ndarray:
    """Band member whose utility cut at the current strategy is tightest.

    Minimizes E_P U(W) + sum_i R_i |g_i| with g = Q' (p U'(W)), an upper bound on
    the cut's maximum over the admissible polytope.
    """
    n = band.n_paths
    f = np.zeros(n)
    f[E] = utility.U(W)
    base = band.lifted_lp(f)
    d = Q.shape[1]
    Gp = np.zeros((d, n))
    Gp[:, E] = Q.T * utility.dU(W)[None, :]
    Z = np.zeros((d, n))
    I = np.eye(d)
    A_ub = np.vstack(
        [np.hstack([base.A_ub, np.zeros((2 * n, d))]), np.hstack([Gp, Z, -I]), np.hstack([-Gp, Z, -I])]
    )
    b_ub = np.r_[base.b_ub, np.zeros(2 * d)]
    A_eq = np.hstack([base.A_eq, np.zeros((base.A_eq.shape[0], d))])
    res = solve_lp(LinearProgram(np.r_[f, np.zeros(n), R], A_ub, b_ub, A_eq, base.b_eq))
    p = np.clip(res.x[:n], 0, None)
    return (p / p.sum())[E]


def solve_robust_primal(
    x: float, ambiguity: Ambiguity, system: MartingaleSystem, utility: UtilityFamily, tol: float = SADDLE_TOL
) -> PrimalSolution:
    """sup over strategies of inf over the ambiguity set of E_P U(wealth)."""
    if not x > 0:
        raise ValueError(f"initial wealth must be positive, got {x}")
    _check_assumption_p2(ambiguity, system)
    E = ambiguity.union_support()
    basis = StrategyBasis.build(system, E)
    Q = basis.Q
    d = basis.dim
    nE = int(E.sum())
    U0 = float(utility.U(x))

    if isinstance(ambiguity, HullAmbiguity):
        Pi = ambiguity.matrix[:, E]  # (K, nE)
        K = Pi.shape[0]

        def cons(z, order):
            phi, s = z[:d], z[d]
            W = x + Q @ phi
            if np.any(W <= 0):
                return None
            uW = utility.U(W)
            h = Pi @ uW - s
            if order == 0:
                return h
            J = np.hstack([(Pi * utility.dU(W)) @ Q, -np.ones((K, 1))])
            d2 = utility.d2U(W)

            def hess(w):
                H = np.zeros((d + 1, d + 1))
                H[:d, :d] = (Q * ((w @ Pi) * d2)[:, None]).T @ Q
                return H

            return h, J, hess

        c = np.r_[np.zeros(d), 1.0]
        z0 = np.r_[np.zeros(d), U0 - 1.0]
        A_ub = np.hstack([-Q, np.zeros((nE, 1))])
        b_ub = np.full(nE, float(x))
        res = barrier_maximize(c, z0, constraints=cons, A_ub=A_ub, b_ub=b_ub, gap_tol=SOLVER_GAP)
        phi = res.x[:d]
        lam = res.multipliers
        p_star = (lam / lam.sum()) @ Pi
        vertex_cuts = [Pi[k] for k in range(K)]
    elif isinstance(ambiguity, DensityBand):
        A_r, b_r = system.restricted(np.flatnonzero(E))
        m_r = A_r.shape[0]
        al, be = ambiguity.alpha, ambiguity.beta
        # z = (phi, mu, nu, lam1, lam2)
        i_mu = slice(d, d + m_r)
        i_nu = d + m_r
        i_l1 = slice(i_nu + 1, i_nu + 1 + nE)
        i_l2 = slice(i_nu + 1 + nE, i_nu + 1 + 2 * nE)
        nz = i_nu + 1 + 2 * nE
        eye = np.eye(nE)

        def cons(z, order):
            phi = z[:d]
            W = x + Q @ phi
            if np.any(W <= 0):
                return None
            h = utility.U(W) - z[i_nu] - z[i_l1] + z[i_l2]
            if order == 0:
                return h
            J = np.zeros((nE, nz))
            J[:, :d] = Q * utility.dU(W)[:, None]
            J[:, i_nu] = -1.0
            J[:, i_l1] = -eye
            J[:, i_l2] = eye
            d2 = utility.d2U(W)

            def hess(w):
                H = np.zeros((nz, nz))
                H[:d, :d] = (Q * (w * d2)[:, None]).T @ Q
                return H

            return h, J, hess

        # linear: A_r' mu - al lam1 + be lam2 <= 0 ; -lam <= 0 ; -Q phi <= x
        A_ub = np.zeros((nE + 2 * nE + nE, nz))
        A_ub[:nE, i_mu] = A_r.T
        A_ub[:nE, i_l1] = -al * eye
        A_ub[:nE, i_l2] = be * eye
        A_ub[nE : 2 * nE, i_l1] = -eye
        A_ub[2 * nE : 3 * nE, i_l2] = -eye
        A_ub[3 * nE :, :d] = -Q
        b_ub = np.r_[np.zeros(3 * nE), np.full(nE, float(x))]
        c = np.zeros(nz)
        c[i_mu] = b_r
        c[i_nu] = 1.0
        z0 = np.zeros(nz)
        z0[i_l1] = 1.0
        z0[i_l2] = al / (2 * be)
        z0[i_nu] = U0 - 2.0
        res = barrier_maximize(c, z0, constraints=cons, A_ub=A_ub, b_ub=b_ub, gap_tol=SOLVER_GAP)
        phi = res.x[:d]
        W = x + Q @ phi
        R = _phi_ranges(Q, x, phi) if d else np.zeros(0)
        p_star = _band_certificate_measure(ambiguity, E, W, Q, utility, np.minimum(R, 1e6))
        vertex_cuts = []
    else:
        raise TypeError(f"unsupported ambiguity {type(ambiguity).__name__}")

    if not res.converged:
        raise ConvergenceError("robust primal barrier did not converge")

    W = x + Q @ phi
    f_full = np.zeros(system.n_paths)
    f_full[E] = utility.U(W)
    value, worst = ambiguity.worst_case_expectation(f_full)

    # certificate: every P in the set gives an affine majorant of the robust objective
    cuts = []
    for p in [p_star, *vertex_cuts]:
        fk, gk, _ = _utility_objective(x, p, Q, utility)(phi, 2)
        cuts.append((phi, fk, gk))

    def robust_f(z):
        Wz = x + Q @ z
        if np.any(Wz <= 0):
            return -math.inf
        ff = np.zeros(system.n_paths)
        ff[E] = utility.U(Wz)
        return ambiguity.worst_case_expectation(ff)[0]

    def robust_g(z):
        Wz = x + Q @ z
        ff = np.zeros(system.n_paths)
        ff[E] = utility.U(Wz)
        _, Pw = ambiguity.worst_case_expectation(ff)
        return Q.T @ (Pw.weights[E] * utility.dU(Wz))

    gap = 0.0
    if d:
        poly = Polytope(A_ub=-Q, b_ub=np.full(nE, float(x)), n=d)
        try:
            cert = maximize_concave(robust_f, robust_g, poly, tol, x0=phi, cuts=cuts, max_iter=200)
        except IterationCapExceeded as exc:
            raise ConvergenceError(str(exc)) from None
        phi, value, gap = cert.x, cert.value, cert.certified_gap
        W = x + Q @ phi
        f_full[E] = utility.U(W)
        value, worst = ambiguity.worst_case_expectation(f_full)
    strat = basis.strategy(x, phi)
    saddle = np.zeros(system.n_paths)
    saddle[E] = p_star
    return PrimalSolution(
        float(value),
        strat,
        worst,
        float(gap),
        full_wealth(system, strat),
        E,
        {"barrier_gap": res.gap, "newton_steps": res.newton_steps, "saddle_measure": saddle.tolist(), "basis_dim": d},
    )


# -- inf-sup route ------------------------------------------------------------------


@dataclass
class RobustValue:
    value: float
    measure: Measure
    certified_gap: float
    lower_bound: float
    diagnostics: dict = field(default_factory=dict)


class _EnvelopeOracle:
    """g(p) = u_p(x) on a fixed path set, with gradient U(W*) and Hessian from the implicit FOC."""

    def __init__(self, x, basis: StrategyBasis, utility):
        self.x = x
        self.basis = basis
        self.utility = utility
        self.phi = None
        self.evals = 0

    def __call__(self, p, order):
        if np.any(p <= 0):
            return math.inf if order == 0 else (math.inf, None, None)
        phi, f, W = _inner_u_P(self.x, p, self.basis, self.utility, self.phi)
        self.evals += 1
        if order == 0:
            return f
        self.phi = phi
        ut = self.utility
        grad = ut.U(W)
        Q = self.basis.Q
        if self.basis.dim == 0:
            return f, grad, np.zeros((p.size, p.size))
        D = ut.dU(W)
        Hphi = (Q * (p * ut.d2U(W))[:, None]).T @ Q
        B = Q.T * D[None, :]  # (d, n)
        hess = B.T @ _solve_pd(-Hphi, B)  # D Q (-Hphi)^-1 Q' D, positive semidefinite
        return f, grad, hess


def solve_u(x: float, ambiguity: Ambiguity, system: MartingaleSystem, utility: UtilityFamily, tol: float = SADDLE_TOL) -> RobustValue:
    """inf over the ambiguity set of u_P(x), certified by a cutting-plane lower bound."""
    if not x > 0:
        raise ValueError(f"initial wealth must be positive, got {x}")
    _check_assumption_p2(ambiguity, system)
    E = ambiguity.union_support()
    basis = StrategyBasis.build(system, E)
    oracle = _EnvelopeOracle(x, basis, utility)
    nE = int(E.sum())

    if isinstance(ambiguity, HullAmbiguity):
        Pi = ambiguity.matrix[:, E]
        K = Pi.shape[0]

        def to_p(z):
            return z @ Pi

        def objective(z, order):
            p = to_p(z)
            if order == 0:
                v = oracle(p, 0)
                return -v if np.isfinite(v) else -math.inf
            f, g, H = oracle(p, 2)
            return -f, -(Pi @ g), -(Pi @ H @ Pi.T)

        z0 = np.full(K, 1.0 / K)
        A_eq = np.ones((1, K))
        A_ub, b_ub = -np.eye(K), np.zeros(K)
        poly = Polytope(A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(1), n=K)
    elif isinstance(ambiguity, DensityBand):
        A_r, b_r = system.restricted(np.flatnonzero(E))
        al, be = ambiguity.alpha, ambiguity.beta
        q0 = find_calibrated_measure(system, E).measure.weights[E]

        def to_p(z):
            return z[:nE]

        def objective(z, order):
            p = z[:nE]
            if order == 0:
                v = oracle(p, 0)
                return -v if np.isfinite(v) else -math.inf
            f, g, H = oracle(p, 2)
            HH = np.zeros((2 * nE, 2 * nE))
            HH[:nE, :nE] = -H
            return -f, np.r_[-g, np.zeros(nE)], HH

        z0 = np.r_[q0, q0]
        eye = np.eye(nE)
        A_eq = np.vstack([np.hstack([np.zeros_like(A_r), A_r]), np.r_[np.ones(nE), np.zeros(nE)][None, :]])
        b_eq = np.r_[b_r, 1.0]
        A_ub = np.vstack([np.hstack([-eye, al * eye]), np.hstack([eye, -be * eye])])
        b_ub = np.zeros(2 * nE)
        poly = Polytope(A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, n=2 * nE)
    else:
        raise TypeError(f"unsupported ambiguity {type(ambiguity).__name__}")

    try:
        res = barrier_maximize(objective, z0, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, gap_tol=SOLVER_GAP)
    except BarrierError as exc:
        raise ConvergenceError(f"inf-sup barrier failed: {exc}") from None

    cuts = []
    for z, _, _ in res.history[-3:]:
        f, g, _ = objective(z, 2)
        cuts.append((z, -f, -g))
    f_best = min(c[1] for c in cuts)
    z_best = min(cuts, key=lambda c: c[1])[0]
    # lower bound: min over the set of the max of the cuts
    neg_cuts = [(z, -f, -g) for z, f, g in cuts]
    ub_neg, _ = cut_bound(neg_cuts, poly)
    lower = -ub_neg
    p_full = np.zeros(system.n_paths)
    p_full[E] = to_p(z_best)
    return RobustValue(
        float(f_best),
        Measure.clean(p_full),
        float(max(f_best - lower, 0.0)),
        float(lower),
        {"barrier_gap": res.gap, "newton_steps": res.newton_steps, "inner_solves": oracle.evals},
    )


def verify_minimax(sup_inf: float, inf_sup: float, tol: float = 2 * SADDLE_TOL) -> dict:
    gap = abs(sup_inf - inf_sup)
    return {"sup_inf": sup_inf, "inf_sup": inf_sup, "gap": gap, "tol": tol, "pass": bool(gap <= tol)}
