"""Convex dual: v_P(y), the robust dual v(y) = inf_P v_P(y), conjugacy in y and optimizer recovery.

Dual candidates are terminal densities y dQ/dP with Q calibrated and Q << P,
so every dual value is the perspective sum  sum_w p_w V(y q_w / p_w), which is
jointly convex in (p, q).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .measures import Ambiguity, DensityBand, HullAmbiguity, Measure, MartingaleSystem, find_calibrated_measure
from .optim.barrier import newton_maximize, null_space_param
from .optim.concave import IterationCapExceeded, Polytope, minimize_convex
from .primal import ConvergenceError
from .tolerances import RESIDUAL_TOL, SADDLE_TOL
from .utility import UtilityFamily


class DualError(RuntimeError):
    pass


@dataclass
class DualSolution:
    y: float
    value: float
    P_hat: Measure
    Q_hat: Measure
    Y_hat: np.ndarray  # y dQ/dP on support(P_hat), 0 elsewhere
    certified_gap: float
    lower_bound: float = -math.inf
    diagnostics: dict = field(default_factory=dict)

    @property
    def dv_dy(self) -> float:
        """Envelope derivative -E_Q[I(Y)] (finite on support(P_hat))."""
        return self.diagnostics.get("dv_dy", math.nan)


def dual_objective(P, Q, y: float, utility: UtilityFamily) -> float:
    """sum_w p V(y q / p), with 0 V(./0) = 0 and p V(0) = +inf unless V(0) is finite."""
    if not y > 0:
        raise ValueError(f"y must be positive, got {y}")
    p = P.weights if isinstance(P, Measure) else np.asarray(P, dtype=float)
    q = Q.weights if isinstance(Q, Measure) else np.asarray(Q, dtype=float)
    s = p > 0
    if np.any(q[~s] > 0):
        return math.inf  # Q not << P: no density exists
    ps, qs = p[s], q[s]
    zero = qs <= 0
    if np.any(zero) and not utility.bounded:
        return math.inf
    total = float(ps[~zero] @ utility.V(y * qs[~zero] / ps[~zero]))
    if np.any(zero):
        total += float(ps[zero].sum()) * utility.sup_U
    return total


def _perspective(p, q, y, utility, order):
    """Value, gradient (d/dp, d/dq) and per-path Hessian blocks of sum p V(y q / p)."""
    if np.any(p <= 0) or np.any(q <= 0):
        return math.inf if order == 0 else (math.inf, None, None, None)
    s = y * q / p
    Vs = utility.V(s)
    f = float(p @ Vs)
    if order == 0:
        return f
    Is = np.asarray(utility.I(s), dtype=float)
    gp = Vs + s * Is  # U(I(s))
    gq = -y * Is
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        d2 = -np.asarray(utility.dI(s), dtype=float) / p  # V''(s)/p
    d2 = np.where(np.isfinite(d2), d2, 1e300)
    hpp = d2 * s * s
    hpq = -d2 * s * y
    hqq = d2 * y * y
    return f, (gp, gq), (hpp, hpq, hqq), Is


def _q_start(system, E):
    res = find_calibrated_measure(system, E)
    if not res.feasible or res.min_weight <= 0:
        raise DualError("no calibrated measure charges every path of the support")
    return res.measure.weights[E]


def _certified_min(f, grad, hess, poly, z0, tol, certify=True):
    try:
        r = minimize_convex(f, grad, poly, tol, hess=hess, x0=z0, max_iter=200, certify=certify)
    except IterationCapExceeded as exc:
        raise ConvergenceError(str(exc)) from None
    return r


def solve_v_P(y: float, P: Measure, system: MartingaleSystem, utility: UtilityFamily, tol: float = SADDLE_TOL) -> DualSolution:
    """v_P(y): minimize the perspective objective over calibrated Q << P."""
    if not y > 0:
        raise ValueError(f"y must be positive, got {y}")
    S = P.support
    p = P.weights[S]
    A_r, b_r = system.restricted(np.flatnonzero(S))
    q0 = _q_start(system, S)
    n = q0.size

    def f(q):
        return _perspective(p, q, y, utility, 0)

    def grad(q):
        return _perspective(p, q, y, utility, 2)[1][1]

    def hess(q):
        return np.diag(_perspective(p, q, y, utility, 2)[2][2])

    poly = Polytope(A_eq=A_r, b_eq=b_r, lb=np.zeros(n), n=n)
    r = _certified_min(f, grad, hess, poly, q0, tol)
    # the minimizer is interior (V'(0+) = -inf), so Newton on the affine slice sharpens it
    N = null_space_param(A_r, n)
    qs = np.asarray(r.x, dtype=float)
    value = r.value
    if N.shape[1] and np.all(qs > 0):

        def slice_fun(t, order):
            z = qs + N @ t
            if order == 0:
                return -f(z)
            val, (_, gq), (_, _, hqq), _ = _perspective(p, z, y, utility, 2)
            if not np.isfinite(val):
                return -math.inf, None, None
            return -val, -(N.T @ gq), -((N.T * hqq) @ N)

        t, fv, _ = newton_maximize(slice_fun, np.zeros(N.shape[1]))
        if -fv <= value:
            qs, value = qs + N @ t, -fv
    q = np.zeros(system.n_paths)
    q[S] = np.clip(qs, 0, None)
    Q = Measure.clean(q, drop=0.0)
    Y = np.zeros(system.n_paths)
    Y[S] = y * q[S] / p
    dv = -float(q[S] @ utility.I(np.maximum(Y[S], 1e-300)))
    gap = max(value - r.upper_bound, 0.0)
    return DualSolution(y, value, P, Q, Y, gap, r.upper_bound, {"dv_dy": dv, "method": r.method})


def solve_v(
    y: float, ambiguity: Ambiguity, system: MartingaleSystem, utility: UtilityFamily, tol: float = SADDLE_TOL, certify: bool = True
) -> DualSolution:
    """v(y) = inf over P in the ambiguity set and calibrated Q << P of sum p V(y q / p).

    ``certify=False`` skips the cutting-plane bound (used while bracketing y).
    """
    if not y > 0:
        raise ValueError(f"y must be positive, got {y}")
    E = ambiguity.union_support()
    nE = int(E.sum())
    A_r, b_r = system.restricted(np.flatnonzero(E))
    q0 = _q_start(system, E)
    mq = A_r.shape[0]

    if isinstance(ambiguity, HullAmbiguity):
        Pi = ambiguity.matrix[:, E]
        K = Pi.shape[0]
        n_a = K  # leading block: hull weights

        def split(z):
            return z[:K] @ Pi, z[K:]

        def chain_grad(gp, gq):
            return np.r_[Pi @ gp, gq]

        def chain_hess(hpp, hpq, hqq):
            H = np.zeros((K + nE, K + nE))
            H[:K, :K] = (Pi * hpp) @ Pi.T
            H[:K, K:] = Pi * hpq
            H[K:, :K] = H[:K, K:].T
            H[K:, K:] = np.diag(hqq)
            return H

        A_eq = np.zeros((1 + mq, K + nE))
        A_eq[0, :K] = 1.0
        A_eq[1:, K:] = A_r
        b_eq = np.r_[1.0, b_r]
        poly = Polytope(A_eq=A_eq, b_eq=b_eq, lb=np.zeros(K + nE), n=K + nE)
        z0 = np.r_[np.full(K, 1.0 / K), q0]
    elif isinstance(ambiguity, DensityBand):
        al, be = ambiguity.alpha, ambiguity.beta
        n_a = 2 * nE  # (p, r)

        def split(z):
            return z[:nE], z[2 * nE :]

        def chain_grad(gp, gq):
            return np.r_[gp, np.zeros(nE), gq]

        def chain_hess(hpp, hpq, hqq):
            H = np.zeros((3 * nE, 3 * nE))
            i = np.arange(nE)
            H[i, i] = hpp
            H[i, 2 * nE + i] = hpq
            H[2 * nE + i, i] = hpq
            H[2 * nE + i, 2 * nE + i] = hqq
            return H

        eye = np.eye(nE)
        Z = np.zeros((nE, nE))
        A_ub = np.vstack([np.hstack([-eye, al * eye, Z]), np.hstack([eye, -be * eye, Z])])
        A_eq = np.zeros((2 * mq + 1, 3 * nE))
        A_eq[:mq, nE : 2 * nE] = A_r
        A_eq[mq, :nE] = 1.0
        A_eq[mq + 1 :, 2 * nE :] = A_r
        b_eq = np.r_[b_r, 1.0, b_r]
        lb = np.r_[np.full(2 * nE, -np.inf), np.zeros(nE)]
        poly = Polytope(A_ub=A_ub, b_ub=np.zeros(2 * nE), A_eq=A_eq, b_eq=b_eq, lb=lb, n=3 * nE)
        # p = r = q at the max-min calibrated measure is strictly inside the band
        z0 = np.r_[q0, q0, q0]
    else:
        raise TypeError(f"unsupported ambiguity {type(ambiguity).__name__}")

    def f(z):
        p, q = split(z)
        return _perspective(p, q, y, utility, 0)

    def grad(z):
        p, q = split(z)
        _, (gp, gq), _, _ = _perspective(p, q, y, utility, 2)
        return chain_grad(gp, gq)

    def hess(z):
        p, q = split(z)
        _, _, blocks, _ = _perspective(p, q, y, utility, 2)
        return chain_hess(*blocks)

    r = _certified_min(f, grad, hess, poly, z0, tol, certify)
    z, value = r.x, r.value
    if isinstance(ambiguity, HullAmbiguity):
        z, value = _polish_hull(f, grad, hess, z, value, K, A_eq)
    p_E, q_E = split(z)
    p = np.zeros(system.n_paths)
    q = np.zeros(system.n_paths)
    p[E] = np.clip(p_E, 0, None)
    q[E] = np.clip(q_E, 0, None)
    P_hat = Measure.clean(p, drop=0.0)
    Q_hat = Measure.clean(q, drop=0.0)
    S = p > 0
    Y = np.zeros(system.n_paths)
    Y[S] = y * q[S] / p[S]
    dv = -float(q[S] @ utility.I(np.maximum(Y[S], 1e-300)))
    gap = max(value - r.upper_bound, 0.0) if certify else math.nan
    return DualSolution(
        y, value, P_hat, Q_hat, Y, gap, r.upper_bound, {"dv_dy": dv, "method": r.method, "n_ambiguity_vars": n_a}
    )


def _polish_hull(f, grad, hess, z, value, K, A_eq):
    """Newton on the face where the vanishing hull weights are held at zero.

    The barrier locates the face; Newton then resolves the flat minimum in
    (w, q) to rounding, which the optimizer recovery is sensitive to.
    """
    w = z[:K]
    free = np.r_[w > 1e-7 * w.max(), np.ones(z.size - K, dtype=bool)]
    fixed = ~free
    rows = [A_eq]
    if fixed.any():
        rows.append(np.eye(z.size)[fixed])
    N = null_space_param(np.vstack(rows), z.size)
    if N.shape[1] == 0:
        return z, value
    z0 = z.copy()
    z0[fixed] = 0.0

    def slice_fun(t, order):
        zz = z0 + N @ t
        if np.any(zz[free] <= 0):
            return -math.inf if order == 0 else (-math.inf, None, None)
        val = f(zz)
        if order == 0:
            return -val
        if not np.isfinite(val):
            return -math.inf, None, None
        return -val, -(N.T @ grad(zz)), -(N.T @ hess(zz) @ N)

    if not np.isfinite(slice_fun(np.zeros(N.shape[1]), 0)):
        return z, value
    t, fv, _ = newton_maximize(slice_fun, np.zeros(N.shape[1]))
    if -fv <= value:
        return z0 + N @ t, -fv
    return z, value


@dataclass
class ConjugateResult:
    y_hat: float
    v_y: float
    value: float  # min_y v(y) + x0 y
    dual: DualSolution
    evaluations: int
    bracket: tuple


def conjugate_search(
    x0: float,
    ambiguity: Ambiguity,
    system: MartingaleSystem,
    utility: UtilityFamily,
    tol: float = SADDLE_TOL,
    bracket: tuple = (1e-6, 1e6),
    max_expand: int = 12,
) -> ConjugateResult:
    """Minimize y -> v(y) + x0 y through the root of its derivative x0 - E_Q[I(y dQ/dP)]."""
    if not x0 > 0:
        raise ValueError(f"x0 must be positive, got {x0}")
    cache = {}

    def solve(logy):
        # root finding only needs the sign of the derivative; the final point is certified
        if logy not in cache:
            cache[logy] = solve_v(math.exp(logy), ambiguity, system, utility, tol, certify=False)
        return cache[logy]

    def deriv(logy):
        return x0 + solve(logy).dv_dy

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    for _ in range(max_expand):
        if deriv(lo) < 0:
            break
        lo -= 5 * math.log(10)
    else:
        raise DualError(f"derivative still nonnegative at y={math.exp(lo):.3e}; scanned down from {bracket[0]:g}")
    for _ in range(max_expand):
        if deriv(hi) > 0:
            break
        hi += 5 * math.log(10)
    else:
        raise DualError(f"derivative still nonpositive at y={math.exp(hi):.3e}; scanned up from {bracket[1]:g}")
    logy = brentq(deriv, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=200)
    y = math.exp(logy)
    sol = solve_v(y, ambiguity, system, utility, tol)
    return ConjugateResult(y, sol.value, sol.value + x0 * y, sol, len(cache) + 1, (math.exp(lo), math.exp(hi)))


def recover_optimizers(P_hat: Measure, Q_hat: Measure, y_hat: float, x0: float, utility: UtilityFamily, system=None, scope=None):
    """Y = y dQ/dP and X = I(Y) on support(P_hat).

    With ``system`` given, X is extended off support(P_hat) by the cheapest
    superhedge of X on that support, constrained to stay nonnegative on
    ``scope`` (default: every path). Returns ``(X, Y, extension_price)``.
    """
    if not y_hat > 0:
        raise ValueError("y_hat must be positive")
    p, q = P_hat.weights, Q_hat.weights
    S = p > 0
    if np.any(q[~S] > 0):
        raise DualError("Q_hat is not absolutely continuous with respect to P_hat")
    Y = np.zeros(p.size)
    Y[S] = y_hat * q[S] / p[S]
    if np.any(Y[S] <= 0) and not utility.bounded:
        raise DualError("Y vanishes on a charged path while I is unbounded at 0")
    X = np.full(p.size, np.nan)
    X[S] = utility.I(Y[S])
    price = float(x0)
    if system is not None and not S.all():
        from .superhedge import superhedge_price

        claim = np.zeros(p.size)
        claim[S] = X[S]
        scope_mask = np.ones(p.size, dtype=bool) if scope is None else np.asarray(scope, dtype=bool)
        res = superhedge_price(claim, system, scope=S, nonneg_on=scope_mask)
        off = ~S
        X[off] = res.wealth[off]
        price = res.price
    return X, Y, price


@dataclass
class SaddleReport:
    x0: float
    u_hat: float
    u: float
    y_hat: float
    v_y: float
    v_P_y: float  # v_{P_hat}(y_hat)
    X_hat: np.ndarray  # terminal wealth of the primal optimizer
    P_hat: np.ndarray
    Q_hat: np.ndarray
    minimax_gap: float
    conjugacy_gap: float
    Y_hat: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d


def theorem2_verify(saddle: SaddleReport, utility: UtilityFamily, tol: float = RESIDUAL_TOL) -> dict:
    """Residuals of the saddle relations, recomputed from the report's primitive fields."""
    p = np.asarray(saddle.P_hat, dtype=float)
    q = np.asarray(saddle.Q_hat, dtype=float)
    X = np.asarray(saddle.X_hat, dtype=float)
    S = p > 0
    Y = np.zeros(p.size)
    Y[S] = saddle.y_hat * q[S] / p[S]
    with np.errstate(divide="ignore", invalid="ignore"):
        XS = X[S]
        EU = float(p[S] @ utility.U(np.where(XS > 0, XS, np.nan))) if np.all(XS > 0) else -math.inf
        I_Y = np.asarray(utility.I(Y[S]), dtype=float)
    res = {
        "r1": abs(saddle.u - EU),
        "r2": abs(saddle.v_y - saddle.u + saddle.y_hat * saddle.x0),
        "r3": abs(saddle.v_y - saddle.v_P_y),
        "r4": float(np.max(np.abs(XS - I_Y))) if XS.size else 0.0,
        "r5": abs(float(p[S] @ (XS * Y[S])) - saddle.x0 * saddle.y_hat),
    }
    out = {k: {"value": float(v), "tol": tol, "pass": bool(v <= tol)} for k, v in res.items()}
    out["density_mass"] = {
        "value": abs(float(p[S] @ Y[S]) - saddle.y_hat),
        "tol": 1e-9,
        "pass": bool(abs(float(p[S] @ Y[S]) - saddle.y_hat) <= 1e-9),
    }
    out["pass"] = all(v["pass"] for k, v in out.items() if k != "pass")
    return out
