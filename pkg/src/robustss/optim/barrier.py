"""Log-barrier interior-point method for smooth concave programs.

Solves

    maximize f(x)  s.t.  h_i(x) >= 0 (h_i concave),  A_ub x <= b_ub,  A_eq x = b_eq

from a strictly feasible start. Equalities are eliminated through a null-space
basis, so every iterate satisfies them to rounding. After centering at barrier
parameter t, the point is dual feasible for the multipliers 1/(t h_i),
1/(t s_j) and the duality gap is m/t, m the number of barrier terms.

Callbacks take ``(x, order)``. With ``order == 0`` they return only values
(``-inf`` / ``None`` outside the domain); with ``order == 2`` the objective returns
``(f, g, H)`` and the constraints ``(h, J, hess)`` where ``hess(w)`` is the
weighted sum of constraint Hessians, or ``None`` when the constraints are linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..tolerances import SOLVER_GAP


class BarrierError(RuntimeError):
    pass


@dataclass
class BarrierResult:
    x: np.ndarray
    value: float
    gap: float
    t: float
    multipliers: np.ndarray  # 1/(t h) for the nonlinear constraints
    slack_multipliers: np.ndarray  # 1/(t s) for the linear inequalities
    newton_steps: int
    converged: bool
    history: list  # (x, f, g) at the end of each centering phase


def null_space_param(A_eq, n):
    if A_eq is None or len(A_eq) == 0:
        return np.eye(n)
    return sla.null_space(np.atleast_2d(A_eq), rcond=1e-12)


def _solve_pd(H, g):
    """Solve H d = g for symmetric positive (semi)definite H."""
    try:
        c = sla.cho_factor(H, check_finite=False)
        return sla.cho_solve(c, g, check_finite=False)
    except sla.LinAlgError:
        pass
    reg = 1e-12 * max(1.0, np.abs(np.diag(H)).max(initial=1.0))
    for _ in range(8):
        try:
            c = sla.cho_factor(H + reg * np.eye(len(H)), check_finite=False)
            return sla.cho_solve(c, g, check_finite=False)
        except sla.LinAlgError:
            reg *= 100
    return np.linalg.lstsq(H, g, rcond=None)[0]


def barrier_maximize(
    objective,
    x0,
    *,
    constraints=None,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    gap_tol: float = SOLVER_GAP,
    t0: float = 1.0,
    mu: float = 20.0,
    centering_tol: float = 1e-9,
    max_steps: int = 3000,
) -> BarrierResult:
    x0 = np.asarray(x0, dtype=float).copy()
    n = x0.size
    linear_obj = not callable(objective)
    c = None if not linear_obj else np.asarray(objective, dtype=float)
    N = null_space_param(A_eq, n)
    if A_ub is not None:
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.asarray(b_ub, dtype=float)
        if A_ub.shape[0] == 0:
            A_ub = None

    def fval(x):
        return float(c @ x) if linear_obj else objective(x, 0)

    def fderiv(x):
        if linear_obj:
            return float(c @ x), c, None
        return objective(x, 2)

    def phi(x, t):
        f = fval(x)
        if not np.isfinite(f):
            return -math.inf
        val = t * f
        if constraints is not None:
            h = constraints(x, 0)
            if h is None or np.any(~(h > 0)):
                return -math.inf
            val += np.log(h).sum()
        if A_ub is not None:
            s = b_ub - A_ub @ x
            if np.any(~(s > 0)):
                return -math.inf
            val += np.log(s).sum()
        return val

    m = 0
    if constraints is not None:
        h0 = constraints(x0, 0)
        if h0 is None or np.any(~(h0 > 0)):
            raise BarrierError("start point violates a nonlinear constraint")
        m += h0.size
    if A_ub is not None:
        if np.any(~(b_ub - A_ub @ x0 > 0)):
            raise BarrierError("start point violates a linear inequality")
        m += A_ub.shape[0]
    if not np.isfinite(fval(x0)):
        raise BarrierError("objective is not finite at the start point")

    x = x0
    t = t0 if m else 1.0
    steps = 0
    history = []
    converged = False
    h = s = None
    while True:
        # centering
        while steps < max_steps:
            f, g, H = fderiv(x)
            grad = t * g
            hess = np.zeros((n, n)) if H is None else t * H
            if constraints is not None:
                h, J, hw = constraints(x, 2)
                inv = 1.0 / h
                grad = grad + J.T @ inv
                Jw = J * inv[:, None]
                hess = hess - Jw.T @ Jw
                if hw is not None:
                    hess = hess + hw(inv)
            if A_ub is not None:
                s = b_ub - A_ub @ x
                inv = 1.0 / s
                grad = grad - A_ub.T @ inv
                Aw = A_ub * inv[:, None]
                hess = hess - Aw.T @ Aw
            gr = N.T @ grad
            Hr = -(N.T @ hess @ N)
            Hr = 0.5 * (Hr + Hr.T)
            d = _solve_pd(Hr, gr)
            lam2 = float(gr @ d)
            steps += 1
            if lam2 / 2 <= centering_tol:
                break
            dx = N @ d
            p0 = phi(x, t)
            step = 1.0
            while step > 1e-14:
                xn = x + step * dx
                pn = phi(xn, t)
                if pn >= p0 + 0.01 * step * lam2:
                    break
                step *= 0.5
            else:
                break  # no progress possible at this t (rounding floor)
            x = xn
            if step < 1e-8 or pn - p0 <= 1e-15 * abs(p0):
                break  # tiny accepted steps only reflect rounding
            if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e12:
                raise BarrierError("iterates diverge; the problem looks unbounded")
        f, g, _ = fderiv(x)
        history.append((x.copy(), f, np.array(g, dtype=float)))
        if m == 0 or m / t <= gap_tol:
            converged = steps < max_steps
            break
        if steps >= max_steps:
            break
        t *= mu

    mult = np.zeros(0)
    slack = np.zeros(0)
    if constraints is not None:
        mult = 1.0 / (t * constraints(x, 0))
    if A_ub is not None:
        slack = 1.0 / (t * (b_ub - A_ub @ x))
    return BarrierResult(x, fval(x), (m / t if m else 0.0), t, mult, slack, steps, converged, history)


def newton_maximize(fun, x0, *, tol: float = 1e-15, max_steps: int = 200):
    """Damped Newton for a smooth concave function without constraints.

    ``fun(x, order)`` as in :func:`barrier_maximize`; ``-inf`` marks points outside
    the domain and the line search never leaves it. Returns ``(x, f, decrement)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g, H = fun(x, 2)
    if not np.isfinite(f):
        raise BarrierError("objective is not finite at the start point")
    lam2 = math.inf
    for _ in range(max_steps):
        d = _solve_pd(-0.5 * (H + H.T), g)
        lam2 = float(g @ d)
        if lam2 / 2 <= tol * max(1.0, abs(f)):
            x, f, g, H = _refine(fun, x, f, g, H, d)
            lam2 = float(g @ _solve_pd(-0.5 * (H + H.T), g))
            break
        step = 1.0
        while step > 1e-14:
            fn = fun(x + step * d, 0)
            if fn >= f + 0.01 * step * lam2:
                break
            step *= 0.5
        else:
            break
        x = x + step * d
        f_old = f
        f, g, H = fun(x, 2)
        if step < 1e-8 or f - f_old <= 1e-16 * abs(f_old):
            break
    return x, f, lam2


def _refine(fun, x, f, g, H, d, max_steps: int = 4):
    """Full Newton steps once the decrement is at rounding level.

    The value can no longer tell the steps apart, but the gradient still can:
    weakly weighted coordinates (low-probability paths) are only pinned down
    here. A step is kept while it stays in the domain, does not lose more than
    rounding in value, and keeps shrinking.
    """
    prev = math.inf
    for _ in range(max_steps):
        size = float(np.abs(d).max(initial=0.0))
        if size == 0.0 or size >= prev or size <= 1e-16 * (1.0 + float(np.abs(x).max(initial=0.0))):
            break
        xn = x + d
        fn, gn, Hn = fun(xn, 2)
        if not np.isfinite(fn) or fn < f - 1e-14 * max(1.0, abs(f)):
            break
        x, f, g, H, prev = xn, fn, gn, Hn, size
        d = _solve_pd(-0.5 * (H + H.T), g)
    return x, f, g, H
