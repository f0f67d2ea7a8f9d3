"""Certified concave maximization / convex minimization over polytopes.

The certificate is always a cutting-plane bound: supergradient cuts collected
along the way define a piecewise-linear majorant of f, and its LP maximum over
the polytope bounds the optimum from above. ``certified_gap`` is that bound
minus the best value found.

With a Hessian the iterates come from the barrier method (fast, high accuracy)
and the cuts are taken at its centering points; without one, or when those cuts
do not close the gap, Kelley's cutting-plane method runs on the same cut set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..tolerances import SADDLE_TOL
from .barrier import BarrierError, barrier_maximize
from .lp import LinearProgram, LPError, solve_lp


class IterationCapExceeded(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Polytope:
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    n: int = 0

    def __post_init__(self):
        n = self.n
        for arr in (self.A_ub, self.A_eq):
            if arr is not None:
                n = np.atleast_2d(arr).shape[1]
        for arr in (self.lb, self.ub):
            if arr is not None and np.ndim(arr):
                n = len(arr)
        object.__setattr__(self, "n", n)
        lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return cls(lb=lo, ub=hi, n=lo.size)

    @classmethod
    def simplex(cls, n):
        return cls(A_eq=np.ones((1, n)), b_eq=np.ones(1), lb=np.zeros(n), ub=np.full(n, np.inf), n=n)

    def inequalities(self):
        """All inequalities, bounds included, as (A, b) with A x <= b."""
        rows, rhs = [], []
        if self.A_ub is not None:
            rows.append(np.atleast_2d(self.A_ub))
            rhs.append(np.asarray(self.b_ub, float))
        eye = np.eye(self.n)
        fl, fu = np.isfinite(self.lb), np.isfinite(self.ub)
        if fl.any():
            rows.append(-eye[fl])
            rhs.append(-self.lb[fl])
        if fu.any():
            rows.append(eye[fu])
            rhs.append(self.ub[fu])
        if not rows:
            return None, None
        return np.vstack(rows), np.concatenate(rhs)

    def interior_point(self):
        """Point maximizing the smallest inequality slack (capped at 1)."""
        A, b = self.inequalities()
        n = self.n
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = None if A is None else np.hstack([A, np.ones((A.shape[0], 1))])
        A_eq = None if self.A_eq is None else np.hstack([np.atleast_2d(self.A_eq), np.zeros((len(self.b_eq), 1))])
        lp = LinearProgram(
            c, A_ub, b, A_eq, None if A_eq is None else self.b_eq, np.full(n + 1, -np.inf), np.r_[np.full(n, np.inf), 1.0], "max"
        )
        res = solve_lp(lp)
        if not res.ok or res.x[-1] <= 0:
            raise ValueError("polytope has an empty interior")
        return res.x[:n]

    def contains(self, x, tol=1e-9) -> bool:
        A, b = self.inequalities()
        if A is not None and np.any(A @ x - b > tol):
            return False
        if self.A_eq is not None and np.any(np.abs(np.atleast_2d(self.A_eq) @ x - self.b_eq) > tol):
            return False
        return True


@dataclass
class ConcaveResult:
    x: np.ndarray
    value: float
    upper_bound: float
    certified_gap: float
    iterations: int
    method: str
    converged: bool
    cuts: list = field(default_factory=list, repr=False)


def cut_bound(cuts, polytope: Polytope) -> tuple[float, np.ndarray | None]:
    """max over the polytope of min_i f_i + g_i.(x - x_i). Returns (bound, argmax)."""
    n = polytope.n
    A_cut = np.array([np.r_[-g, 1.0] for _, _, g in cuts])
    b_cut = np.array([f - g @ x for x, f, g in cuts])
    A, b = polytope.inequalities()
    A_ub = A_cut if A is None else np.vstack([A_cut, np.hstack([A, np.zeros((A.shape[0], 1))])])
    b_ub = b_cut if b is None else np.r_[b_cut, b]
    A_eq = None
    if polytope.A_eq is not None:
        A_eq = np.hstack([np.atleast_2d(polytope.A_eq), np.zeros((len(polytope.b_eq), 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    lp = LinearProgram(c, A_ub, b_ub, A_eq, polytope.b_eq if A_eq is not None else None, np.full(n + 1, -np.inf), None, "max")
    try:
        res = solve_lp(lp)
    except LPError:
        return _single_cut_bound(cuts, polytope)
    if res.status == "unbounded":
        return math.inf, None
    if not res.ok:
        raise ValueError("cutting-plane LP infeasible: empty polytope")
    return res.fun, res.x[:n]


def _single_cut_bound(cuts, polytope: Polytope):
    """Weaker but still valid bound: the smallest over cuts of each cut's own maximum.

    Used when the joint epigraph LP is numerically degenerate (nearly flat cuts).
    """
    A, b = polytope.inequalities()
    best, arg = math.inf, None
    for x, f, g in cuts:
        lp = LinearProgram(g, A, b, polytope.A_eq, polytope.b_eq, polytope.lb, polytope.ub, "max")
        res = solve_lp(lp)
        if res.status == "unbounded":
            continue
        if not res.ok:
            raise ValueError("cutting-plane LP infeasible: empty polytope")
        val = f + res.fun - float(g @ x)
        if val < best:
            best, arg = val, res.x
    return best, arg


def _kelley(f, grad, polytope, tol, cuts, best, max_iter):
    x_best, f_best = best
    ub = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        ub, x = cut_bound(cuts, polytope)
        if ub - f_best <= tol:
            return x_best, f_best, ub, it, True
        if x is None:
            # unbounded model: add a cut at a point far along the box
            raise ValueError("Kelley model unbounded; add finite bounds to the polytope")
        fx = float(f(x))
        for _ in range(60):
            if np.isfinite(fx):
                break
            # query left the domain of f (e.g. zero wealth): pull back towards the incumbent
            x = x_best + 0.5 * (x - x_best)
            fx = float(f(x))
        else:
            raise ValueError("objective must be finite on the polytope")
        cuts.append((x, fx, np.asarray(grad(x), dtype=float)))
        if fx > f_best:
            x_best, f_best = x, fx
    return x_best, f_best, ub, it, ub - f_best <= tol


def maximize_concave(f, grad, polytope: Polytope, tol: float = SADDLE_TOL, *, hess=None, x0=None, cuts=None, max_iter: int = 500, certify: bool = True):
    """Maximize concave ``f`` over ``polytope``, certified to ``tol`` by a cutting-plane bound.

    Raises :class:`IterationCapExceeded` (carrying the best result) when the
    certified gap is still above ``tol`` after ``max_iter`` Kelley steps.
    Extra valid cuts ``(x_i, f_i, g_i)`` may be supplied to tighten the bound.
    With ``certify=False`` (barrier only) the bound fields are NaN.
    """
    if x0 is None:
        x0 = polytope.interior_point()
    x0 = np.asarray(x0, dtype=float)
    cuts = list(cuts or [])
    method = "kelley"
    x_best, f_best = x0, float(f(x0))
    if not np.isfinite(f_best):
        raise ValueError("objective must be finite at the start point")
    cuts.append((x0, f_best, np.asarray(grad(x0), dtype=float)))

    if hess is not None:

        def obj(x, order):
            val = float(f(x))
            if order == 0:
                return val if np.isfinite(val) else -math.inf
            return val, np.asarray(grad(x), dtype=float), np.atleast_2d(hess(x))

        A, b = polytope.inequalities()
        try:
            res = barrier_maximize(obj, x0, A_ub=A, b_ub=b, A_eq=polytope.A_eq, gap_tol=min(tol, 1e-9) * 1e-2)
            for x, fx, g in res.history[-3:]:
                cuts.append((x, fx, g))
                if fx > f_best:
                    x_best, f_best = x, fx
            method = "barrier+cuts"
        except BarrierError:
            method = "kelley"
        if not certify and method == "barrier+cuts":
            return ConcaveResult(x_best, f_best, math.nan, math.nan, 0, "barrier", res.converged, cuts)

    try:
        x_best, f_best, ub, it, ok = _kelley(f, grad, polytope, tol, cuts, (x_best, f_best), max_iter)
    except LPError as exc:
        out = ConcaveResult(x_best, f_best, math.nan, math.nan, 0, method, False, cuts)
        raise IterationCapExceeded(f"cutting-plane LP failed: {exc}", out) from None
    out = ConcaveResult(x_best, f_best, ub, max(ub - f_best, 0.0), it, method, ok, cuts)
    if not ok:
        raise IterationCapExceeded(f"certified gap {ub - f_best:.3e} > tol {tol:g} after {max_iter} cuts", out)
    return out


def minimize_convex(
    f, grad, polytope: Polytope, tol: float = SADDLE_TOL, *, hess=None, x0=None, max_iter: int = 500, certify: bool = True
):
    """Mirror of :func:`maximize_concave`; ``upper_bound`` becomes the value and the
    returned ``upper_bound`` field holds the certified lower bound."""
    neg_hess = None if hess is None else (lambda x: -np.atleast_2d(hess(x)))
    try:
        r = maximize_concave(
            lambda x: -f(x), lambda x: -np.asarray(grad(x)), polytope, tol, hess=neg_hess, x0=x0, max_iter=max_iter, certify=certify
        )
    except IterationCapExceeded as exc:
        r = exc.result
        out = ConcaveResult(r.x, -r.value, -r.upper_bound, r.certified_gap, r.iterations, r.method, False, r.cuts)
        raise IterationCapExceeded(str(exc), out) from None
    return ConcaveResult(r.x, -r.value, -r.upper_bound, r.certified_gap, r.iterations, r.method, r.converged, r.cuts)
