"""Linear programs with primal/dual certificates.

HiGHS (through :func:`scipy.optimize.linprog`) does the pivoting; this module
adds the contract around it: tightened feasibility tolerances, dual recovery,
residual checks, and Farkas / recession-ray certificates when there is no
optimum.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ..tolerances import COMPLEMENTARITY_TOL, DUALITY_GAP_TOL, FEAS_TOL

HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None  # None means 0 for every variable
    ub: np.ndarray | None = None  # None means +inf
    sense: str = "min"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        object.__setattr__(self, "c", c)
        for A, b, name in ((self.A_ub, self.b_ub, "ub"), (self.A_eq, self.b_eq, "eq")):
            if (A is None) != (b is None):
                raise ValueError(f"A_{name} and b_{name} must be given together")
            if A is None:
                continue
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] == 0:
                A = A.reshape(0, n)
            if A.shape != (b.size, n):
                raise ValueError(f"A_{name} has shape {A.shape}, expected ({b.size}, {n})")
            object.__setattr__(self, f"A_{name}", A)
            object.__setattr__(self, f"b_{name}", b)
        lb = np.zeros(n) if self.lb is None else np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for arr in (c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    fun: float | None = None
    # multipliers in the convention grad(objective) = A_eq' y_eq + A_ub' y_ub + z
    y_eq: np.ndarray | None = None
    y_ub: np.ndarray | None = None
    z: np.ndarray | None = None
    dual_value: float | None = None
    residuals: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class LPError(RuntimeError):
    pass


def _bounds(lp: LinearProgram):
    return [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(lp.lb, lp.ub)]


def _linprog(c, lp: LinearProgram, bounds=None):
    kw = dict(
        A_ub=lp.A_ub,
        b_ub=lp.b_ub,
        A_eq=lp.A_eq,
        b_eq=lp.b_eq,
        bounds=_bounds(lp) if bounds is None else bounds,
        method="highs",
    )
    res = linprog(c, options=HIGHS_OPTIONS, **kw)
    if res.status == 4:
        # tight tolerances occasionally stall HiGHS on nearly degenerate data
        res = linprog(c, **kw)
    return res


def solve_lp(lp: LinearProgram) -> LPResult:
    """Solve ``lp`` and return an optimum with duals, or an infeasibility/unboundedness certificate."""
    sign = 1.0 if lp.sense == "min" else -1.0
    res = _linprog(sign * lp.c, lp)
    if res.status == 2:
        return LPResult("infeasible", certificate=_farkas(lp))
    if res.status == 3:
        return LPResult("unbounded", certificate=_ray(lp))
    if res.status != 0:
        raise LPError(f"HiGHS failed: {res.message}")

    x = res.x
    y_eq = sign * res.eqlin.marginals if lp.A_eq is not None else np.zeros(0)
    y_ub = sign * res.ineqlin.marginals if lp.A_ub is not None else np.zeros(0)
    z = sign * (res.lower.marginals + res.upper.marginals)
    fun = float(lp.c @ x)

    dual = 0.0
    if lp.A_eq is not None:
        dual += lp.b_eq @ y_eq
    if lp.A_ub is not None:
        dual += lp.b_ub @ y_ub
    zl, zu = sign * res.lower.marginals, sign * res.upper.marginals
    fl, fu = np.isfinite(lp.lb), np.isfinite(lp.ub)
    dual += zl[fl] @ lp.lb[fl] + zu[fu] @ lp.ub[fu]

    r_dual = lp.c.copy()
    if lp.A_eq is not None:
        r_dual -= lp.A_eq.T @ y_eq
    if lp.A_ub is not None:
        r_dual -= lp.A_ub.T @ y_ub
    r_dual -= z
    scale = 1.0 + np.abs(x).max(initial=0.0)
    r_eq = np.abs(lp.A_eq @ x - lp.b_eq).max(initial=0.0) if lp.A_eq is not None else 0.0
    r_ub = np.maximum(lp.A_ub @ x - lp.b_ub, 0).max(initial=0.0) if lp.A_ub is not None else 0.0
    r_bd = max(np.maximum(lp.lb - x, 0).max(initial=0.0), np.maximum(x - lp.ub, 0).max(initial=0.0))
    cs = 0.0
    if lp.A_ub is not None:
        cs += np.abs(y_ub * (lp.A_ub @ x - lp.b_ub)).sum()
    cs += np.abs(zl[fl] * (x[fl] - lp.lb[fl])).sum() + np.abs(zu[fu] * (x[fu] - lp.ub[fu])).sum()
    residuals = {
        "primal": float(max(r_eq, r_ub, r_bd)),
        "dual": float(np.abs(r_dual).max(initial=0.0)),
        "complementarity": float(cs),
        "gap": float(abs(fun - dual)),
        "scale": float(scale),
    }
    return LPResult("optimal", x, fun, y_eq, y_ub, z, float(dual), residuals)


def check_certificate(res: LPResult, feas: float = FEAS_TOL, gap: float = DUALITY_GAP_TOL) -> bool:
    """True when an optimal result meets the feasibility, duality-gap and slackness tolerances."""
    if not res.ok:
        return False
    r = res.residuals
    return r["primal"] <= feas and r["dual"] <= feas and r["gap"] <= gap and r["complementarity"] <= COMPLEMENTARITY_TOL


def _farkas(lp: LinearProgram) -> dict:
    """Phase-1 LP; its positive optimum and duals certify infeasibility."""
    n = lp.n
    m_eq = 0 if lp.A_eq is None else lp.A_eq.shape[0]
    m_ub = 0 if lp.A_ub is None else lp.A_ub.shape[0]
    k = 2 * m_eq + m_ub
    c = np.concatenate([np.zeros(n), np.ones(k)])
    A_eq = b_eq = A_ub = b_ub = None
    if m_eq:
        A_eq = np.hstack([lp.A_eq, np.eye(m_eq), -np.eye(m_eq), np.zeros((m_eq, m_ub))])
        b_eq = lp.b_eq
    if m_ub:
        A_ub = np.hstack([lp.A_ub, np.zeros((m_ub, 2 * m_eq)), -np.eye(m_ub)])
        b_ub = lp.b_ub
    phase1 = LinearProgram(
        c, A_ub, b_ub, A_eq, b_eq, np.concatenate([lp.lb, np.zeros(k)]), np.concatenate([lp.ub, np.full(k, np.inf)])
    )
    res = solve_lp(phase1)
    return {
        "kind": "farkas",
        "phase1_value": res.fun,
        "y_eq": None if res.y_eq is None else res.y_eq.tolist(),
        "y_ub": None if res.y_ub is None else res.y_ub.tolist(),
        "x_closest": None if res.x is None else res.x[:n].tolist(),
    }


def _ray(lp: LinearProgram) -> dict:
    """A recession direction along which the objective improves without bound."""
    n = lp.n
    sign = 1.0 if lp.sense == "min" else -1.0
    lo = np.where(np.isfinite(lp.lb), 0.0, -1.0)
    hi = np.where(np.isfinite(lp.ub), 0.0, 1.0)
    ray_lp = LinearProgram(
        sign * lp.c,
        None if lp.A_ub is None else lp.A_ub,
        None if lp.A_ub is None else np.zeros(lp.A_ub.shape[0]),
        None if lp.A_eq is None else lp.A_eq,
        None if lp.A_eq is None else np.zeros(lp.A_eq.shape[0]),
        lo,
        hi,
    )
    res = _linprog(ray_lp.c, ray_lp, bounds=list(zip(lo, hi)))
    d = res.x if res.status == 0 else np.zeros(n)
    return {"kind": "ray", "direction": d.tolist(), "objective_rate": float(lp.c @ d)}


def format_lp(lp: LinearProgram) -> str:
    """Plain-text tableau dump: one line per row, ``<coeffs> | <op> <rhs>``."""
    out = io.StringIO()
    np.set_printoptions(linewidth=200)
    fmt = lambda v: " ".join(f"{a: .6g}" for a in v)  # noqa: E731
    out.write(f"{lp.sense} c = [{fmt(lp.c)}]\n")
    if lp.A_eq is not None:
        for row, b in zip(lp.A_eq, lp.b_eq):
            out.write(f"[{fmt(row)}] | = {b:.6g}\n")
    if lp.A_ub is not None:
        for row, b in zip(lp.A_ub, lp.b_ub):
            out.write(f"[{fmt(row)}] | <= {b:.6g}\n")
    out.write(f"lb = [{fmt(lp.lb)}]\nub = [{fmt(lp.ub)}]\n")
    return out.getvalue()
