"""Measures on the path space, calibrated martingale systems and ambiguity sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .market import Market, MarketError
from .optim.lp import LinearProgram, solve_lp
from .tolerances import EQUIV_TOL, FEAS_TOL, MEASURE_SUM_TOL


@dataclass(frozen=True)
class Measure:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise MarketError("measure weights must be finite and non-empty", "measure")
        if np.any(w < 0):
            raise MarketError(f"negative weight {w.min():.3e}", "measure_nonnegative")
        if abs(w.sum() - 1.0) > MEASURE_SUM_TOL:
            raise MarketError(f"weights sum to {w.sum():.15g}, not 1", "measure_normalized")

    @classmethod
    def clean(cls, w, drop: float = 1e-14) -> "Measure":
        """Measure from solver output: clip round-off negatives and tiny weights, renormalize."""
        w = np.asarray(w, dtype=float).copy()
        if np.any(w < -1e-8):
            raise MarketError(f"solver returned weight {w.min():.3e}", "measure_nonnegative")
        w[w < drop] = 0.0
        return cls(w / w.sum())

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    def expectation(self, f) -> float:
        f = np.asarray(f, dtype=float)
        s = self.support
        return float(self.weights[s] @ f[s])

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class MartingaleSystem:
    """Linear rows whose nonnegative solutions are the calibrated martingale measures.

    ``gains`` holds one column per strategy instrument: the stock gain at every
    trading node followed by the net payoff of every static instrument. The rows
    are ``gains.T q = 0`` plus the normalization ``sum q = 1``, so the system and
    the strategy set are dual to each other by construction.
    """

    market: Market
    gains: np.ndarray  # (n_paths, n_nodes + N)
    n_nodes: int
    mode: str  # "options" | "marginals"
    labels: tuple[str, ...]
    marginals: tuple | None = None

    @property
    def n_paths(self) -> int:
        return self.gains.shape[0]

    @property
    def n_instruments(self) -> int:
        return self.gains.shape[1] - self.n_nodes

    @property
    def A(self) -> np.ndarray:
        return np.vstack([self.gains.T, np.ones((1, self.n_paths))])

    @property
    def b(self) -> np.ndarray:
        b = np.zeros(self.gains.shape[1] + 1)
        b[-1] = 1.0
        return b

    @property
    def n_rows(self) -> int:
        return self.gains.shape[1] + 1

    def residual(self, q) -> float:
        return float(np.abs(self.A @ np.asarray(q, dtype=float) - self.b).max())

    def is_calibrated(self, q, tol: float = FEAS_TOL) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= -tol) and self.residual(q) <= tol)

    def restricted(self, paths):
        """Rows restricted to the columns ``paths`` with dependent rows removed.

        Returns ``(A_r, b_r)``; A_r has full row rank.
        """
        paths = np.asarray(paths)
        A = self.A[:, paths]
        b = self.b
        _, R, piv = sla.qr(A.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * max(1.0, diag.max(initial=0.0))))
        keep = np.sort(piv[:rank])
        return A[keep], b[keep]


def build_martingale_system(market: Market, calibration=None) -> MartingaleSystem:
    """Calibrated martingale system on the market's grid.

    ``calibration`` is ``None`` / ``{"calibration": "options"}`` (rows E_Q g_i = 0
    for the quoted options) or ``{"calibration": "marginals", "marginals": [...]}``
    with one ``{level: mass}`` map per period; marginal mode replaces the options
    by digital instruments 1{S_i = level} - mass.
    """
    stock = market.stock_gains()
    nodes = market.trading_nodes()
    labels = [f"martingale@node{k}" for k in nodes]
    mode = "options"
    if isinstance(calibration, Mapping):
        mode = calibration.get("calibration", "options")
    if mode == "options":
        inst = market.option_matrix()
        labels += [f"option{i}" for i in range(inst.shape[1])]
        return MartingaleSystem(market, np.hstack([stock, inst]), len(nodes), "options", tuple(labels + ["normalization"]))
    if mode != "marginals":
        raise MarketError(f"unknown calibration mode {mode!r}", "calibration")

    grid = market.grid
    raw = calibration.get("marginals")
    if raw is None or len(raw) != grid.T:
        raise MarketError(f"need one marginal per period ({grid.T})", "marginal_count")
    prices = market.paths.prices
    cols = []
    clean = []
    for t, mu in enumerate(raw):
        levels = np.asarray(grid.levels[t])
        mass = np.zeros(levels.size)
        for lvl, m in dict(mu).items():
            hit = np.flatnonzero(np.isclose(levels, float(lvl), rtol=0, atol=1e-12))
            if hit.size != 1:
                raise MarketError(f"marginal {t + 1}: level {lvl} is not on the grid", "marginal_support")
            mass[hit[0]] += float(m)
        if np.any(mass < 0):
            raise MarketError(f"marginal {t + 1}: negative mass {mass.min()}", "marginal_nonnegative")
        if abs(mass.sum() - 1.0) > FEAS_TOL:
            raise MarketError(f"marginal {t + 1}: masses sum to {mass.sum()}, not 1", "marginal_mass")
        mean = float(mass @ levels)
        if abs(mean - grid.s0) > FEAS_TOL * max(1.0, grid.s0):
            raise MarketError(f"marginal {t + 1}: mean {mean} differs from s0={grid.s0}", "marginal_mean")
        for k, lvl in enumerate(levels):
            cols.append((prices[:, t] == lvl).astype(float) - mass[k])
            labels.append(f"marginal{t + 1}@{lvl:g}")
        clean.append(tuple(mass))
    inst = np.column_stack(cols)
    return MartingaleSystem(
        market, np.hstack([stock, inst]), len(nodes), "marginals", tuple(labels + ["normalization"]), tuple(clean)
    )


@dataclass
class CalibrationResult:
    feasible: bool
    measure: Measure | None = None
    min_weight: float = 0.0
    certificate: dict = field(default_factory=dict)

    @property
    def equivalent(self) -> bool:
        return self.feasible and self.min_weight >= EQUIV_TOL


def _support_mask(n, support) -> np.ndarray:
    if support is None:
        return np.ones(n, dtype=bool)
    s = np.asarray(support)
    if s.dtype == bool:
        return s.copy()
    mask = np.zeros(n, dtype=bool)
    mask[s] = True
    return mask


def find_calibrated_measure(system: MartingaleSystem, support=None) -> CalibrationResult:
    """Calibrated measure vanishing off ``support`` and maximizing its smallest weight on it."""
    n = system.n_paths
    mask = _support_mask(n, support)
    A, b = system.A, system.b
    # variables (q, tau): max tau, A q = b, q_w >= tau on the support, q_w = 0 off it
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    idx = np.flatnonzero(mask)
    A_ub = np.zeros((idx.size, n + 1))
    A_ub[np.arange(idx.size), idx] = -1.0
    A_ub[:, -1] = 1.0
    ub = np.r_[np.where(mask, np.inf, 0.0), 1.0]
    res = solve_lp(LinearProgram(c, A_ub, np.zeros(idx.size), A_eq, b, np.r_[np.zeros(n), -np.inf], ub, "max"))
    if res.status == "infeasible":
        return CalibrationResult(False, certificate=res.certificate)
    q = res.x[:n]
    q[~mask] = 0.0
    return CalibrationResult(True, Measure.clean(q, drop=0.0 if res.x[-1] > 0 else 1e-14), float(res.x[-1]))


def equivalent_martingale_for(P: Measure, system: MartingaleSystem) -> CalibrationResult:
    """Calibrated Q with the same null sets as P, or an infeasible result."""
    res = find_calibrated_measure(system, P.support)
    if res.feasible and res.min_weight < EQUIV_TOL:
        return CalibrationResult(False, res.measure, res.min_weight, {"kind": "support", "reason": "no equivalent measure"})
    return res


def chargeable_paths(system: MartingaleSystem) -> np.ndarray:
    """Mask of paths that some calibrated measure charges."""
    n = system.n_paths
    found = np.zeros(n, dtype=bool)
    while True:
        c = (~found).astype(float)
        res = solve_lp(LinearProgram(c, A_eq=system.A, b_eq=system.b, sense="max"))
        if not res.ok:
            if not found.any():
                raise MarketError("no calibrated martingale measure exists", "M_nonempty")
            break
        new = (res.x > 1e-12) & ~found
        if not new.any():
            break
        found |= new
    if not found.any():
        raise MarketError("no calibrated martingale measure exists", "M_nonempty")
    return found


class Ambiguity:
    """Convex set of candidate physical measures."""

    kind: str = ""

    def worst_case_expectation(self, f):
        raise NotImplementedError

    def union_support(self) -> np.ndarray:
        raise NotImplementedError


class HullAmbiguity(Ambiguity):
    kind = "hull"

    def __init__(self, vertices: Sequence[Measure]):
        if not vertices:
            raise MarketError("hull ambiguity needs at least one measure", "ambiguity")
        n = len(vertices[0])
        if any(len(v) != n for v in vertices):
            raise MarketError("hull vertices have different lengths", "ambiguity")
        self.vertices = tuple(vertices)
        self.matrix = np.vstack([v.weights for v in vertices])  # (K, n)

    @property
    def n_paths(self) -> int:
        return self.matrix.shape[1]

    def member(self, w) -> Measure:
        w = np.asarray(w, dtype=float)
        return Measure.clean(w @ self.matrix, drop=0.0)

    def union_support(self) -> np.ndarray:
        return np.any(self.matrix > 0, axis=0)

    def worst_case_expectation(self, f):
        """Minimum of E_P f over the hull, attained at a vertex (lowest index on ties)."""
        vals = self.matrix @ np.asarray(f, dtype=float)
        k = int(np.argmin(vals))
        return float(vals[k]), self.vertices[k]

    def to_spec(self) -> dict:
        return {"type": "hull", "measures": [v.weights.tolist() for v in self.vertices]}


class DensityBand(Ambiguity):
    """P with alpha <= dP/dR <= beta for some calibrated R, kept in lifted (p, r) form."""

    kind = "density_band"

    def __init__(self, alpha: float, beta: float, system: MartingaleSystem, cap: float | None = None):
        if not 0 < alpha < 1:
            raise MarketError(f"alpha must lie in (0, 1), got {alpha}", "band_alpha")
        if not beta > 1:
            raise MarketError(f"beta must exceed 1, got {beta}", "band_beta")
        grid = system.market.grid
        self.cap = cap if cap is not None else (grid.cap if grid.cap is not None else max(max(l) for l in grid.levels))
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.system = system
        self._charged = chargeable_paths(system)

    @property
    def n_paths(self) -> int:
        return self.system.n_paths

    def union_support(self) -> np.ndarray:
        return self._charged.copy()

    def lifted_lp(self, f, sense: str = "min") -> LinearProgram:
        n = self.n_paths
        A, b = self.system.A, self.system.b
        I = np.eye(n)
        A_eq = np.vstack([np.hstack([np.zeros_like(A), A]), np.r_[np.ones(n), np.zeros(n)][None, :]])
        b_eq = np.r_[b, 1.0]
        A_ub = np.vstack([np.hstack([-I, self.alpha * I]), np.hstack([I, -self.beta * I])])
        c = np.r_[np.asarray(f, dtype=float), np.zeros(n)]
        return LinearProgram(c, A_ub, np.zeros(2 * n), A_eq, b_eq, sense=sense)

    def worst_case_expectation(self, f):
        res = solve_lp(self.lifted_lp(f))
        if not res.ok:
            raise MarketError("density band is empty", "band_nonempty")
        return res.fun, Measure.clean(res.x[: self.n_paths])

    def marginal_range(self, path: int) -> tuple[float, float]:
        e = np.zeros(self.n_paths)
        e[path] = 1.0
        lo = solve_lp(self.lifted_lp(e, "min")).fun
        hi = solve_lp(self.lifted_lp(e, "max")).fun
        return lo, hi

    def is_feasible_pair(self, p, r, tol: float = FEAS_TOL) -> bool:
        p = np.asarray(p, dtype=float)
        r = np.asarray(r, dtype=float)
        return bool(
            self.system.is_calibrated(r, tol)
            and abs(p.sum() - 1.0) <= tol
            and np.all(p - self.alpha * r >= -tol)
            and np.all(self.beta * r - p >= -tol)
        )

    def sample_reference(self, rng, n_vertices: int = 3) -> np.ndarray:
        """Random calibrated measure: a convex mix of LP vertices and the max-min point."""
        pts = [find_calibrated_measure(self.system, self._charged).measure.weights]
        for _ in range(n_vertices):
            res = solve_lp(LinearProgram(rng.normal(size=self.n_paths), A_eq=self.system.A, b_eq=self.system.b))
            pts.append(np.clip(res.x, 0, None))
        lam = rng.dirichlet(np.ones(len(pts)))
        r = lam @ np.vstack(pts)
        return r / r.sum()

    def sample_pair(self, rng) -> tuple[np.ndarray, np.ndarray]:
        """Random feasible lifted pair (p, r)."""
        r = self.sample_reference(rng)
        s = r > 0
        d = rng.normal(size=self.n_paths)
        d[~s] = 0.0
        # make E_r[d] = 0 so that p = r (1 + tau d) is normalized
        d[s] -= (r[s] @ d[s]) / r[s].sum()
        up = np.where(d > 0, (self.beta - 1.0) / np.where(d > 0, d, 1.0), np.inf)
        dn = np.where(d < 0, (self.alpha - 1.0) / np.where(d < 0, d, -1.0), np.inf)
        tau_max = min(up[s].min(initial=np.inf), dn[s].min(initial=np.inf))
        tau = rng.uniform() * (tau_max if np.isfinite(tau_max) else 0.0)
        p = r * (1.0 + tau * d)
        p = np.clip(p, 0, None)
        return p / p.sum(), r

    def to_spec(self) -> dict:
        return {"type": "density_band", "alpha": self.alpha, "beta": self.beta}


def build_ambiguity(spec: Mapping, system: MartingaleSystem | None = None) -> Ambiguity:
    kind = spec.get("type")
    if kind == "hull":
        measures = spec.get("measures")
        if not measures:
            raise MarketError("hull ambiguity needs at least one measure", "ambiguity")
        verts = [Measure(np.asarray(m, dtype=float)) for m in measures]
        if system is not None and any(len(v) != system.n_paths for v in verts):
            raise MarketError(f"hull measures must have {system.n_paths} weights", "ambiguity")
        return HullAmbiguity(verts)
    if kind == "density_band":
        if system is None:
            raise ValueError("density band needs the reference martingale system")
        return DensityBand(float(spec["alpha"]), float(spec["beta"]), system, spec.get("cap"))
    raise MarketError(f"unknown ambiguity type {kind!r}", "ambiguity")


def worst_case_expectation(ambiguity: Ambiguity, f):
    return ambiguity.worst_case_expectation(f)


def kl_divergence(p, q) -> float:
    """sum p ln(p/q) with 0 ln 0 = 0; +inf if p charges a q-null path."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    s = p > 0
    if np.any(q[s] <= 0):
        return math.inf
    return float(p[s] @ np.log(p[s] / q[s]))
