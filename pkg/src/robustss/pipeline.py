"""End-to-end run: primal, robust value, minimax check, dual conjugacy, optimizer recovery, saddle residuals."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .dual import SaddleReport, conjugate_search, recover_optimizers, solve_v_P, theorem2_verify
from .instances import Instance
from .primal import solve_robust_primal, solve_u, verify_minimax
from .tolerances import FEAS_TOL, RESIDUAL_TOL, SADDLE_TOL

SCHEMA_VERSION = "robustss.report/1"


@dataclass
class RunResult:
    report: dict
    csv_text: str
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.report["pass"])


def _check(value, tol, ok=None) -> dict:
    value = float(value)
    return {"value": value, "tol": float(tol), "pass": bool(value <= tol if ok is None else ok)}


def _f(a):
    return [float(v) for v in np.asarray(a, dtype=float)]


def primal_stage(inst: Instance, x0: float, tol: float = SADDLE_TOL):
    t = time.perf_counter()
    primal = solve_robust_primal(x0, inst.ambiguity, inst.system, inst.utility, tol)
    t1 = time.perf_counter()
    robust = solve_u(x0, inst.ambiguity, inst.system, inst.utility, tol)
    t2 = time.perf_counter()
    return primal, robust, {"robust_primal": t1 - t, "robust_value": t2 - t1}


def run_pipeline(inst: Instance, x0: float, tol_saddle: float = SADDLE_TOL, config: dict | None = None) -> RunResult:
    timings = {}
    primal, robust, tp = primal_stage(inst, x0, tol_saddle)
    timings.update(tp)
    minimax = verify_minimax(primal.value, robust.value, 2 * tol_saddle)

    t = time.perf_counter()
    conj = conjugate_search(x0, inst.ambiguity, inst.system, inst.utility, tol_saddle)
    timings["conjugate_search"] = time.perf_counter() - t
    dual = conj.dual
    y_hat = conj.y_hat

    t = time.perf_counter()
    E = inst.ambiguity.union_support()
    # Q_hat from the per-measure problem at P_hat: same value, sharper minimizer
    vP = solve_v_P(y_hat, dual.P_hat, inst.system, inst.utility, tol_saddle)
    Q_hat = vP.Q_hat
    X_dual, Y_hat, ext_price = recover_optimizers(dual.P_hat, Q_hat, y_hat, x0, inst.utility, inst.system, scope=E)
    timings["recovery"] = time.perf_counter() - t

    saddle = SaddleReport(
        x0=float(x0),
        u_hat=primal.value,
        u=robust.value,
        y_hat=y_hat,
        v_y=dual.value,
        v_P_y=vP.value,
        X_hat=primal.wealth,
        P_hat=dual.P_hat.weights,
        Q_hat=Q_hat.weights,
        minimax_gap=minimax["gap"],
        conjugacy_gap=abs(robust.value - conj.value),
        Y_hat=Y_hat,
    )
    residuals = theorem2_verify(saddle, inst.utility, RESIDUAL_TOL)
    saddle.residuals = residuals

    S = dual.P_hat.support
    checks = {
        "minimax": _check(minimax["gap"], 2 * tol_saddle),
        "conjugacy": _check(saddle.conjugacy_gap, 3 * tol_saddle),
        "primal_certified_gap": _check(primal.certified_gap, tol_saddle),
        "robust_value_certified_gap": _check(robust.certified_gap, tol_saddle),
        "dual_certified_gap": _check(dual.certified_gap, tol_saddle),
        "admissibility": _check(max(0.0, -float(primal.wealth[E].min())), 0.0),
        "q_hat_calibrated": _check(inst.system.residual(Q_hat.weights), FEAS_TOL),
        "weak_duality": _check(max(0.0, primal.value - conj.value), 2 * tol_saddle),
        "dual_wealth_matches_primal": _check(float(np.max(np.abs(X_dual[S] - primal.wealth[S]))), RESIDUAL_TOL),
    }
    for k in ("r1", "r2", "r3", "r4", "r5", "density_mass"):
        checks[f"theorem2_{k}"] = residuals[k]
    passed = all(c["pass"] for c in checks.values())

    report = {
        "schema": SCHEMA_VERSION,
        "config": dict(config or {}),
        "instance": {
            "market": inst.market_spec,
            "ambiguity": inst.ambiguity_spec,
            "utility": inst.utility.tag,
            "n_paths": inst.system.n_paths,
            "warnings": list(inst.warnings),
        },
        "primal": {
            "value": primal.value,
            "certified_gap": primal.certified_gap,
            "strategy": primal.strategy.to_dict(),
            "worst_measure": _f(primal.worst_measure.weights),
            "wealth": _f(primal.wealth),
        },
        "robust_value": {
            "value": robust.value,
            "certified_gap": robust.certified_gap,
            "measure": _f(robust.measure.weights),
        },
        "dual": {
            "y": y_hat,
            "value": dual.value,
            "certified_gap": dual.certified_gap,
            "P_hat": _f(dual.P_hat.weights),
            "Q_hat": _f(Q_hat.weights),
            "Y_hat": _f(Y_hat),
            "X_hat": _f(X_dual),
            "extension_price": ext_price,
            "conjugate_value": conj.value,
            "v_P_hat": vP.value,
        },
        "saddle": {k: v for k, v in saddle.to_dict().items() if k != "residuals"},
        "checks": checks,
        "pass": passed,
    }
    return RunResult(report, per_path_csv(inst, X_dual, Y_hat, primal.wealth), timings)


def per_path_csv(inst: Instance, X, Y, wealth) -> str:
    ps = inst.market.paths
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", *[f"S{t + 1}" for t in range(ps.T)], "X_hat", "Y_hat", "wealth"])
    for i in range(ps.n_paths):
        w.writerow([i, *[repr(float(v)) for v in ps.prices[i]], repr(float(X[i])), repr(float(Y[i])), repr(float(wealth[i]))])
    return buf.getvalue()


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"
