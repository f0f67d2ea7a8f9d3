"""Command line entry point.

Exit codes: 0 success, 2 schema violation, 3 invariant violation, 4 failed
verification, 5 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .dual import SaddleReport, conjugate_search, theorem2_verify
from .instances import SchemaError, parse_instance, write_random_instance
from .market import MarketError
from .optim.barrier import BarrierError
from .optim.concave import IterationCapExceeded
from .optim.lp import LPError
from .pipeline import SCHEMA_VERSION, primal_stage, report_json, run_pipeline
from .primal import ConvergenceError, verify_minimax
from .superhedge import duality_gap, superhedge_price
from .tolerances import RESIDUAL_TOL, SADDLE_TOL
from .utility import UtilityDomainError, parse_utility

EXIT_OK, EXIT_SCHEMA, EXIT_INVARIANT, EXIT_VERIFY, EXIT_SOLVER = 0, 2, 3, 4, 5


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustss", description="Robust semi-static utility maximization on finite grids.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_instance=True):
        if needs_instance:
            p.add_argument("--market", required=True, help="market JSON file")
            p.add_argument("--ambiguity", required=True, help="ambiguity JSON file")
        p.add_argument("--utility", default="log", help="log | power:p | bexp:p")
        p.add_argument("--x0", type=float, nargs="+", default=[1.0], help="initial wealth (several values form a grid)")
        p.add_argument("--tol-saddle", type=float, default=SADDLE_TOL)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--seed", type=int, default=0)

    for name, help_ in (("solve", "full pipeline"), ("primal", "robust primal and robust value"), ("dual", "dual conjugacy search")):
        common(sub.add_parser(name, help=help_))
    p = sub.add_parser("superhedge", help="superhedging price of a claim")
    common(p)
    p.add_argument("--claim", required=True, help="JSON file: per-path values, or {'values': [...]} ")
    p = sub.add_parser("verify", help="re-check the saddle residuals of a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", default=".")
    p = sub.add_parser("gen", help="write a random instance")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--kind", choices=["hull", "density_band"], default=None)
    return ap


def _seed(args) -> int:
    env = os.environ.get("ROBUSTSS_SEED")
    if env is not None:
        return int(env)
    return 0 if getattr(args, "seed", None) is None else int(args.seed)


def _config(args, x0) -> dict:
    return {
        "command": args.command,
        "market": str(args.market),
        "ambiguity": str(args.ambiguity),
        "utility": args.utility,
        "x0": x0,
        "tol_saddle": args.tol_saddle,
        "seed": _seed(args),
    }


def _stem(args, x0) -> str:
    base = Path(args.market).stem
    return f"{base}_x{x0:g}"


def _write(out_dir, stem, report, csv_text=None, timings=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.report.json").write_text(report_json(report), encoding="utf-8")
    if csv_text is not None:
        (out / f"{stem}.paths.csv").write_text(csv_text, encoding="utf-8")
    if timings is not None:
        (out / f"{stem}.timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_one(args, x0) -> int:
    np.random.seed(_seed(args))
    inst = parse_instance(args.market, args.ambiguity, args.utility)
    cfg = _config(args, x0)
    stem = _stem(args, x0)
    if args.command == "solve":
        res = run_pipeline(inst, x0, args.tol_saddle, cfg)
        _write(args.out_dir, stem, res.report, res.csv_text, res.timings)
        return EXIT_OK if res.passed else EXIT_VERIFY
    if args.command == "primal":
        primal, robust, timings = primal_stage(inst, x0, args.tol_saddle)
        mm = verify_minimax(primal.value, robust.value, 2 * args.tol_saddle)
        checks = {
            "minimax": {"value": mm["gap"], "tol": mm["tol"], "pass": mm["pass"]},
            "primal_certified_gap": {"value": primal.certified_gap, "tol": args.tol_saddle, "pass": primal.certified_gap <= args.tol_saddle},
        }
        report = {
            "schema": SCHEMA_VERSION,
            "config": cfg,
            "primal": {"value": primal.value, "strategy": primal.strategy.to_dict(), "wealth": primal.wealth.tolist(),
                       "worst_measure": primal.worst_measure.weights.tolist(), "certified_gap": primal.certified_gap},
            "robust_value": {"value": robust.value, "measure": robust.measure.weights.tolist(), "certified_gap": robust.certified_gap},
            "checks": checks,
            "pass": all(c["pass"] for c in checks.values()),
        }
        _write(args.out_dir, stem, report, timings=timings)
        return EXIT_OK if report["pass"] else EXIT_VERIFY
    if args.command == "dual":
        conj = conjugate_search(x0, inst.ambiguity, inst.system, inst.utility, args.tol_saddle)
        d = conj.dual
        ok = d.certified_gap <= args.tol_saddle
        report = {
            "schema": SCHEMA_VERSION,
            "config": cfg,
            "dual": {"y": conj.y_hat, "value": d.value, "conjugate_value": conj.value, "P_hat": d.P_hat.weights.tolist(),
                     "Q_hat": d.Q_hat.weights.tolist(), "Y_hat": d.Y_hat.tolist(), "certified_gap": d.certified_gap},
            "checks": {"dual_certified_gap": {"value": d.certified_gap, "tol": args.tol_saddle, "pass": ok}},
            "pass": ok,
        }
        _write(args.out_dir, stem, report)
        return EXIT_OK if ok else EXIT_VERIFY
    if args.command == "superhedge":
        raw = json.loads(Path(args.claim).read_text(encoding="utf-8"))
        values = raw["values"] if isinstance(raw, dict) else raw
        if not isinstance(values, list) or len(values) != inst.system.n_paths:
            raise SchemaError(f"claim must list {inst.system.n_paths} per-path values")
        scope = inst.ambiguity.union_support()
        sh = superhedge_price(values, inst.system, scope=scope)
        gap = duality_gap(values, inst.system, scope=scope)
        report = {
            "schema": SCHEMA_VERSION,
            "config": {**cfg, "claim": str(args.claim)},
            "superhedge": {"price": sh.price, "strategy": sh.strategy.to_dict() if sh.strategy else None,
                           "max_expectation": gap["max_expectation"], "Q": gap["Q"].weights.tolist()},
            "checks": {"duality_gap": {"value": gap["gap"], "tol": gap["tol"], "pass": gap["pass"]}},
            "pass": gap["pass"],
        }
        _write(args.out_dir, f"{Path(args.claim).stem}_superhedge", report)
        return EXIT_OK if gap["pass"] else EXIT_VERIFY
    raise ValueError(args.command)


def _guarded(args, x0) -> int:
    try:
        return _run_one(args, x0)
    except (SchemaError, json.JSONDecodeError, KeyError, FileNotFoundError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (MarketError, UtilityDomainError) as exc:
        name = getattr(exc, "invariant", "utility")
        print(f"invariant violated [{name}]: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConvergenceError, IterationCapExceeded, BarrierError, LPError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def _verify(args) -> int:
    try:
        rep = json.loads(Path(args.report).read_text(encoding="utf-8"))
        sd = rep["saddle"]
        ut = parse_utility(rep["instance"]["utility"])
        saddle = SaddleReport(
            sd["x0"], sd["u_hat"], sd["u"], sd["y_hat"], sd["v_y"], sd["v_P_y"], np.asarray(sd["X_hat"]),
            np.asarray(sd["P_hat"]), np.asarray(sd["Q_hat"]), sd["minimax_gap"], sd["conjugacy_gap"],
        )
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    res = theorem2_verify(saddle, ut, RESIDUAL_TOL)
    tol = rep.get("config", {}).get("tol_saddle", SADDLE_TOL)
    res["minimax"] = {"value": saddle.minimax_gap, "tol": 2 * tol, "pass": saddle.minimax_gap <= 2 * tol}
    res["conjugacy"] = {"value": saddle.conjugacy_gap, "tol": 3 * tol, "pass": saddle.conjugacy_gap <= 3 * tol}
    res["pass"] = all(v["pass"] for k, v in res.items() if k != "pass")
    for k, v in res.items():
        if k != "pass":
            print(f"{k:14s} {v['value']:.3e} (tol {v['tol']:.1e}) {'PASS' if v['pass'] else 'FAIL'}")
    return EXIT_OK if res["pass"] else EXIT_VERIFY


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    if args.command == "verify":
        return _verify(args)
    if args.command == "gen":
        seed = _seed(args) if args.seed is None else args.seed
        if os.environ.get("ROBUSTSS_SEED") is not None:
            seed = int(os.environ["ROBUSTSS_SEED"])
        try:
            mf, af = write_random_instance(seed, args.out_dir, T=args.T, kind=args.kind)
        except ValueError as exc:
            print(f"invalid request: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        print(mf)
        print(af)
        return EXIT_OK
    xs = list(args.x0)
    if any(not x > 0 for x in xs):
        print("invariant violated [x0]: initial wealth must be positive", file=sys.stderr)
        return EXIT_INVARIANT
    if args.jobs > 1 and len(xs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_guarded, [args] * len(xs), xs))
    else:
        codes = [_guarded(args, x) for x in xs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
