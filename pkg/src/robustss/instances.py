"""Instance files: parsing with eager invariant checks, and a seeded random generator.

A market file is JSON with ``T``, ``s0``, ``levels``, optional ``cap``,
``options``, ``time_zero_trading`` and ``calibration``. An ambiguity file is
either ``{"type": "hull", "measures": [...]}`` or
``{"type": "density_band", "alpha": a, "beta": b}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .market import Market, MarketError, MarketGrid, OptionContract
from .measures import (
    Ambiguity,
    HullAmbiguity,
    MartingaleSystem,
    build_ambiguity,
    build_martingale_system,
    chargeable_paths,
    equivalent_martingale_for,
)
from .utility import UtilityFamily, parse_utility

MAX_T = 3
MAX_LEVELS = 4
MAX_OPTIONS = 2


class SchemaError(ValueError):
    """Malformed instance file: missing field, wrong type, unparsable JSON."""


@dataclass
class Instance:
    market: Market
    system: MartingaleSystem
    ambiguity: Ambiguity
    utility: UtilityFamily
    market_spec: dict
    ambiguity_spec: dict
    warnings: list


def _require(d, key, types, where):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected a JSON object")
    if key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    v = d[key]
    if not isinstance(v, types) or (isinstance(v, bool) and types is not bool):
        raise SchemaError(f"{where}: field {key!r} has the wrong type")
    return v


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}: expected a number")
    return float(v)


def parse_market(spec: dict) -> Market:
    T = _require(spec, "T", int, "market")
    s0 = _number(_require(spec, "s0", (int, float), "market"), "market.s0")
    levels = _require(spec, "levels", list, "market")
    if not all(isinstance(lv, list) for lv in levels):
        raise SchemaError("market.levels: expected an array of arrays")
    levels = tuple(tuple(_number(v, "market.levels") for v in lv) for lv in levels)
    cap = spec.get("cap")
    cap = None if cap is None else _number(cap, "market.cap")
    tz = spec.get("time_zero_trading", True)
    if not isinstance(tz, bool):
        raise SchemaError("market.time_zero_trading: expected a boolean")
    options = []
    for i, o in enumerate(spec.get("options", []) or []):
        where = f"market.options[{i}]"
        kind = _require(o, "kind", str, where)
        if kind == "table":
            vals = _require(o, "values", list, where)
            options.append(
                OptionContract("table", price=_number(o.get("price", 0.0), where), values=tuple(_number(v, where) for v in vals))
            )
        else:
            options.append(
                OptionContract(
                    kind,
                    int(_number(_require(o, "maturity", int, where), where)),
                    _number(_require(o, "strike", (int, float), where), where),
                    _number(_require(o, "price", (int, float), where), where),
                )
            )
    return Market(MarketGrid(T, s0, levels, cap), tuple(options), tz)


def _calibration(spec: dict):
    cal = spec.get("calibration")
    if cal is None:
        return None
    if isinstance(cal, str):
        cal = {"calibration": cal}
    if not isinstance(cal, dict):
        raise SchemaError("market.calibration: expected a string or object")
    if cal.get("calibration") == "marginals":
        marg = cal.get("marginals")
        if not isinstance(marg, list) or not all(isinstance(m, dict) for m in marg):
            raise SchemaError("market.calibration.marginals: expected an array of {level: mass} objects")
        try:
            cal = {"calibration": "marginals", "marginals": [{float(k): float(v) for k, v in m.items()} for m in marg]}
        except ValueError:
            raise SchemaError("market.calibration.marginals: levels and masses must be numbers") from None
    return cal


def check_ambiguity_assumptions(ambiguity: Ambiguity, system: MartingaleSystem) -> list:
    """Eager check that every hull vertex has an equivalent calibrated measure.

    Returns warnings (e.g. vertices with different supports); raises
    :class:`MarketError` naming ``assumption_P2`` when the check fails.
    """
    warnings = []
    chargeable_paths(system)  # raises M_nonempty
    if isinstance(ambiguity, HullAmbiguity):
        supports = []
        for k, v in enumerate(ambiguity.vertices):
            if not equivalent_martingale_for(v, system).feasible:
                raise MarketError(
                    f"assumption_P2: hull measure {k} charges a path no calibrated martingale measure can", "assumption_P2"
                )
            supports.append(tuple(v.support))
        if len(set(supports)) > 1:
            warnings.append("hull measures have different supports; admissibility is imposed on their union")
    return warnings


def build_instance(market_spec: dict, ambiguity_spec: dict, utility="log") -> Instance:
    market = parse_market(market_spec)
    system = build_martingale_system(market, _calibration(market_spec))
    if not isinstance(ambiguity_spec, dict) or "type" not in ambiguity_spec:
        raise SchemaError("ambiguity: missing field 'type'")
    kind = ambiguity_spec["type"]
    if kind == "hull":
        ms = _require(ambiguity_spec, "measures", list, "ambiguity")
        if not all(isinstance(m, list) for m in ms):
            raise SchemaError("ambiguity.measures: expected an array of arrays")
    elif kind == "density_band":
        _number(_require(ambiguity_spec, "alpha", (int, float), "ambiguity"), "ambiguity.alpha")
        _number(_require(ambiguity_spec, "beta", (int, float), "ambiguity"), "ambiguity.beta")
    else:
        raise SchemaError(f"ambiguity: unknown type {kind!r}")
    ambiguity = build_ambiguity(ambiguity_spec, system)
    warnings = check_ambiguity_assumptions(ambiguity, system)
    ut = parse_utility(utility) if isinstance(utility, str) else utility
    return Instance(market, system, ambiguity, ut, market_spec, ambiguity_spec, warnings)


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None


def parse_instance(market_file, ambiguity_file, utility="log") -> Instance:
    return build_instance(_load_json(market_file), _load_json(ambiguity_file), utility)


# -- random instances ------------------------------------------------------------


def _tilted_distribution(rng, levels, mean):
    """Full-support distribution on ``levels`` with the given mean: an exponential tilt of a Dirichlet draw."""
    w = rng.dirichlet(np.full(levels.size, 2.0))
    z = (levels - mean) / (levels.max() - levels.min())

    def m(lam):
        e = w * np.exp(lam * z - np.max(lam * z))
        return float(e @ z / e.sum())

    lam = brentq(m, -200.0, 200.0, xtol=1e-14)
    e = w * np.exp(lam * z - np.max(lam * z))
    return e / e.sum()


def _random_levels(rng, T, s0, max_levels):
    out = []
    lo, hi = s0, s0
    for _ in range(T):
        n = int(rng.integers(2, max_levels + 1))
        lo = round(lo * float(rng.uniform(0.55, 0.85)), 4)
        hi = round(hi * float(rng.uniform(1.2, 1.8)), 4)
        inner = sorted(round(float(v), 4) for v in rng.uniform(lo, hi, size=n - 2))
        lv = sorted({lo, hi, *inner})
        out.append(lv)
    return out


def generate_random_instance(
    seed: int,
    *,
    T: int | None = None,
    max_levels: int = MAX_LEVELS,
    max_options: int = MAX_OPTIONS,
    kind: str | None = None,
) -> tuple[dict, dict]:
    """Seeded random (market spec, ambiguity spec).

    The martingale measure is drawn first (full support, one conditional law
    per node), options are priced under it, and ambiguity members are tilts of
    it, so the calibrated set is nonempty and every member has an equivalent
    calibrated measure.
    """
    if T is not None and not 1 <= T <= MAX_T:
        raise ValueError(f"T must lie in 1..{MAX_T}, got {T}")
    if not 2 <= max_levels <= MAX_LEVELS:
        raise ValueError(f"levels per period must lie in 2..{MAX_LEVELS}, got {max_levels}")
    if not 0 <= max_options <= MAX_OPTIONS:
        raise ValueError(f"at most {MAX_OPTIONS} options, got {max_options}")
    if kind not in (None, "hull", "density_band"):
        raise ValueError(f"unknown ambiguity kind {kind!r}")
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, MAX_T + 1)) if T is None else T
    s0 = 1.0
    levels = _random_levels(rng, T, s0, max_levels)
    market = Market(MarketGrid(T, s0, tuple(tuple(lv) for lv in levels)))
    ps = market.paths

    # path weights of Q as a product of conditional laws over the prefix tree
    q = np.ones(ps.n_paths)
    for nd in ps.nodes:
        if nd.depth == T:
            continue
        lv = np.asarray(levels[nd.depth])
        cond = _tilted_distribution(rng, lv, nd.price)
        child = ps.index[nd.first : nd.stop, nd.depth]
        q[nd.first : nd.stop] *= cond[child]
    q /= q.sum()

    options = []
    for _ in range(int(rng.integers(0, max_options + 1))):
        mat = int(rng.integers(1, T + 1))
        lv = levels[mat - 1]
        strike = round(float(rng.uniform(lv[0], lv[-1])), 4)
        k = "call" if rng.uniform() < 0.5 else "put"
        pay = np.array([OptionContract(k, mat, strike).raw_payoff(ps.prices[w]) for w in range(ps.n_paths)])
        options.append({"kind": k, "maturity": mat, "strike": strike, "price": float(q @ pay)})

    market_spec = {"T": T, "s0": s0, "levels": levels, "options": options, "time_zero_trading": True}
    kind = kind or ("hull" if rng.uniform() < 0.5 else "density_band")
    if kind == "hull":
        K = int(rng.integers(2, 4))
        measures = []
        for _ in range(K):
            sigma = float(rng.uniform(0.2, 0.8))
            p = q * np.exp(sigma * rng.normal(size=q.size))
            measures.append((p / p.sum()).tolist())
        amb = {"type": "hull", "measures": measures}
    else:
        amb = {
            "type": "density_band",
            "alpha": round(float(rng.uniform(0.3, 0.9)), 4),
            "beta": round(float(rng.uniform(1.2, 3.0)), 4),
        }
    return market_spec, amb


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_random_instance(seed: int, out_dir, **caps) -> tuple[Path, Path]:
    market_spec, amb = generate_random_instance(seed, **caps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mf, af = out / f"market_{seed}.json", out / f"ambiguity_{seed}.json"
    dump_json(market_spec, mf)
    dump_json(amb, af)
    return mf, af


def r1_specs() -> tuple[dict, dict]:
    """Binomial benchmark: levels {0.5, 2}, no options, two-point hull (down, up order)."""
    return (
        {"T": 1, "s0": 1.0, "levels": [[0.5, 2.0]], "options": [], "time_zero_trading": True},
        {"type": "hull", "measures": [[0.6, 0.4], [0.4, 0.6]]},
    )
