"""Piecewise-linear (chord) models of a concave utility with a guaranteed error bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tolerances import PWL_EPS


@dataclass(frozen=True)
class PwlUtilityModel:
    breakpoints: np.ndarray
    values: np.ndarray
    slopes: np.ndarray  # U'(x_k) at each breakpoint
    error_bound: float

    def __call__(self, x):
        return np.interp(x, self.breakpoints, self.values)

    @property
    def chord_slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)


def _segment_gap(utility, a, b, ua, ub):
    """Exact max of U - chord on [a, b]: attained where U' equals the chord slope."""
    slope = (ub - ua) / (b - a)
    xs = float(np.clip(utility.I(slope), a, b)) if slope > 0 else b
    return float(utility.U(xs) - (ua + slope * (xs - a))), xs


def build_pwl_model(utility, lo: float, hi: float, eps: float = PWL_EPS, max_breakpoints: int = 100_000) -> PwlUtilityModel:
    """Chord interpolant of U on [lo, hi] with max |U - PWL| <= eps.

    Chords of a concave function never lie above it, so the model is a
    guaranteed under-estimate. Segments whose concavity gap exceeds ``eps`` are
    split at the point of maximal gap.
    """
    if not lo > 0:
        raise ValueError(f"range must start at a positive xmin (Inada singularity at 0), got {lo}")
    if not hi > lo:
        raise ValueError("empty range")
    d_lo, d_hi = float(utility.dU(lo)), float(utility.dU(hi))
    if not d_lo > d_hi:
        raise ValueError("utility is not strictly concave on the range; a PWL model is not meaningful")

    pts = [float(lo), float(hi)]
    vals = [float(utility.U(lo)), float(utility.U(hi))]
    gaps = [_segment_gap(utility, pts[0], pts[1], vals[0], vals[1])]
    while True:
        k = int(np.argmax([g for g, _ in gaps]))
        g, xs = gaps[k]
        if g <= eps:
            break
        if len(pts) >= max_breakpoints:
            raise RuntimeError(f"PWL model needs more than {max_breakpoints} breakpoints for eps={eps:g}")
        if not pts[k] < xs < pts[k + 1]:
            xs = 0.5 * (pts[k] + pts[k + 1])
        us = float(utility.U(xs))
        pts.insert(k + 1, xs)
        vals.insert(k + 1, us)
        gaps[k : k + 1] = [
            _segment_gap(utility, pts[k], xs, vals[k], us),
            _segment_gap(utility, xs, pts[k + 2], us, vals[k + 2]),
        ]
    bp = np.array(pts)
    return PwlUtilityModel(bp, np.array(vals), np.asarray(utility.dU(bp), dtype=float), max(g for g, _ in gaps))
