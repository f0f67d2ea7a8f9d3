"""Utility families with their convex conjugate and inverse marginal utility.

Three families are supported:

* ``log``: U(x) = ln x
* ``power:p``: U(x) = x**p / p, 0 < p < 1
* ``bexp:p``: U(x) = 1 - exp(-x**p), 0 < p < 1 (bounded, Inada)

All methods are vectorised over numpy arrays.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .tolerances import XMIN

log = logging.getLogger(__name__)


class UtilityDomainError(ValueError):
    """Argument outside the domain of U, V or I."""


class UtilityFamily:
    tag: str = ""
    bounded: bool = False

    def U(self, x):
        raise NotImplementedError

    def dU(self, x):
        raise NotImplementedError

    def d2U(self, x):
        raise NotImplementedError

    def I(self, y):
        raise NotImplementedError

    def V(self, y):
        raise NotImplementedError

    @property
    def sup_U(self) -> float:
        return math.inf

    def dI(self, y):
        """Derivative of the inverse marginal utility, 1 / U''(I(y))."""
        return 1.0 / self.d2U(self.I(y))

    def d2V(self, y):
        return -self.dI(y)

    def _check_y(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or (not self.bounded and np.any(y <= 0)):
            raise UtilityDomainError(f"{self.tag}: conjugate needs y > 0, got min {y.min()}")
        return y

    def __repr__(self) -> str:
        return f"<utility {self.tag}>"


@dataclass(frozen=True, repr=False)
class LogUtility(UtilityFamily):
    tag: str = "log"

    def U(self, x):
        return np.log(x)

    def dU(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def d2U(self, x):
        return -1.0 / np.asarray(x, dtype=float) ** 2

    def I(self, y):
        return 1.0 / self._check_y(y)

    def V(self, y):
        return -np.log(self._check_y(y)) - 1.0

    def dI(self, y):
        return -1.0 / self._check_y(y) ** 2


@dataclass(frozen=True, repr=False)
class PowerUtility(UtilityFamily):
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise UtilityDomainError(f"power utility needs 0 < p < 1, got {self.p}")

    @property
    def tag(self) -> str:  # type: ignore[override]
        return f"power:{self.p:g}"

    def U(self, x):
        return np.asarray(x, dtype=float) ** self.p / self.p

    def dU(self, x):
        return np.asarray(x, dtype=float) ** (self.p - 1.0)

    def d2U(self, x):
        return (self.p - 1.0) * np.asarray(x, dtype=float) ** (self.p - 2.0)

    def I(self, y):
        return self._check_y(y) ** (1.0 / (self.p - 1.0))

    def V(self, y):
        y = self._check_y(y)
        return (1.0 - self.p) / self.p * y ** (self.p / (self.p - 1.0))

    def dI(self, y):
        y = self._check_y(y)
        q = 1.0 / (self.p - 1.0)
        return q * y ** (q - 1.0)


@dataclass(frozen=True, repr=False)
class BoundedExpUtility(UtilityFamily):
    """U(x) = 1 - exp(-x**p). V and I have no closed form and are solved numerically."""

    p: float = 0.5
    bounded = True

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise UtilityDomainError(f"bounded-exp utility needs 0 < p < 1, got {self.p}")

    @property
    def tag(self) -> str:  # type: ignore[override]
        return f"bexp:{self.p:g}"

    @property
    def sup_U(self) -> float:
        return 1.0

    def U(self, x):
        x = np.asarray(x, dtype=float)
        return -np.expm1(-(x**self.p))

    def dU(self, x):
        x = np.asarray(x, dtype=float)
        return self.p * x ** (self.p - 1.0) * np.exp(-(x**self.p))

    def d2U(self, x):
        x = np.asarray(x, dtype=float)
        p = self.p
        xp = x**p
        return p * np.exp(-xp) * x ** (p - 2.0) * ((p - 1.0) - p * xp)

    def I(self, y):
        y = self._check_y(y)
        flat = np.atleast_1d(y)
        out = np.full(flat.shape, np.inf)
        pos = flat > 0
        if np.any(pos):
            out[pos] = np.exp(self._log_inverse(np.log(flat[pos])))
        return out.reshape(y.shape) if y.ndim else float(out[0])

    def _log_inverse(self, logy):
        # Solve F(z) = ln p + (p-1) z - exp(p z) - ln y = 0 for z = ln x.
        # F is concave and decreasing, so Newton from a point with F < 0 decreases
        # monotonically onto the root.
        p = self.p
        lp = math.log(p)
        z_a = (logy - lp) / (p - 1.0)
        z_b = np.log(np.maximum(lp - logy, 0.0) + 1.0) / p
        z = np.minimum(z_a, z_b)
        for _ in range(200):
            ez = np.exp(p * z)
            F = lp + (p - 1.0) * z - ez - logy
            dF = (p - 1.0) - p * ez
            step = F / dF
            z = z - step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(z))):
                break
        return z

    def V(self, y):
        y = self._check_y(y)
        x = np.asarray(self.I(y), dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.where(np.isinf(x), 1.0, self.U(np.where(np.isinf(x), 1.0, x)) - x * y)
        return out if out.ndim else float(out)


def parse_utility(spec: str) -> UtilityFamily:
    """Parse ``log``, ``power:p`` or ``bexp:p``."""
    spec = spec.strip().lower()
    if spec == "log":
        return LogUtility()
    name, _, arg = spec.partition(":")
    if not arg:
        raise UtilityDomainError(f"utility {spec!r} needs a parameter, e.g. {name}:0.5")
    try:
        p = float(arg)
    except ValueError:
        raise UtilityDomainError(f"utility parameter {arg!r} is not a number") from None
    if name == "power":
        return PowerUtility(p)
    if name in ("bexp", "bounded-exp"):
        return BoundedExpUtility(p)
    raise UtilityDomainError(f"unknown utility {spec!r}")


def conjugate_V(utility: UtilityFamily, y):
    return utility.V(y)


def inverse_marginal_I(utility: UtilityFamily, y):
    return utility.I(y)


def clamp_wealth(x, xmin: float = XMIN):
    """Clamp wealth in (0, xmin) up to xmin, warning when it happens."""
    x = np.asarray(x, dtype=float)
    low = x < xmin
    if np.any(low):
        warnings.warn(
            f"wealth {x[low].min():.3e} below xmin={xmin:g} clamped (Inada singularity at 0)",
            RuntimeWarning,
            stacklevel=2,
        )
        x = np.where(low, xmin, x)
    return x


def validate_utility(utility: UtilityFamily, probes=None) -> dict:
    """Numeric proxies for the Inada, asymptotic-elasticity and boundedness assumptions.

    The asymptotic elasticity proxy is x U'(x) / U(x) on the upper third of the
    probe grid (restricted to points with U > 0).
    """
    if probes is None:
        probes = np.logspace(-6, 6, 61)
    probes = np.sort(np.asarray(probes, dtype=float))
    if probes[0] <= 0 or math.log10(probes[-1] / probes[0]) < 6:
        raise ValueError("probe grid must be positive and span at least 6 orders of magnitude")

    du = np.asarray(utility.dU(probes), dtype=float)
    upper = probes[len(probes) * 2 // 3 :]
    u_up = np.asarray(utility.U(upper), dtype=float)
    keep = u_up > 0
    ae = upper[keep] * np.asarray(utility.dU(upper[keep])) / u_up[keep]

    warnings_ = []
    if not utility.bounded:
        warnings_.append(f"{utility.tag} is unbounded above; admitted for closed-form checks only")
        log.warning(warnings_[-1])
    return {
        "tag": utility.tag,
        "dU_at_min_probe": float(du[0]),
        "dU_at_max_probe": float(du[-1]),
        # strict on the probes where U' is representable (bexp underflows to 0)
        "dU_decreasing": bool(np.all(np.diff(du[du > 0]) < 0) and np.all(du >= 0)),
        "ae_probes": upper[keep].tolist(),
        "ae_proxy": ae.tolist(),
        "ae_max": float(ae.max()) if ae.size else math.nan,
        "bounded": utility.bounded,
        "sup_U": utility.sup_U,
        "warnings": warnings_,
    }
