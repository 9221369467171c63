"""
Critical sets
=============

Detection of the ordered local extremizer sets of a univariate function:
strict extremizers (points) and plateau extremizers (closed intervals of
constancy), together with the alternation relation linking their values.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from homeofit.errors import (
    ConstantFunctionError,
    InternalConsistencyError,
    NotAlternatingError,
    NumericError,
    ParameterError,
)

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]
DEFAULT_SCAN_POINTS = 2001
EXTREMUM_XTOL = 1e-10
FLAT_RTOL = 1e-9


def default_flat_tol(span: float) -> float:
    """Differences at or below this count as flat for values of range ``span``"""
    return FLAT_RTOL * (1.0 + span)


def evaluate_callable(f: Callable, xs: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on an array, falling back to a loop for scalar-only callables"""
    xs = np.asarray(xs, dtype=float)
    try:
        ys = np.asarray(f(xs), dtype=float)
        if ys.shape == xs.shape:
            return ys
    except (TypeError, ValueError):
        pass
    return np.array([float(f(x)) for x in xs.ravel()]).reshape(xs.shape)


@dataclass(frozen=True)
class Extremizer:
    """One extremizer set: a point (``lower == upper``) or a plateau interval"""

    lower: float
    upper: float
    value: float
    kind: str

    @property
    def is_plateau(self) -> bool:
        return self.upper > self.lower

    @property
    def representative(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "value": self.value,
            "kind": self.kind,
            "plateau": self.is_plateau,
        }


@dataclass(frozen=True)
class CriticalSet:
    domain: Interval
    extremizers: Tuple[Extremizer, ...]
    endpoint_values: Tuple[float, float]
    sign: int

    def __post_init__(self):
        for left, right in zip(self.extremizers[:-1], self.extremizers[1:]):
            if not left.upper < right.lower:
                raise InternalConsistencyError(
                    f"extremizer sets overlap or are unordered: "
                    f"[{left.lower}, {left.upper}] and [{right.lower}, {right.upper}]"
                )
        if alternation_sign(self.full_values) != self.sign:
            raise InternalConsistencyError("stored alternation sign does not match values")

    @property
    def M(self) -> int:
        return len(self.extremizers)

    @property
    def values(self) -> List[float]:
        return [e.value for e in self.extremizers]

    @property
    def plateau_flags(self) -> List[bool]:
        return [e.is_plateau for e in self.extremizers]

    @property
    def has_plateaus(self) -> bool:
        return any(self.plateau_flags)

    @property
    def representatives(self) -> List[float]:
        return [e.representative for e in self.extremizers]

    @property
    def full_values(self) -> List[float]:
        return [self.endpoint_values[0], *self.values, self.endpoint_values[1]]

    @property
    def full_points(self) -> List[float]:
        return [self.domain[0], *self.representatives, self.domain[1]]

    def to_dict(self) -> dict:
        return {
            "domain": list(self.domain),
            "M": self.M,
            "sign": self.sign,
            "endpoint_values": list(self.endpoint_values),
            "extremizers": [e.to_dict() for e in self.extremizers],
        }


def alternation_sign(values: Sequence[float]) -> int:
    """Sign ``s`` with ``s * (-1)**i * (f[i+1] - f[i]) > 0`` along the whole sequence"""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ParameterError("alternation needs at least two values")
    diffs = np.diff(v)
    if np.any(diffs == 0.0):
        raise NotAlternatingError("consecutive values are equal")
    alternating = (-1.0) ** np.arange(diffs.size)
    for sign in (1, -1):
        if np.all(sign * alternating * diffs > 0.0):
            return sign
    raise NotAlternatingError(f"values do not alternate: {v.tolist()}")


def _refine_point(f: Callable, xa: float, xb: float, xc: float, kind: str, xtol: float) -> Extremizer:
    flip = 1.0 if kind == "min" else -1.0

    def objective(x):
        return flip * float(f(x))

    result = optimize.minimize_scalar(
        objective, bracket=(xa, xb, xc), method="golden", options={"xtol": xtol, "maxiter": 200}
    )
    x_star = float(result.x)
    if not (xa <= x_star <= xc) or objective(x_star) > objective(xb):
        x_star = xb
    return Extremizer(x_star, x_star, float(f(x_star)), kind)


def _plateau_edge(f: Callable, outside: float, inside: float, level: float, tol: float, xtol: float) -> float:
    def excess(x):
        return abs(float(f(x)) - level) - tol

    if excess(outside) <= 0.0 or excess(inside) > 0.0:
        return inside
    return float(optimize.bisect(excess, outside, inside, xtol=xtol))


def _refine_plateau(
    f: Callable, xs: np.ndarray, ys: np.ndarray, j: int, k: int, kind: str, tol: float, xtol: float
) -> Extremizer:
    level = float(np.median(ys[j + 1 : k + 1]))
    lower = _plateau_edge(f, xs[j], xs[j + 1], level, tol, xtol)
    upper = _plateau_edge(f, xs[k + 1], xs[k], level, tol, xtol)
    rep = 0.5 * (lower + upper)
    return Extremizer(lower, upper, float(f(rep)), kind)


def find_critical_sets(
    f: Callable,
    domain: Sequence[float],
    n_scan: int = DEFAULT_SCAN_POINTS,
    plateau_tol: Optional[float] = None,
    xtol: float = EXTREMUM_XTOL,
) -> CriticalSet:
    """
    Ordered critical set of ``f`` on ``domain``.

    Successive differences on an equidistant scan are classified by sign, with
    |diff| <= ``plateau_tol`` counting as flat. A sign change across a single
    grid point is a strict extremizer (refined by golden-section search); a
    sign change across a flat run is a plateau (edges refined by bisection).
    """
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise ParameterError(f"domain must satisfy a < b, got [{a}, {b}]")
    if n_scan < 3:
        raise ParameterError(f"n_scan must be at least 3, got {n_scan}")

    xs = np.linspace(a, b, n_scan)
    ys = evaluate_callable(f, xs)
    if not np.all(np.isfinite(ys)):
        raise NumericError("target is not finite on the scan grid")

    span = float(np.ptp(ys))
    tol = default_flat_tol(span) if plateau_tol is None else float(plateau_tol)
    if span <= tol:
        raise ConstantFunctionError(f"function is constant on [{a}, {b}] within {tol:.3e}")

    diffs = np.diff(ys)
    signs = np.where(np.abs(diffs) <= tol, 0, np.sign(diffs)).astype(int)
    nonzero = np.flatnonzero(signs)

    extremizers: List[Extremizer] = []
    for j, k in zip(nonzero[:-1], nonzero[1:]):
        if signs[j] == signs[k]:
            continue
        kind = "max" if signs[j] > 0 else "min"
        if k == j + 1:
            ext = _refine_point(f, xs[j], xs[j + 1], xs[j + 2], kind, xtol)
        else:
            ext = _refine_plateau(f, xs, ys, j, k, kind, tol, xtol)
        extremizers.append(ext)

    endpoint_values = (float(ys[0]), float(ys[-1]))
    full = [endpoint_values[0], *[e.value for e in extremizers], endpoint_values[1]]
    try:
        sign = alternation_sign(full)
    except NotAlternatingError as e:
        raise InternalConsistencyError(f"alternation violated after refinement: {e}") from e

    cs = CriticalSet((a, b), tuple(extremizers), endpoint_values, sign)
    logger.debug(
        f"🔍 Critical set on [{a}, {b}]: M={cs.M}, plateaus={sum(cs.plateau_flags)}"
    )
    return cs


def piece_decomposition(domain: Sequence[float], cs: CriticalSet) -> List[Interval]:
    """Intervals I_0..I_M between consecutive representatives (endpoints included)"""
    a, b = float(domain[0]), float(domain[1])
    points = [a, *cs.representatives, b]
    if any(not lo < hi for lo, hi in zip(points[:-1], points[1:])):
        raise InternalConsistencyError("representatives are not strictly inside the domain")
    return list(zip(points[:-1], points[1:]))


def is_monotone_on(
    f: Callable, interval: Interval, tol: float = 0.0, n_points: int = 200
) -> bool:
    """Differences on an ``n_points`` subgrid have one sign up to ``tol``"""
    xs = np.linspace(interval[0], interval[1], n_points)
    diffs = np.diff(evaluate_callable(f, xs))
    return bool(np.all(diffs >= -tol) or np.all(diffs <= tol))
