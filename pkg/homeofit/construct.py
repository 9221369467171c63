"""
Exact construction
==================

Constructive path to ``f = p o h``:

1. a Chandler polynomial ``p`` of degree M+1 whose critical values are the
   prescribed alternating extremum values,
2. a piecewise homeomorphism ``h`` gluing the monotone inverses
   ``(p|J_i)^-1 o f|I_i`` across the pieces of the critical set.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as mono

from homeofit.critical import (
    DEFAULT_SCAN_POINTS,
    CriticalSet,
    alternation_sign,
    default_flat_tol,
    evaluate_callable,
    find_critical_sets,
    piece_decomposition,
)
from homeofit.errors import (
    ConvergenceError,
    InternalConsistencyError,
    NotSingleExtremumError,
    OutOfRangeError,
    ParameterError,
    PreconditionError,
    RangeMismatchError,
)
from homeofit.poly import Basis, Polynomial, invert_on_monotone_interval

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]

NEWTON_MAX_ITER = 200
NEWTON_MAX_HALVINGS = 30
CERTIFICATION_POINTS = 2001
RESIDUAL_TOL = 1e-10
COMPOSITION_TOL = 1e-8


# ---------------------------------------------------------------------------
# Chandler polynomial
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChandlerResult:
    p: Polynomial
    nodes: Tuple[float, ...]
    values: Tuple[float, ...]
    residuals: Tuple[float, float]
    iterations: int = 0

    @property
    def M(self) -> int:
        return len(self.nodes) - 2

    def to_dict(self) -> dict:
        return {
            "degree": self.p.degree,
            "M": self.M,
            "nodes": list(self.nodes),
            "values": list(self.values),
            "coeffs": [float(c) for c in self.p.coeffs],
            "basis": self.p.basis.value,
            "residuals": {
                "max_value_residual": self.residuals[0],
                "max_derivative_residual": self.residuals[1],
            },
            "newton_iterations": self.iterations,
        }


def _antiderivative(nodes: np.ndarray, skip: Optional[int] = None) -> np.ndarray:
    roots = nodes if skip is None else np.delete(nodes, skip)
    return mono.polyint(mono.polyfromroots(roots) if roots.size else np.array([1.0]))


def _lobe_integrals(nodes: np.ndarray) -> np.ndarray:
    """Integrals of prod_j (t - y_j) between consecutive interior nodes"""
    vals = mono.polyval(nodes, _antiderivative(nodes))
    return np.diff(vals)


def _residual(state: np.ndarray, targets: np.ndarray) -> np.ndarray:
    nodes = np.concatenate([[0.0], state[:-1], [1.0]])
    return state[-1] * _lobe_integrals(nodes) - targets


def _jacobian(state: np.ndarray) -> np.ndarray:
    nodes = np.concatenate([[0.0], state[:-1], [1.0]])
    c = state[-1]
    n_free = nodes.size - 2
    J = np.empty((nodes.size - 1, n_free + 1))
    for col, k in enumerate(range(1, nodes.size - 1)):
        # limits are roots of the integrand, so only the integrand varies
        vals = mono.polyval(nodes, _antiderivative(nodes, skip=k))
        J[:, col] = -c * np.diff(vals)
    J[:, -1] = _lobe_integrals(nodes)
    return J


def _feasible(state: np.ndarray, c_sign: float) -> bool:
    """Nodos estrictamente ordenados y coeficiente líder con el signo pedido"""
    nodes = np.concatenate([[0.0], state[:-1], [1.0]])
    return bool(np.all(np.diff(nodes) > 0.0) and state[-1] * c_sign > 0.0)


def _damped_newton(
    state: np.ndarray,
    targets: np.ndarray,
    c_sign: float,
    tol: float,
    max_iter: int,
    max_halvings: int,
) -> Tuple[np.ndarray, int]:
    G = _residual(state, targets)
    norm = float(np.max(np.abs(G)))
    for iteration in range(max_iter):
        if norm <= tol:
            return state, iteration
        J = _jacobian(state)
        try:
            step = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -G, rcond=None)[0]

        t = 1.0
        for _ in range(max_halvings + 1):
            trial = state + t * step
            if _feasible(trial, c_sign):
                G_trial = _residual(trial, targets)
                norm_trial = float(np.max(np.abs(G_trial)))
                if norm_trial < norm:
                    state, G, norm = trial, G_trial, norm_trial
                    break
            t *= 0.5
        else:
            raise ConvergenceError(
                f"Newton step rejected after {max_halvings} halvings, residual {norm:.3e}", norm
            )
    if norm <= tol:
        return state, max_iter
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations, residual {norm:.3e}", norm)


def _continuation(
    start: np.ndarray,
    targets: np.ndarray,
    c_sign: float,
    tol: float,
    max_iter: int,
    max_halvings: int,
) -> Tuple[np.ndarray, int]:
    """Homotopy from the gaps realised by ``start`` to ``targets``"""
    initial = _residual(start, np.zeros_like(targets))
    state, tau, d_tau, total = start, 0.0, 0.25, 0
    while tau < 1.0:
        nxt = min(1.0, tau + d_tau)
        goal = (1.0 - nxt) * initial + nxt * targets
        try:
            state_new, its = _damped_newton(state, goal, c_sign, tol, max_iter, max_halvings)
        except ConvergenceError:
            d_tau *= 0.5
            if d_tau < 1e-6:
                raise
            continue
        state, tau, total = state_new, nxt, total + its
        d_tau = min(0.5, 2.0 * d_tau)
    return state, total


def _solve_endpoint(p: Polynomial, anchor: float, target: float, direction: float, span: float) -> float:
    """Node beyond ``anchor`` (left for direction -1) where p reaches ``target``"""
    h = max(1.0, span)
    start = float(p(anchor)) - target
    for _ in range(200):
        far = anchor + direction * h
        if (float(p(far)) - target) * start <= 0.0:
            interval = (far, anchor) if direction < 0 else (anchor, far)
            return invert_on_monotone_interval(p, interval, target)
        h *= 2.0
    raise ConvergenceError(f"could not bracket endpoint value {target!r}")


def chandler_polynomial(
    values: Sequence[float],
    max_iter: int = NEWTON_MAX_ITER,
    max_halvings: int = NEWTON_MAX_HALVINGS,
) -> ChandlerResult:
    """
    Degree-(M+1) polynomial with p(y_i) = f_i and p'(y_j) = 0 at the M interior nodes.

    ``p'(y) = c * prod_j (y - y_j)``; interior nodes are normalized to
    y_1 = 0, y_M = 1 (M >= 2) and solved with ``c`` by damped Newton on the
    lobe conditions; the outer nodes are then found on the monotone tails.
    """
    f = np.asarray(values, dtype=float)
    if f.ndim != 1 or f.size < 2:
        raise ParameterError("need at least two values f_0, f_1")
    if not np.all(np.isfinite(f)):
        raise ParameterError("values must be finite")
    sign = alternation_sign(f)
    M = f.size - 2
    tol = 1e-12 * (1.0 + float(np.max(np.abs(f))))
    iterations = 0

    if M == 0:
        p = Polynomial([f[0], f[1] - f[0]], (0.0, 1.0))
        nodes = np.array([0.0, 1.0])
    else:
        c_sign = float(sign * (-1) ** M)
        if M == 1:
            interior = np.array([0.0])
            c = 2.0 * c_sign
        else:
            targets = np.diff(f[1:-1])
            guess_nodes = np.linspace(0.0, 1.0, M)
            lobes = _lobe_integrals(guess_nodes)
            c0 = c_sign * np.sum(np.abs(targets)) / np.sum(np.abs(lobes))
            start = np.concatenate([guess_nodes[1:-1], [c0]])
            try:
                state, iterations = _damped_newton(start, targets, c_sign, tol, max_iter, max_halvings)
            except ConvergenceError as e:
                logger.debug(f"🔧 Direct Newton failed ({e}); switching to continuation")
                state, iterations = _continuation(start, targets, c_sign, tol, max_iter, max_halvings)
            interior = np.concatenate([[0.0], state[:-1], [1.0]])
            c = float(state[-1])

        coeffs = c * _antiderivative(interior)
        coeffs[0] += f[1] - mono.polyval(interior[0], coeffs)
        span = float(interior[-1] - interior[0])
        provisional = Polynomial(coeffs, (interior[0] - 1.0, interior[-1] + 1.0))
        y_left = _solve_endpoint(provisional, interior[0], f[0], -1.0, span)
        y_right = _solve_endpoint(provisional, interior[-1], f[-1], 1.0, span)
        nodes = np.concatenate([[y_left], interior, [y_right]])
        p = Polynomial(coeffs, (y_left, y_right))

    value_res = float(np.max(np.abs(p(nodes) - f)))
    deriv_res = float(np.max(np.abs(p.derivative()(nodes[1:-1])))) if M > 0 else 0.0
    bound = RESIDUAL_TOL * (1.0 + float(np.max(np.abs(f))))
    if value_res > bound or deriv_res > bound:
        raise ConvergenceError(
            f"Chandler residuals too large: values {value_res:.3e}, derivative {deriv_res:.3e}",
            max(value_res, deriv_res),
        )
    if not np.all(np.diff(nodes) > 0.0):
        raise InternalConsistencyError("Chandler nodes are not strictly increasing")

    logger.debug(f"✅ Chandler polynomial M={M}: residuals {value_res:.2e}, {deriv_res:.2e}")
    return ChandlerResult(p, tuple(float(y) for y in nodes), tuple(f.tolist()), (value_res, deriv_res), iterations)


# ---------------------------------------------------------------------------
# Piecewise homeomorphism
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HomeoPiece:
    source: Interval
    target: Interval


class PiecewiseHomeo:
    """
    Exact homeomorphism ``h`` with ``f = p o h``; on piece ``I_i`` it evaluates
    ``(p|J_i)^-1 (f(x))``. Increasing on the whole domain.
    """

    def __init__(self, f: Callable, p: Polynomial, pieces: Sequence[HomeoPiece], value_scale: float):
        self.f = f
        self.p = p
        self.pieces = tuple(pieces)
        self.value_scale = value_scale
        self.breakpoints = np.array([pc.source[0] for pc in self.pieces] + [self.pieces[-1].source[1]])
        self.logger = logging.getLogger(f"{__name__}.PiecewiseHomeo")

    @property
    def domain(self) -> Interval:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def _tolerances(self) -> Tuple[float, float]:
        """Newton value tolerance and the allowed overshoot of f beyond p(J_i)"""
        scale = 1.0 + self.value_scale
        return 8.0 * np.finfo(float).eps * scale, 1e-9 * scale

    def piece_map(self, i: int, x):
        piece = self.pieces[i]
        vals = evaluate_callable(self.f, np.asarray(x, dtype=float))
        try:
            tol, range_tol = self._tolerances()
            return invert_on_monotone_interval(self.p, piece.target, vals, tol=tol, range_tol=range_tol)
        except OutOfRangeError as e:
            raise RangeMismatchError(f"piece {i}: f leaves p(J_{i}): {e}") from e

    def __call__(self, x):
        xs = np.asarray(x, dtype=float)
        flat = np.atleast_1d(xs).ravel()
        which = np.clip(np.searchsorted(self.breakpoints, flat, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty_like(flat)
        for i in range(len(self.pieces)):
            mask = which == i
            if np.any(mask):
                out[mask] = self.piece_map(i, flat[mask])
        if xs.ndim == 0:
            return float(out[0])
        return out.reshape(xs.shape)

    def composition_residual(self, n_points: int = CERTIFICATION_POINTS) -> float:
        grid = np.linspace(*self.domain, n_points)
        return float(np.max(np.abs(evaluate_callable(self.f, grid) - self.p(self(grid)))))

    def junction_gaps(self) -> List[float]:
        gaps = []
        for i in range(len(self.pieces) - 1):
            x = self.pieces[i].source[1]
            gaps.append(abs(float(self.piece_map(i, x)) - float(self.piece_map(i + 1, x))))
        return gaps


def exact_homeomorphism(
    f: Callable,
    cs: CriticalSet,
    cr: ChandlerResult,
    n_certify: int = CERTIFICATION_POINTS,
) -> PiecewiseHomeo:
    """Glue ``h_i = (p|J_i)^-1 o f|I_i`` and certify ``sup |f - p o h|`` on a grid"""
    sources = piece_decomposition(cs.domain, cs)
    targets = list(zip(cr.nodes[:-1], cr.nodes[1:]))
    if len(sources) != len(targets):
        raise PreconditionError(
            f"critical set has {len(sources)} pieces but the polynomial has {len(targets)}"
        )

    grid = np.linspace(cs.domain[0], cs.domain[1], n_certify)
    f_grid = evaluate_callable(f, grid)
    value_scale = float(np.ptp(f_grid))
    match_tol = 1e-9 * (1.0 + value_scale)
    for x, y in zip(cs.full_points, cr.nodes):
        if abs(float(f(x)) - float(cr.p(y))) > match_tol:
            raise RangeMismatchError(f"f({x}) does not match p({y}): pieces are paired wrongly")

    h = PiecewiseHomeo(f, cr.p, [HomeoPiece(s, t) for s, t in zip(sources, targets)], value_scale)
    h_grid = h(grid)
    steps = np.diff(h_grid)
    if not np.all(steps > 0.0):
        raise InternalConsistencyError(
            f"h is not strictly increasing: {int(np.sum(steps <= 0.0))} non-positive steps on the certification grid"
        )
    residual = float(np.max(np.abs(f_grid - cr.p(h_grid))))
    if residual > COMPOSITION_TOL * (1.0 + value_scale):
        raise InternalConsistencyError(f"composition residual {residual:.3e} exceeds certification bound")
    h.certified_residual = residual
    h.logger.debug(f"✅ Exact homeomorphism certified: sup|f - p o h| = {residual:.3e}")
    return h


def strictify(
    xs: Sequence[float], ys: Sequence[float], eps: Optional[float] = None, flat_tol: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Turn monotone samples into strictly monotone ones.

    Steps with ``|dy| <= flat_tol`` are flat. Every maximal flat run of length
    k is replaced by its anchor value plus a linear ramp with increments
    ``delta / k`` (``delta <= eps``, smaller when the neighbouring step is
    tighter). A run touching the last sample is anchored at its end, every
    other run at its start, so the first and last sample never move.
    """
    x = np.asarray(xs, dtype=float).copy()
    y = np.asarray(ys, dtype=float).copy()
    n = y.size
    if n < 2:
        return x, y
    diffs = np.diff(y)
    flat = np.abs(diffs) <= flat_tol
    if not np.any(flat) and (np.all(diffs > 0) or np.all(diffs < 0)):
        return x, y
    steep = diffs[~flat]
    if np.all(steep >= 0):
        direction = 1.0
    elif np.all(steep <= 0):
        direction = -1.0
    else:
        raise PreconditionError("strictify needs monotone samples")
    if eps is None:
        eps = 1e-9 * (float(np.ptp(y)) or 1.0)

    start = 0
    while start < n - 1:
        if not flat[start]:
            start += 1
            continue
        end = start
        while end < n - 1 and flat[end]:
            end += 1
        k = end - start + 1
        j = np.arange(k)
        if end == n - 1 and start > 0:
            gap = abs(y[start] - y[start - 1])
            delta = min(eps, 0.5 * gap)
            y[start : end + 1] = y[end] + direction * delta * (j - (k - 1)) / k
        else:
            gap = abs(y[end + 1] - y[end]) if end + 1 < n else np.inf
            delta = min(eps, 0.5 * gap)
            y[start : end + 1] = y[start] + direction * delta * j / k
        start = end + 1
    return x, y


def _piece_grids(cs: CriticalSet, n_points: int) -> List[np.ndarray]:
    a, b = cs.domain
    return [
        np.linspace(lo, hi, max(3, int(round(n_points * (hi - lo) / (b - a)))))
        for lo, hi in piece_decomposition(cs.domain, cs)
    ]


def has_flat_runs(f: Callable, cs: CriticalSet, n_points: int = CERTIFICATION_POINTS, flat_tol: float = 0.0) -> bool:
    """Whether ``f`` has a step with ``|df| <= flat_tol`` on any piece grid"""
    return any(
        bool(np.any(np.abs(np.diff(evaluate_callable(f, xs))) <= flat_tol)) for xs in _piece_grids(cs, n_points)
    )


def single_extremum_h(
    f: Callable, x0: float, domain: Sequence[float], n_check: int = DEFAULT_SCAN_POINTS, tol: Optional[float] = None
) -> Tuple[float, float, Callable]:
    """
    Closed-form quadratic conjugation for a single extremizer set.

    ``f = a0 + a2 * h**2`` with ``a0 = f(x0)``, ``a2 = +-1`` and
    ``h(x) = sign(x - x0) * sqrt(|f(x) - a0|)``.
    """
    a0 = float(f(x0))
    grid = np.linspace(float(domain[0]), float(domain[1]), n_check)
    remainder = evaluate_callable(f, grid) - a0
    if tol is None:
        tol = 1e-9 * (1.0 + float(np.ptp(remainder)))
    has_pos = bool(np.any(remainder > tol))
    has_neg = bool(np.any(remainder < -tol))
    if has_pos and has_neg:
        raise NotSingleExtremumError(f"f - f(x0) changes sign on the domain (x0={x0})")
    a2 = -1.0 if has_neg else 1.0

    def h(x):
        xv = np.asarray(x, dtype=float)
        out = np.sign(xv - x0) * np.sqrt(np.abs(evaluate_callable(f, xv) - a0))
        return float(out) if out.ndim == 0 else out

    return a0, a2, h


# ---------------------------------------------------------------------------
# Degree floor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegreeFloorCheck:
    degree: int
    M: int
    bound: float
    critical_error: float

    @property
    def applies(self) -> bool:
        return self.degree <= self.M

    @property
    def respected(self) -> bool:
        return not self.applies or self.critical_error >= self.bound

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "M": self.M,
            "degree_floor": self.bound,
            "critical_sup_error": self.critical_error,
            "applies": self.applies,
            "degree_floor_respected": self.respected,
        }


def degree_floor(cs: CriticalSet) -> float:
    """Half the smallest jump between consecutive critical (and endpoint) values"""
    return 0.5 * float(np.min(np.abs(np.diff(cs.full_values))))


def check_degree_floor(cs: CriticalSet, degree: int, approx: Callable) -> DegreeFloorCheck:
    """
    An approximant of degree d <= M cannot come closer than the floor at the
    critical points; a violation means a bug, and raises.
    """
    points = np.asarray(cs.full_points)
    predicted = np.asarray(approx(points), dtype=float).ravel()
    error = float(np.max(np.abs(np.asarray(cs.full_values) - predicted)))
    check = DegreeFloorCheck(degree, cs.M, degree_floor(cs), error)
    if not check.respected:
        logger.error(f"❌ Degree {degree} approximant beats the degree floor {check.bound:.3e}")
        raise InternalConsistencyError(
            f"degree-{degree} approximant has critical error {error:.3e} below floor {check.bound:.3e}"
        )
    return check


# ---------------------------------------------------------------------------
# End-to-end exact path
# ---------------------------------------------------------------------------


@dataclass
class ExactRepresentation:
    critical: CriticalSet
    chandler: ChandlerResult
    h: PiecewiseHomeo
    f_used: Callable
    composition_residual: float
    target_deviation: float = 0.0
    strictified: bool = False
    extra: dict = field(default_factory=dict)


def strictified_interpolant(
    f: Callable,
    cs: CriticalSet,
    n_points: int = CERTIFICATION_POINTS,
    eps: Optional[float] = None,
    flat_tol: float = 0.0,
) -> Tuple[Callable, np.ndarray, np.ndarray]:
    """Piecewise-linear interpolant of ``f`` strictified on every monotone piece"""
    xs_all: List[np.ndarray] = []
    ys_all: List[np.ndarray] = []
    span = float(np.ptp(cs.full_values)) or 1.0
    if eps is None:
        eps = 1e-9 * span
    for i, xs in enumerate(_piece_grids(cs, n_points)):
        _, ys = strictify(xs, evaluate_callable(f, xs), eps, flat_tol)
        if i > 0:
            xs, ys = xs[1:], ys[1:]
        xs_all.append(xs)
        ys_all.append(ys)
    grid_x = np.concatenate(xs_all)
    grid_y = np.concatenate(ys_all)

    def interpolant(x):
        out = np.interp(np.asarray(x, dtype=float), grid_x, grid_y)
        return float(out) if np.ndim(out) == 0 else out

    return interpolant, grid_x, grid_y


def build_exact_representation(
    f: Callable,
    domain: Sequence[float],
    n_scan: int = DEFAULT_SCAN_POINTS,
    plateau_tol: Optional[float] = None,
    eps: Optional[float] = None,
    n_certify: int = CERTIFICATION_POINTS,
) -> ExactRepresentation:
    """Critical detection -> Chandler -> exact homeomorphism (strictifying flat runs)"""
    cs = find_critical_sets(f, domain, n_scan=n_scan, plateau_tol=plateau_tol)
    cr = chandler_polynomial(cs.full_values)

    flat_tol = default_flat_tol(float(np.ptp(cs.full_values))) if plateau_tol is None else float(plateau_tol)
    f_used, strictified = f, False
    if cs.has_plateaus or has_flat_runs(f, cs, n_points=n_certify, flat_tol=flat_tol):
        f_used, _, _ = strictified_interpolant(f, cs, n_points=n_certify, eps=eps, flat_tol=flat_tol)
        strictified = True
        logger.debug(f"🔧 Flat runs strictified (tolerance {flat_tol:.3e})")

    h = exact_homeomorphism(f_used, cs, cr, n_certify=n_certify)
    grid = np.linspace(cs.domain[0], cs.domain[1], n_certify)
    deviation = float(np.max(np.abs(evaluate_callable(f, grid) - cr.p(h(grid)))))
    return ExactRepresentation(cs, cr, h, f_used, h.certified_residual, deviation, strictified)
