"""
Polynomials
===========

Univariate polynomials in a monomial or interval-mapped Chebyshev basis,
conditioned least-squares fitting, inversion on monotone pieces, and the
multivariate total-degree expansions used by the 2D and PES experiments.
"""
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import polynomial as mono
from scipy import linalg
from scipy.special import comb

from homeofit.errors import (
    ConvergenceError,
    OutOfRangeError,
    ParameterError,
    PreconditionError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]
ArrayLike = Union[float, Sequence[float], np.ndarray]

# Beyond this degree monomial coefficients lose all meaning in double precision
MONOMIAL_CONVERSION_MAX_DEGREE = 20
DEFAULT_CHUNK_ROWS = 8192


class Basis(str, Enum):
    MONOMIAL = "monomial"
    CHEBYSHEV = "chebyshev"


def _check_interval(interval: Sequence[float], what: str = "domain") -> Interval:
    a, b = float(interval[0]), float(interval[1])
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ParameterError(f"{what} must satisfy a < b, got [{a}, {b}]")
    return a, b


def to_window(x: ArrayLike, interval: Interval) -> np.ndarray:
    """Affine map of ``interval`` onto [-1, 1]"""
    a, b = interval
    return (2.0 * np.asarray(x, dtype=float) - (a + b)) / (b - a)


@dataclass(frozen=True)
class Polynomial:
    """
    Univariate polynomial ``coeffs`` in ``basis`` on the closed ``domain``.

    Monomial coefficients act on raw ``x``; Chebyshev coefficients act on ``x``
    mapped affinely from ``domain`` to [-1, 1].
    """

    coeffs: np.ndarray
    domain: Interval = (-1.0, 1.0)
    basis: Basis = Basis.MONOMIAL

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float, ndmin=1)
        if coeffs.ndim != 1 or coeffs.size < 1:
            raise ParameterError("polynomial needs at least one coefficient")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "domain", _check_interval(self.domain))
        object.__setattr__(self, "basis", Basis(self.basis))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x: ArrayLike):
        return evaluate(self, x)

    def derivative(self) -> "Polynomial":
        return derivative(self)

    def to_monomial(self) -> "Polynomial":
        if self.basis is Basis.MONOMIAL:
            return self
        if self.degree > MONOMIAL_CONVERSION_MAX_DEGREE:
            raise ParameterError(
                f"monomial conversion is limited to degree {MONOMIAL_CONVERSION_MAX_DEGREE}, "
                f"got {self.degree}"
            )
        series = cheb.Chebyshev(self.coeffs, domain=list(self.domain))
        coef = series.convert(kind=np.polynomial.Polynomial).coef
        coef = np.pad(coef, (0, self.coeffs.size - coef.size))
        return Polynomial(coef, self.domain, Basis.MONOMIAL)

    def to_chebyshev(self) -> "Polynomial":
        if self.basis is Basis.CHEBYSHEV:
            return self
        series = np.polynomial.Polynomial(self.coeffs)
        coef = series.convert(kind=cheb.Chebyshev, domain=list(self.domain)).coef
        coef = np.pad(coef, (0, self.coeffs.size - coef.size))
        return Polynomial(coef, self.domain, Basis.CHEBYSHEV)

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.value,
            "domain": list(self.domain),
            "degree": self.degree,
            "coeffs": [float(c) for c in self.coeffs],
        }


def evaluate(p: Polynomial, x: ArrayLike):
    """Nested evaluation: Horner for monomials, Clenshaw for Chebyshev"""
    xs = np.asarray(x, dtype=float)
    if p.basis is Basis.MONOMIAL:
        out = mono.polyval(xs, p.coeffs)
    else:
        out = cheb.chebval(to_window(xs, p.domain), p.coeffs)
    if np.ndim(out) == 0:
        return float(out)
    return out


def derivative(p: Polynomial) -> Polynomial:
    if p.basis is Basis.MONOMIAL:
        coef = mono.polyder(p.coeffs)
    else:
        a, b = p.domain
        coef = cheb.chebder(p.coeffs, scl=2.0 / (b - a))
    return Polynomial(coef, p.domain, p.basis)


# ---------------------------------------------------------------------------
# Least squares
# ---------------------------------------------------------------------------


def qr_least_squares(
    design: np.ndarray,
    rhs: np.ndarray,
    rcond: Optional[float] = None,
    ridge: Optional[float] = None,
) -> Tuple[np.ndarray, int]:
    """
    Least squares through a column-pivoted QR factorization.

    Returns ``(solution, effective_rank)``. Without ``ridge`` a rank below the
    column count raises ``SingularSystemError``; with ``ridge`` the system is
    augmented by ``sqrt(ridge) * |R_00| * I`` and solved regardless.
    """
    A = np.asarray(design, dtype=float)
    b = np.asarray(rhs, dtype=float)
    m, n = A.shape
    if m < n:
        raise ParameterError(f"least squares needs rows >= columns, got {m} x {n}")

    Q, R, perm = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size else 0.0
    threshold = (rcond if rcond is not None else max(m, n) * np.finfo(float).eps) * scale
    rank = int(np.count_nonzero(diag > threshold)) if scale > 0 else 0

    if rank < n:
        if ridge is None:
            raise SingularSystemError(
                f"least-squares system is rank deficient: effective rank {rank} of {n}", rank
            )
        logger.warning(f"⚠️ Rank {rank}/{n}: solving with ridge {ridge:g}")
        lam = np.sqrt(ridge) * max(scale, np.finfo(float).tiny)
        augmented = np.vstack([A, lam * np.eye(n)])
        rhs_aug = np.concatenate([b, np.zeros(n)])
        Qa, Ra = linalg.qr(augmented, mode="economic")
        return linalg.solve_triangular(Ra, Qa.T @ rhs_aug), rank

    z = linalg.solve_triangular(R, Q.T @ b)
    solution = np.empty(n)
    solution[perm] = z
    return solution, rank


def fit_least_squares(
    xs: ArrayLike,
    ys: ArrayLike,
    degree: int,
    domain: Optional[Sequence[float]] = None,
    ridge: Optional[float] = None,
) -> Polynomial:
    """
    Degree-``degree`` least-squares polynomial through ``(xs, ys)``.

    The solve runs in the Chebyshev basis mapped to ``domain`` (default: the
    data range), which keeps degree-80 fits well posed; the returned
    polynomial stays in that basis.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if degree < 0:
        raise ParameterError(f"degree must be nonnegative, got {degree}")
    if x.size != y.size:
        raise ParameterError(f"xs and ys differ in length: {x.size} vs {y.size}")
    if x.size < degree + 1:
        raise ParameterError(f"{x.size} samples cannot determine a degree-{degree} fit")

    if domain is None:
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            lo, hi = lo - 1.0, hi + 1.0
        interval = (lo, hi)
    else:
        interval = _check_interval(domain)
        slack = 1e-12 * (interval[1] - interval[0])
        if x.min() < interval[0] - slack or x.max() > interval[1] + slack:
            raise ParameterError(f"samples leave the stated domain {interval}")

    V = cheb.chebvander(to_window(x, interval), degree)
    coeffs, rank = qr_least_squares(V, y, ridge=ridge)
    logger.debug(f"🔧 Chebyshev fit degree {degree}: rank {rank}, {x.size} samples")
    return Polynomial(coeffs, interval, Basis.CHEBYSHEV)


# ---------------------------------------------------------------------------
# Inversion on monotone pieces
# ---------------------------------------------------------------------------


def invert_on_monotone_interval(
    p: Polynomial,
    interval: Sequence[float],
    y: ArrayLike,
    tol: Optional[float] = None,
    max_iter: int = 200,
    range_tol: Optional[float] = None,
):
    """
    Solve ``p(x) = y`` for ``x`` in ``interval`` where ``p`` is strictly monotone.

    Safeguarded Newton (rtsafe): Newton steps are taken while they stay inside
    the bracket and shrink it fast enough, bisection otherwise. ``y`` may be an
    array; all entries are solved together. ``tol`` bounds ``|p(x) - y|`` at
    convergence; targets may leave ``p(interval)`` by ``range_tol`` (default
    ``tol``) and are clipped onto it.
    """
    lo, hi = _check_interval(interval, "interval")
    if tol is None:
        tol = 1e-12 * (1.0 + (hi - lo))
    if range_tol is None:
        range_tol = tol

    y_arr = np.asarray(y, dtype=float)
    scalar = y_arr.ndim == 0
    targets = np.atleast_1d(y_arr).ravel()

    p_lo, p_hi = float(p(lo)), float(p(hi))
    if p_lo == p_hi:
        raise PreconditionError(f"polynomial is not strictly monotone on [{lo}, {hi}]")
    orient = 1.0 if p_hi > p_lo else -1.0
    v_min, v_max = min(p_lo, p_hi), max(p_lo, p_hi)
    if np.any(targets < v_min - range_tol) or np.any(targets > v_max + range_tol):
        worst = targets[np.argmax(np.maximum(v_min - targets, targets - v_max))]
        raise OutOfRangeError(f"value {worst!r} outside p([{lo}, {hi}]) = [{v_min}, {v_max}]")
    targets = np.clip(targets, v_min, v_max)

    dp = p.derivative()
    n = targets.size
    a = np.full(n, lo)
    b = np.full(n, hi)
    ga = orient * (p_lo - targets)
    gb = orient * (p_hi - targets)
    x = lo + (targets - p_lo) / (p_hi - p_lo) * (hi - lo)
    dx_old = np.full(n, hi - lo)
    active = np.ones(n, dtype=bool)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi = x[idx]
        gx = orient * (np.asarray(p(xi)) - targets[idx])
        if np.any(gx < ga[idx] - range_tol) or np.any(gx > gb[idx] + range_tol):
            raise PreconditionError(
                f"bracket sign violation: polynomial is not monotone on [{lo}, {hi}]"
            )

        converged = np.abs(gx) <= tol
        neg = gx < 0.0
        a[idx] = np.where(neg, xi, a[idx])
        ga[idx] = np.where(neg, gx, ga[idx])
        b[idx] = np.where(neg, b[idx], xi)
        gb[idx] = np.where(neg, gb[idx], gx)

        width = b[idx] - a[idx]
        collapsed = width <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(xi))
        done = converged | collapsed
        active[idx[done]] = False

        keep = ~done
        if not np.any(keep):
            continue
        k = idx[keep]
        xk, gk = xi[keep], gx[keep]
        d = orient * np.asarray(dp(xk), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xk - gk / d
            out_of_bracket = ~((newton > a[k]) & (newton < b[k])) | ~np.isfinite(newton)
            too_slow = np.abs(2.0 * gk) > np.abs(dx_old[k] * d)
        bisect = out_of_bracket | too_slow
        x_new = np.where(bisect, 0.5 * (a[k] + b[k]), newton)
        dx_old[k] = np.abs(x_new - xk)
        x[k] = x_new
        # a Newton step below rounding level ends the iteration
        stalled = ~bisect & (dx_old[k] <= 2.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(xk)))
        active[k[stalled]] = False

    if np.any(active):
        residual = float(np.max(np.abs(np.asarray(p(x[active])) - targets[active])))
        if residual > tol:
            logger.warning(f"⚠️ Inversion hit the {max_iter}-iteration cap with residual {residual:.3e}")
            raise ConvergenceError(
                f"inversion on [{lo}, {hi}] did not converge in {max_iter} iterations "
                f"(residual {residual:.3e} > {tol:.3e})",
                residual,
            )

    if scalar:
        return float(x[0])
    return x.reshape(y_arr.shape)


# ---------------------------------------------------------------------------
# Multivariate total-degree expansions
# ---------------------------------------------------------------------------


def total_degree_indices(dim: int, max_degree: int) -> List[Tuple[int, ...]]:
    """All ``dim``-tuples with component sum <= ``max_degree``, lexicographic"""
    if dim < 1:
        raise ParameterError(f"dimension must be positive, got {dim}")
    if max_degree < 0:
        raise ParameterError(f"degree must be nonnegative, got {max_degree}")
    return [
        idx
        for idx in itertools.product(range(max_degree + 1), repeat=dim)
        if sum(idx) <= max_degree
    ]


def basis_size(dim: int, max_degree: int) -> int:
    return int(comb(max_degree + dim, dim, exact=True))


def _per_dimension_tables(
    X: np.ndarray, max_degree: int, basis: Basis, box: Optional[Sequence[Interval]]
) -> List[np.ndarray]:
    tables = []
    for k in range(X.shape[1]):
        col = X[:, k]
        if basis is Basis.CHEBYSHEV:
            if box is None:
                raise ParameterError("Chebyshev expansions need a bounding box")
            tables.append(cheb.chebvander(to_window(col, box[k]), max_degree))
        else:
            tables.append(mono.polyvander(col, max_degree))
    return tables


def total_degree_design(
    X: np.ndarray,
    indices: Sequence[Tuple[int, ...]],
    basis: Basis = Basis.MONOMIAL,
    box: Optional[Sequence[Interval]] = None,
) -> np.ndarray:
    """Design matrix with entry (p, i) = prod_k phi_{i_k}(X[p, k])"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    idx = np.asarray(indices, dtype=int).reshape(len(indices), X.shape[1])
    max_degree = int(idx.sum(axis=1).max()) if idx.size else 0
    tables = _per_dimension_tables(X, max_degree, Basis(basis), box)
    design = np.ones((X.shape[0], idx.shape[0]))
    for k, table in enumerate(tables):
        design *= table[:, idx[:, k]]
    return design


def total_degree_value_gradient(
    Q: np.ndarray, indices: Sequence[Tuple[int, ...]], coeffs: np.ndarray
) -> np.ndarray:
    """
    Gradient of ``sum_i coeffs_i * prod_k Q_k^{i_k}`` with respect to ``Q``.

    Monomial basis only; returns an array shaped like ``Q``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    idx = np.asarray(indices, dtype=int).reshape(len(indices), Q.shape[1])
    max_degree = int(idx.sum(axis=1).max()) if idx.size else 0
    powers = [mono.polyvander(Q[:, k], max_degree) for k in range(Q.shape[1])]
    exps = np.arange(max_degree + 1)
    dpowers = []
    for k in range(Q.shape[1]):
        d = np.zeros_like(powers[k])
        d[:, 1:] = exps[1:] * powers[k][:, :-1]
        dpowers.append(d)

    grad = np.empty_like(Q)
    for k in range(Q.shape[1]):
        cols = dpowers[k][:, idx[:, k]]
        for j in range(Q.shape[1]):
            if j != k:
                cols = cols * powers[j][:, idx[:, j]]
        grad[:, k] = cols @ coeffs
    return grad


@dataclass(frozen=True)
class MultiIndexExpansion:
    """Total-degree expansion ``sum c_i * prod_k phi_{i_k}(x_k)``"""

    dim: int
    max_total_degree: int
    coeffs: np.ndarray
    basis: Basis = Basis.MONOMIAL
    box: Optional[Tuple[Interval, ...]] = None
    indices: Tuple[Tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        indices = tuple(total_degree_indices(self.dim, self.max_total_degree))
        coeffs = np.array(self.coeffs, dtype=float, ndmin=1)
        if coeffs.size != len(indices):
            raise ParameterError(
                f"{coeffs.size} coefficients for a basis of size {len(indices)}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "basis", Basis(self.basis))
        if self.box is not None:
            box = tuple(_check_interval(iv, "box side") for iv in self.box)
            object.__setattr__(self, "box", box)
        if self.basis is Basis.CHEBYSHEV and self.box is None:
            raise ParameterError("Chebyshev expansions need a bounding box")

    @property
    def n_basis(self) -> int:
        return len(self.indices)

    def design(self, X: np.ndarray) -> np.ndarray:
        return total_degree_design(X, self.indices, self.basis, self.box)

    def __call__(self, X: np.ndarray, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], chunk_rows):
            stop = start + chunk_rows
            out[start:stop] = self.design(X[start:stop]) @ self.coeffs
        return out

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "max_total_degree": self.max_total_degree,
            "basis": self.basis.value,
            "box": [list(iv) for iv in self.box] if self.box else None,
            "indices": [list(i) for i in self.indices],
            "coeffs": [float(c) for c in self.coeffs],
        }


def fit_total_degree(
    X: np.ndarray,
    y: np.ndarray,
    max_degree: int,
    basis: Basis = Basis.CHEBYSHEV,
    box: Optional[Sequence[Interval]] = None,
    ridge: Optional[float] = None,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> MultiIndexExpansion:
    """
    Total-degree least squares streamed through a row-chunked QR.

    Each chunk ``[A_chunk | y_chunk]`` is stacked under the running triangular
    factor and re-triangularized, so memory stays at one chunk plus one
    ``(n+1) x (n+1)`` factor however many rows there are.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    dim = X.shape[1]
    indices = total_degree_indices(dim, max_degree)
    n = len(indices)
    if X.shape[0] != y.size:
        raise ParameterError(f"{X.shape[0]} rows but {y.size} values")
    if X.shape[0] < n:
        raise ParameterError(f"{X.shape[0]} samples cannot determine {n} coefficients")
    basis = Basis(basis)
    if box is None:
        box = [
            (float(X[:, k].min()), float(X[:, k].max()))
            if X[:, k].min() < X[:, k].max()
            else (float(X[:, k].min()) - 1.0, float(X[:, k].max()) + 1.0)
            for k in range(dim)
        ]

    R_acc = np.zeros((0, n + 1))
    for start in range(0, X.shape[0], chunk_rows):
        stop = start + chunk_rows
        block = np.hstack(
            [total_degree_design(X[start:stop], indices, basis, box), y[start:stop, None]]
        )
        (R_acc,) = linalg.qr(np.vstack([R_acc, block]), mode="r")
        R_acc = R_acc[: n + 1]

    R = R_acc[:n, :n]
    qty = R_acc[:n, n]
    # rank from a column-pivoted factor of R
    R_piv, _ = linalg.qr(R, mode="r", pivoting=True)
    diag = np.abs(np.diag(R_piv))
    scale = diag[0] if diag.size else 0.0
    threshold = max(X.shape[0], n) * np.finfo(float).eps * scale
    rank = int(np.count_nonzero(diag > threshold)) if scale > 0 else 0
    if rank < n:
        if ridge is None:
            raise SingularSystemError(
                f"total-degree system is rank deficient: effective rank {rank} of {n}", rank
            )
        logger.warning(f"⚠️ Rank {rank}/{n}: total-degree solve with ridge {ridge:g}")
        lam = np.sqrt(ridge) * max(scale, np.finfo(float).tiny)
        (R_aug,) = linalg.qr(
            np.vstack([R_acc[:n], np.hstack([lam * np.eye(n), np.zeros((n, 1))])]), mode="r"
        )
        R, qty = R_aug[:n, :n], R_aug[:n, n]

    coeffs = linalg.solve_triangular(R, qty)
    logger.debug(f"🔧 Total-degree fit D={dim} N={max_degree}: {n} functions, rank {rank}")
    return MultiIndexExpansion(dim, max_degree, coeffs, basis, tuple(box))
