"""
Benchmark targets
=================

Target functions of the 1D, 2D and potential-energy-surface experiments,
tensor-product grids, a synthetic Morse-form surface and CSV datasets.
"""
import itertools
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from homeofit.errors import DatasetParseError, EmptyDatasetError, ParameterError
from homeofit.poly import total_degree_design, total_degree_indices
from homeofit.rng import make_generator

logger = logging.getLogger(__name__)

DATASET_CHUNK_ROWS = 16384
CSV_FLOAT_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Target functions
# ---------------------------------------------------------------------------


def _out(values):
    return float(values) if np.ndim(values) == 0 else values


def f1(x):
    """exp(x) + exp(-x) on [-10, 10]; single minimizer at 0"""
    x = np.asarray(x, dtype=float)
    return _out(np.exp(x) + np.exp(-x))


def f2(x):
    """arctan(-x) for x <= 0, 1 - (x - 1)^2 for x > 0; extrema at 0 and 1"""
    x = np.asarray(x, dtype=float)
    return _out(np.where(x > 0.0, 1.0 - (x - 1.0) ** 2, np.arctan(-x)))


def f3(x):
    """exp(-1 / (|x| - 1)^2) outside [-1, 1], zero on it"""
    x = np.asarray(x, dtype=float)
    d = np.abs(x) - 1.0
    safe = np.where(d > 0.0, d, 1.0)
    with np.errstate(under="ignore"):
        values = np.where(d > 0.0, np.exp(-1.0 / safe**2), 0.0)
    return _out(values)


def f4(x, y):
    return _out(np.arctan(np.asarray(x, dtype=float)) * np.arctan(np.asarray(y, dtype=float)))


def f4_points(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return f4(X[:, 0], X[:, 1])


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


class GridSpec(BaseModel):
    """Tensor-product grid: one interval and point count per dimension"""

    model_config = ConfigDict(frozen=True)

    intervals: Tuple[Tuple[float, float], ...]
    counts: Tuple[int, ...]
    equidistant: bool = True

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        if len(self.intervals) != len(self.counts) or not self.counts:
            raise ValueError("need one point count per interval")
        for (lo, hi), n in zip(self.intervals, self.counts):
            if not lo < hi:
                raise ValueError(f"degenerate interval [{lo}, {hi}]")
            if n < 2:
                raise ValueError(f"grid counts must be at least 2, got {n}")
        if not self.equidistant:
            raise ValueError("only equidistant grids are supported")
        return self

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.intervals, self.counts)]

    def points(self) -> np.ndarray:
        """All grid points, lexicographic in the grid indices (last index fastest)"""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def uniform_grid(intervals: Sequence[Tuple[float, float]], counts: Union[int, Sequence[int]]) -> GridSpec:
    if isinstance(counts, int):
        counts = [counts] * len(intervals)
    return GridSpec(intervals=tuple(tuple(iv) for iv in intervals), counts=tuple(counts))


# ---------------------------------------------------------------------------
# Synthetic potential energy surface
# ---------------------------------------------------------------------------

PES_DEGREE = 4
PES_SCALE_POINTS = 21


class PesConfig(BaseModel):
    """Morse-form surface ``V = sum c_i y^i`` (degree 4) in cm^-1"""

    model_config = ConfigDict(frozen=True)

    alpha0: float = Field(1.8, gt=0.0)
    alpha1: float = Field(1.8, gt=0.0)
    beta0: float = 1.336
    beta1: float = 1.336
    beta2: float = Field(1.611, gt=0.0, lt=math.pi)
    coeff_seed: int = 2024
    coeffs: Optional[Tuple[float, ...]] = None
    energy_span: float = Field(4.5e4, gt=0.0)
    cutoff: Optional[float] = 4.0e4
    radial_domain: Tuple[float, float] = (0.9, 3.5)
    angle_domain: Tuple[float, float] = (0.0, math.pi)

    @field_validator("coeffs")
    @classmethod
    def _coeff_count(cls, value):
        if value is not None and len(value) != len(total_degree_indices(3, PES_DEGREE)):
            raise ValueError("PES expansion needs 35 coefficients")
        return value

    @property
    def box(self) -> Tuple[Tuple[float, float], ...]:
        return (self.radial_domain, self.radial_domain, self.angle_domain)

    @property
    def minimum(self) -> Tuple[float, float, float]:
        return (self.beta0, self.beta1, self.beta2)


def morse_variables(X, cfg: PesConfig) -> np.ndarray:
    """(r0, r1, theta) -> (y0, y1, y2) Morse and cosine variables"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y0 = 1.0 - np.exp(-cfg.alpha0 * (X[:, 0] - cfg.beta0))
    y1 = 1.0 - np.exp(-cfg.alpha1 * (X[:, 1] - cfg.beta1))
    y2 = np.cos(X[:, 2]) - np.cos(cfg.beta2)
    return np.stack([y0, y1, y2], axis=1)


Monomials = Dict[Tuple[int, ...], float]


def _poly_mul(a: Monomials, b: Monomials) -> Monomials:
    out: Monomials = {}
    for (ea, ca), (eb, cb) in itertools.product(a.items(), b.items()):
        e = tuple(i + j for i, j in zip(ea, eb))
        out[e] = out.get(e, 0.0) + ca * cb
    return out


def _poly_add(a: Monomials, b: Monomials, weight: float = 1.0) -> Monomials:
    out = dict(a)
    for e, c in b.items():
        out[e] = out.get(e, 0.0) + weight * c
    return out


def _sum_of_squares_coeffs(seed: int) -> np.ndarray:
    """
    Nonnegative quartic with a zero at y = 0 and a nondegenerate Hessian there,
    symmetric under y0 <-> y1.
    """
    rng = make_generator(seed)
    units = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    A = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    total: Monomials = {}
    for k in range(3):
        B = 0.4 * rng.standard_normal((3, 3))
        B = 0.5 * (B + B.T)
        form: Monomials = {}
        for j in range(3):
            form = _poly_add(form, {units[j]: A[k, j]})
        for i, j in itertools.product(range(3), repeat=2):
            e = tuple(u + v for u, v in zip(units[i], units[j]))
            form = _poly_add(form, {e: B[i, j]})
        total = _poly_add(total, _poly_mul(form, form))

    swapped = {(e[1], e[0], e[2]): c for e, c in total.items()}
    symmetric = _poly_add({e: 0.5 * c for e, c in total.items()}, swapped, 0.5)
    indices = total_degree_indices(3, PES_DEGREE)
    return np.array([symmetric.get(idx, 0.0) for idx in indices])


class PesSurface:
    """Evaluable surface for a ``PesConfig``"""

    def __init__(self, cfg: PesConfig):
        self.cfg = cfg
        self.indices = total_degree_indices(3, PES_DEGREE)
        if cfg.coeffs is not None:
            self.coeffs = np.asarray(cfg.coeffs, dtype=float)
        else:
            raw = _sum_of_squares_coeffs(cfg.coeff_seed)
            scale_points = uniform_grid(cfg.box, PES_SCALE_POINTS).points()
            peak = float(np.max(total_degree_design(morse_variables(scale_points, cfg), self.indices) @ raw))
            self.coeffs = raw * (cfg.energy_span / peak)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return total_degree_design(morse_variables(X, self.cfg), self.indices) @ self.coeffs


@lru_cache(maxsize=8)
def build_pes(cfg: PesConfig) -> PesSurface:
    return PesSurface(cfg)


def pes_eval(cfg: PesConfig, x) -> Union[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    values = build_pes(cfg)(x)
    return float(values[0]) if x.ndim == 1 else values


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    columns: List[str] = field(default_factory=list)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        self.X = X.reshape(-1, 1) if X.ndim == 1 else np.atleast_2d(X)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ParameterError(f"{self.X.shape[0]} points but {self.y.size} values")
        if not self.columns:
            self.columns = [f"x{k}" for k in range(self.X.shape[1])] + ["value"]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.size

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=self.columns[:-1])
        frame[self.columns[-1]] = self.y
        return frame


def _evaluate_points(f: Callable, X: np.ndarray, max_workers: Optional[int]) -> np.ndarray:
    def run(chunk: np.ndarray) -> np.ndarray:
        arg = chunk[:, 0] if chunk.shape[1] == 1 else chunk
        return np.asarray(f(arg), dtype=float).ravel()

    chunks = [X[i : i + DATASET_CHUNK_ROWS] for i in range(0, X.shape[0], DATASET_CHUNK_ROWS)]
    if len(chunks) == 1 or max_workers == 1:
        return np.concatenate([run(c) for c in chunks])
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return np.concatenate(list(pool.map(run, chunks)))


def make_dataset(
    f: Callable,
    grid: GridSpec,
    cutoff: Optional[float] = None,
    minimum: Optional[Sequence[float]] = None,
    max_workers: Optional[int] = None,
) -> Dataset:
    """
    Sample ``f`` on the grid. With a cutoff, rows above it are dropped and the
    ``minimum`` point (if given) is appended when missing.
    """
    X = grid.points()
    y = _evaluate_points(f, X, max_workers)
    if cutoff is not None:
        keep = y <= cutoff
        X, y = X[keep], y[keep]
        if y.size == 0:
            raise EmptyDatasetError(f"no grid point lies below the cutoff {cutoff:g}")
        if minimum is not None:
            point = np.asarray(minimum, dtype=float).reshape(1, -1)
            if not np.any(np.all(X == point, axis=1)):
                X = np.vstack([X, point])
                y = np.append(y, _evaluate_points(f, point, 1))
        logger.debug(f"📊 Cutoff {cutoff:g}: kept {y.size} of {grid.size} grid points")
    return Dataset(X, y)


def save_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    ds.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


_HEADER = re.compile(r"^x0(,x\d+)*,value$")
_PARSER_LINE = re.compile(r"line (\d+)")


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dataset CSV; malformed input raises with the offending line number"""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().strip()
    names = header.split(",")
    expected = [f"x{k}" for k in range(len(names) - 1)] + ["value"]
    if not _HEADER.match(header) or names != expected:
        raise DatasetParseError(f"expected header 'x0[,x1...],value', got {header!r}", 1)

    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise DatasetParseError(f"row arity mismatch: {e}", int(match.group(1)) if match else 0) from e

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DatasetParseError("missing or non-numeric field", row + 2)
    if len(numeric) == 0:
        raise EmptyDatasetError(f"{path} contains no rows")
    values = numeric.to_numpy(dtype=float)
    return Dataset(values[:, :-1], values[:, -1], names)


def interpolant_from_dataset(ds: Dataset) -> Callable:
    """Piecewise-linear interpolant of a 1D dataset"""
    if ds.dim != 1:
        raise ParameterError("interpolated targets must be one-dimensional")
    order = np.argsort(ds.X[:, 0], kind="stable")
    xs, ys = ds.X[order, 0], ds.y[order]
    if np.any(np.diff(xs) <= 0.0):
        raise ParameterError("dataset abscissae must be distinct")

    def interpolant(x):
        return _out(np.interp(np.asarray(x, dtype=float), xs, ys))

    interpolant.domain = (float(xs[0]), float(xs[-1]))
    return interpolant


# ---------------------------------------------------------------------------
# Benchmark registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Benchmark:
    name: str
    function: Callable
    domain: Tuple[Tuple[float, float], ...]
    n_train: Tuple[int, ...]
    n_val: Tuple[int, ...]
    default_steps: int = 20000
    cutoff: Optional[float] = None
    minimum: Optional[Tuple[float, ...]] = None
    extremizer: Optional[float] = None

    @property
    def dim(self) -> int:
        return len(self.domain)

    def train_grid(self, counts: Optional[Sequence[int]] = None) -> GridSpec:
        return GridSpec(intervals=self.domain, counts=tuple(counts or self.n_train))

    def val_grid(self, counts: Optional[Sequence[int]] = None) -> GridSpec:
        return GridSpec(intervals=self.domain, counts=tuple(counts or self.n_val))


def pes_benchmark(cfg: Optional[PesConfig] = None) -> Benchmark:
    cfg = cfg or PesConfig()
    surface = build_pes(cfg)
    return Benchmark(
        name="pes",
        function=surface,
        domain=cfg.box,
        n_train=(40, 40, 40),
        n_val=(100, 100, 100),
        default_steps=3000,
        cutoff=cfg.cutoff,
        minimum=cfg.minimum,
    )


BENCHMARKS: Dict[str, Benchmark] = {
    "f1": Benchmark("f1", f1, ((-10.0, 10.0),), (301,), (5001,), extremizer=0.0),
    "f2": Benchmark("f2", f2, ((-3.0, 3.0),), (301,), (5001,)),
    "f3": Benchmark("f3", f3, ((-4.0, 4.0),), (1000,), (5000,), extremizer=0.0),
    "f4": Benchmark("f4", f4_points, ((-4.0, 4.0), (-4.0, 4.0)), (20, 20), (100, 100)),
}


def get_benchmark(name: str, pes_config: Optional[PesConfig] = None) -> Benchmark:
    if name == "pes":
        return pes_benchmark(pes_config)
    if name not in BENCHMARKS:
        raise ParameterError(f"unknown target {name!r}; choose from {sorted([*BENCHMARKS, 'pes'])}")
    return BENCHMARKS[name]


def benchmark_names() -> List[str]:
    return [*BENCHMARKS, "pes"]
