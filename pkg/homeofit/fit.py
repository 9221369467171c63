"""
Fitting
=======

Variable-projection training of ``f ~ sum_i a_i h_Theta(x)^i``: Adam on the
network parameters, linear coefficients re-solved by least squares at every
step (or held fixed), best-validation snapshot selection, metrics and direct
polynomial baselines.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from homeofit.errors import NumericError, ParameterError, SingularSystemError
from homeofit.invnet import (
    DEFAULT_BLOCKS,
    DEFAULT_LIPSCHITZ,
    DEFAULT_WIDTH,
    AdamState,
    InvResNet,
    cosine_lr,
)
from homeofit.poly import (
    Basis,
    basis_size,
    fit_least_squares,
    fit_total_degree,
    qr_least_squares,
    total_degree_design,
    total_degree_indices,
    total_degree_value_gradient,
)
from homeofit.targets import Dataset, GridSpec, make_dataset

logger = logging.getLogger(__name__)

MRE_THRESHOLD = 1e-12
RIDGE_FALLBACK = 1e-12
EVAL_CHUNK_ROWS = 65536


class FitConfig(BaseModel):
    """Learned-path configuration"""

    model_config = ConfigDict(extra="forbid")

    degree: int = Field(..., ge=0)
    dim: int = Field(1, ge=1)
    fixed_coeffs: Optional[List[float]] = None
    steps: int = Field(20000, ge=0)
    lr: float = Field(1e-3, gt=0.0)
    lr_min: float = Field(1e-5, ge=0.0)
    seed: int = 0
    n_blocks: int = Field(DEFAULT_BLOCKS, ge=1)
    width: int = Field(DEFAULT_WIDTH, ge=1)
    lipschitz: float = Field(DEFAULT_LIPSCHITZ, gt=0.0, lt=1.0)
    n_power_iters: int = Field(1, ge=1)
    eval_every: int = Field(100, ge=1)
    ridge_fallback: bool = True
    train_grid: Optional[GridSpec] = None
    val_grid: Optional[GridSpec] = None

    @model_validator(mode="after")
    def _check_coeffs(self) -> "FitConfig":
        if self.fixed_coeffs is not None:
            expected = basis_size(self.dim, self.degree)
            if len(self.fixed_coeffs) != expected:
                raise ValueError(
                    f"fixed_coeffs has {len(self.fixed_coeffs)} entries, basis size is {expected}"
                )
        for grid in (self.train_grid, self.val_grid):
            if grid is not None and grid.dim != self.dim:
                raise ValueError(f"grid dimension {grid.dim} does not match dim {self.dim}")
        return self

    @property
    def n_basis(self) -> int:
        return basis_size(self.dim, self.degree)


class FitReport(BaseModel):
    """Metrics of one fitted model on its validation set"""

    model: str
    target: str = ""
    dim: int = 1
    degree: int
    n_basis: int
    seed: Optional[int] = None
    rmse: float
    mae: float
    mre: float
    sup_error: float
    mre_excluded: int = 0
    train_rmse: float = float("nan")
    n_train: int = 0
    n_val: int = 0
    wall_time: float = 0.0
    steps: int = 0
    best_step: Optional[int] = None
    regularized: bool = False
    diverged: bool = False
    coeffs: List[float] = Field(default_factory=list)
    history: List[Dict[str, float]] = Field(default_factory=list)
    residuals_csv: Optional[str] = None
    extra: Dict[str, object] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "FitReport":
        if self.n_basis != basis_size(self.dim, self.degree):
            raise ValueError("n_basis is inconsistent with degree and dimension")
        if not self.diverged:
            for name in ("rmse", "mae", "sup_error"):
                if not np.isfinite(getattr(self, name)):
                    raise ValueError(f"{name} is not finite")
        return self


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    mre: float
    sup: float
    mre_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "mre": self.mre,
            "sup_error": self.sup,
            "mre_excluded": self.mre_excluded,
        }


def metrics(pred, truth) -> Metrics:
    """RMSE, maximum absolute error, mean relative error (|truth| >= 1e-12) and sup"""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size:
        raise ParameterError(f"prediction has {pred.size} entries, truth has {truth.size}")
    residual = pred - truth
    abs_res = np.abs(residual)
    rmse = float(np.sqrt(np.mean(residual**2))) if residual.size else 0.0
    mae = float(abs_res.max()) if residual.size else 0.0
    usable = np.abs(truth) >= MRE_THRESHOLD
    mre = float(np.mean(abs_res[usable] / np.abs(truth[usable]))) if np.any(usable) else 0.0
    return Metrics(rmse, mae, mre, mae, int(np.count_nonzero(~usable)))


def design_matrix(net: InvResNet, xs, indices: Sequence[Tuple[int, ...]], cache: bool = False) -> np.ndarray:
    """Entry (p, i) = prod_k q_k(x_p)^{i_k} with q = h_Theta(x_p)"""
    Q = net.forward(xs, cache=cache)
    A = total_degree_design(Q, indices, Basis.MONOMIAL)
    if not np.all(np.isfinite(A)):
        raise NumericError("design matrix has non-finite entries")
    return A


@dataclass(frozen=True)
class VarproSolution:
    coeffs: np.ndarray
    rank: int
    regularized: bool = False


def varpro_coeffs(design: np.ndarray, ys, ridge_fallback: bool = True) -> VarproSolution:
    """
    Optimal linear coefficients for the current design.

    Pivoted QR; a numerically rank-deficient design is solved with a ridge of
    ``1e-12 * ||design||^2`` and flagged, unless the fallback is disabled.
    """
    design = np.asarray(design, dtype=float)
    if design.shape[0] < design.shape[1]:
        raise ParameterError(f"design needs rows >= columns, got {design.shape}")
    try:
        coeffs, rank = qr_least_squares(design, ys)
        return VarproSolution(coeffs, rank)
    except SingularSystemError as e:
        if not ridge_fallback:
            raise
        coeffs, rank = qr_least_squares(design, ys, ridge=RIDGE_FALLBACK)
        logger.warning(f"⚠️ Regularized coefficient solve (rank {e.rank}/{design.shape[1]})")
        return VarproSolution(coeffs, rank, regularized=True)


@dataclass
class LearnedModel:
    """``x -> sum_i a_i prod_k h_Theta(x)_k^{i_k}``"""

    net: InvResNet
    coeffs: np.ndarray
    degree: int

    @property
    def indices(self) -> List[Tuple[int, ...]]:
        return total_degree_indices(self.net.dim, self.degree)

    def h(self, X) -> np.ndarray:
        out = self.net.forward(X)
        return out[:, 0] if self.net.dim == 1 else out

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        rows = X.reshape(-1, self.net.dim)
        indices = self.indices
        out = np.empty(rows.shape[0])
        for start in range(0, rows.shape[0], EVAL_CHUNK_ROWS):
            chunk = rows[start : start + EVAL_CHUNK_ROWS]
            out[start : start + EVAL_CHUNK_ROWS] = design_matrix(self.net, chunk, indices) @ self.coeffs
        return out


def residual_table(X, truth, pred) -> pd.DataFrame:
    """Tabla de residuos por punto de validación"""
    X = np.asarray(X, dtype=float).reshape(len(truth), -1)
    frame = pd.DataFrame(X, columns=[f"x{k}" for k in range(X.shape[1])])
    frame["truth"] = np.asarray(truth, dtype=float)
    frame["pred"] = np.asarray(pred, dtype=float)
    frame["residual"] = frame["pred"] - frame["truth"]
    return frame


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: InvResNet
    coeffs: np.ndarray
    report: FitReport
    model: LearnedModel = field(init=False)

    def __post_init__(self):
        self.model = LearnedModel(self.net, self.coeffs, self.report.degree)


def _bounding_box(X: np.ndarray) -> List[Tuple[float, float]]:
    lo, hi = X.min(axis=0), X.max(axis=0)
    return [(float(a), float(b)) if b > a else (float(a) - 1.0, float(b) + 1.0) for a, b in zip(lo, hi)]


class Trainer:
    """Full-batch variable-projection training loop"""

    def __init__(self, cfg: FitConfig):
        self.cfg = cfg
        self.indices = total_degree_indices(cfg.dim, cfg.degree)
        self.fixed = None if cfg.fixed_coeffs is None else np.asarray(cfg.fixed_coeffs, dtype=float)
        self.logger = logging.getLogger(f"{__name__}.Trainer")

    def _coeffs(self, A: np.ndarray, y: np.ndarray) -> VarproSolution:
        if self.fixed is not None:
            return VarproSolution(self.fixed, len(self.indices))
        return varpro_coeffs(A, y, ridge_fallback=self.cfg.ridge_fallback)

    def _val_rmse(self, net: InvResNet, coeffs: np.ndarray, val: Dataset) -> float:
        pred = LearnedModel(net, coeffs, self.cfg.degree)(val.X)
        return float(np.sqrt(np.mean((pred - val.y) ** 2)))

    def run(self, train: Dataset, val: Dataset, target: str = "") -> TrainResult:
        cfg = self.cfg
        if len(train) == 0:
            raise ParameterError("training set is empty")
        if train.dim != cfg.dim or val.dim != cfg.dim:
            raise ParameterError(f"datasets must have dimension {cfg.dim}")

        started = time.perf_counter()
        X, y = train.X, train.y
        n = y.size
        net = InvResNet(
            cfg.dim, cfg.n_blocks, cfg.width, cfg.lipschitz, seed=cfg.seed, box=_bounding_box(X)
        )
        adam = AdamState(net.n_params, lr=cfg.lr)
        self.logger.info(
            f"🚀 Training {cfg.n_blocks}-block network: degree {cfg.degree}, "
            f"{len(self.indices)} basis functions, {n} points, {cfg.steps} steps"
        )

        best = (np.inf, net.copy(), None, 0)
        history: List[Dict[str, float]] = []
        regularized = diverged = False
        train_rmse = float("nan")

        for step in range(cfg.steps + 1):
            net.spectral_normalize(cfg.n_power_iters)
            try:
                Q = net.forward(X, cache=True)
                A = total_degree_design(Q, self.indices, Basis.MONOMIAL)
                if not np.all(np.isfinite(A)):
                    raise NumericError("design matrix has non-finite entries")
                solution = self._coeffs(A, y)
            except NumericError:
                diverged = True
                break
            regularized |= solution.regularized
            coeffs = solution.coeffs
            residual = A @ coeffs - y
            loss = float(np.sqrt(np.mean(residual**2)))
            if not np.isfinite(loss):
                diverged = True
                break
            train_rmse = loss

            if step % cfg.eval_every == 0 or step == cfg.steps:
                try:
                    val_rmse = self._val_rmse(net, coeffs, val)
                    if not np.isfinite(val_rmse):
                        raise NumericError("validation RMSE is not finite")
                except NumericError:
                    diverged = True
                    break
                if val_rmse < best[0]:
                    best = (val_rmse, net.copy(), coeffs.copy(), step)
                lr_now = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min)
                history.append(
                    {
                        "step": step,
                        "train_rmse": loss,
                        "val_rmse": val_rmse,
                        "best_val_rmse": best[0],
                        "lr": lr_now,
                    }
                )
                self.logger.info(
                    f"📊 step {step}: train RMSE {loss:.4e}, val RMSE {val_rmse:.4e}, best {best[0]:.4e}"
                )
            if step == cfg.steps:
                break

            if loss > 0.0:
                dq = total_degree_value_gradient(Q, self.indices, coeffs)
                upstream = (residual / (n * loss))[:, None] * dq
                grad = net.backward(upstream)
            else:
                grad = np.zeros(net.n_params)
            if not np.all(np.isfinite(grad)):
                diverged = True
                break
            net.set_flat(adam.update(net.get_flat(), grad, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min)))

        if diverged:
            self.logger.error(f"❌ Training diverged at step {step}; returning last finite snapshot")

        best_net, best_coeffs, best_step = best[1], best[2], best[3]
        if best_coeffs is None:
            A = design_matrix(best_net, X, self.indices)
            best_coeffs = self._coeffs(A, y).coeffs
            best_step = 0

        model = LearnedModel(best_net, best_coeffs, cfg.degree)
        m = metrics(model(val.X), val.y)
        train_rmse = float(np.sqrt(np.mean((model(X) - y) ** 2)))
        report = FitReport(
            model="learned",
            target=target,
            dim=cfg.dim,
            degree=cfg.degree,
            n_basis=len(self.indices),
            seed=cfg.seed,
            rmse=m.rmse,
            mae=m.mae,
            mre=m.mre,
            sup_error=m.sup,
            mre_excluded=m.mre_excluded,
            train_rmse=train_rmse,
            n_train=n,
            n_val=len(val),
            wall_time=time.perf_counter() - started,
            steps=cfg.steps,
            best_step=best_step,
            regularized=regularized,
            diverged=diverged,
            coeffs=[float(c) for c in best_coeffs],
            history=history,
        )
        self.logger.info(f"✅ Learned fit: val RMSE {m.rmse:.4e}, MAE {m.mae:.4e} (step {best_step})")
        return TrainResult(best_net, best_coeffs, report)


def train_on_data(train: Dataset, val: Dataset, cfg: FitConfig, target: str = "") -> TrainResult:
    """Entrenar sobre conjuntos ya muestreados"""
    return Trainer(cfg).run(train, val, target)


def train(f: Callable, cfg: FitConfig, target: str = "", max_workers: Optional[int] = None) -> TrainResult:
    """Sample ``f`` on the configured grids and train"""
    if cfg.train_grid is None or cfg.val_grid is None:
        raise ParameterError("train() needs train_grid and val_grid in the config")
    train_set = make_dataset(f, cfg.train_grid, max_workers=max_workers)
    val_set = make_dataset(f, cfg.val_grid, max_workers=max_workers)
    return train_on_data(train_set, val_set, cfg, target)


# ---------------------------------------------------------------------------
# Direct baselines
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    model: Callable
    report: FitReport


def fit_baseline(
    train: Dataset,
    val: Dataset,
    degree: int,
    ridge_fallback: bool = True,
    target: str = "",
    box: Optional[Sequence[Tuple[float, float]]] = None,
) -> BaselineResult:
    """Direct total-degree least squares in a Chebyshev basis on the data box"""
    started = time.perf_counter()
    box = list(box) if box is not None else _bounding_box(train.X)
    regularized = False

    def solve(ridge):
        if train.dim == 1:
            return fit_least_squares(train.X[:, 0], train.y, degree, domain=box[0], ridge=ridge)
        return fit_total_degree(train.X, train.y, degree, Basis.CHEBYSHEV, box=box, ridge=ridge)

    try:
        model = solve(None)
    except SingularSystemError as e:
        if not ridge_fallback:
            raise
        logger.warning(f"⚠️ Baseline degree {degree} is rank deficient ({e.rank}); using ridge")
        model = solve(RIDGE_FALLBACK)
        regularized = True

    def predict(X):
        X = np.asarray(X, dtype=float).reshape(-1, train.dim)
        return np.asarray(model(X[:, 0]) if train.dim == 1 else model(X), dtype=float)

    m = metrics(predict(val.X), val.y)
    train_rmse = float(np.sqrt(np.mean((predict(train.X) - train.y) ** 2)))
    report = FitReport(
        model="baseline",
        target=target,
        dim=train.dim,
        degree=degree,
        n_basis=basis_size(train.dim, degree),
        rmse=m.rmse,
        mae=m.mae,
        mre=m.mre,
        sup_error=m.sup,
        mre_excluded=m.mre_excluded,
        train_rmse=train_rmse,
        n_train=len(train),
        n_val=len(val),
        wall_time=time.perf_counter() - started,
        regularized=regularized,
        coeffs=[float(c) for c in model.coeffs],
    )
    logger.info(f"✅ Baseline degree {degree}: {report.n_basis} functions, val RMSE {m.rmse:.4e}")
    return BaselineResult(predict, report)
