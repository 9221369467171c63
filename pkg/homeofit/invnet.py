"""
Invertible residual network
===========================

Learned homeomorphism ``h_Theta``: a stack of residual blocks
``t <- t + g_k(t)`` whose residual branches ``g_k`` (D -> width -> width -> D,
LipSwish activations) are kept contractive by spectral normalization, so every
block and the whole stack can be inverted by fixed-point iteration.

Inputs are affinely mapped from a bounding box to ``[-1, 1]^D`` before the
blocks and mapped back afterwards; with zero weights the network is the
identity in the original coordinates.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from homeofit.errors import ConvergenceError, NumericError, ParameterError, UsageError
from homeofit.rng import spawn_generators

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "homeofit-invresnet"
CHECKPOINT_VERSION = 1

DEFAULT_BLOCKS = 15
DEFAULT_WIDTH = 8
DEFAULT_LIPSCHITZ = 0.97
DEFAULT_POWER_ITERS = 5
INIT_POWER_ITERS = 50
INVERSE_MAX_ITER = 200
LIPSWISH_SCALE = 1.1
ACTIVATIONS = ("lipswish", "identity")

# inverse softplus of 1.0, so beta starts at 1
BETA_INIT_RAW = float(np.log(np.expm1(1.0)))

PARAM_NAMES = ("W1", "b1", "rho1", "W2", "b2", "rho2", "W3", "b3")
WEIGHT_NAMES = ("W1", "W2", "W3")


def softplus(x):
    return np.logaddexp(0.0, x)


def lipswish(x, beta=1.0):
    """``x * sigmoid(beta * x) / 1.1``; Lipschitz constant <= 1 for every beta > 0"""
    x = np.asarray(x, dtype=float)
    out = x * expit(beta * x) / LIPSWISH_SCALE
    return float(out) if out.ndim == 0 else out


def _activation(z: np.ndarray, beta: np.ndarray, kind: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Activation value with its derivatives in ``z`` and in ``beta``"""
    if kind == "identity":
        return z, np.ones_like(z), np.zeros_like(z)
    s = expit(beta * z)
    value = z * s / LIPSWISH_SCALE
    d_z = (s + beta * z * s * (1.0 - s)) / LIPSWISH_SCALE
    d_beta = z * z * s * (1.0 - s) / LIPSWISH_SCALE
    return value, d_z, d_beta


def power_iteration(
    W: np.ndarray, u: np.ndarray, n_iter: int
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Estimate the largest singular value of ``W`` from the left vector ``u``"""
    for _ in range(max(1, n_iter)):
        v = W.T @ u
        v /= max(np.linalg.norm(v), 1e-300)
        u = W @ v
        u /= max(np.linalg.norm(u), 1e-300)
    sigma = float(u @ W @ v)
    return abs(sigma), u, v


class InvResNet:
    """
    Invertible residual network on R^D.

    Parameters are stored as post-normalization weights; gradients are taken
    with respect to them while the normalization scale is held fixed.
    """

    def __init__(
        self,
        dim: int,
        n_blocks: int = DEFAULT_BLOCKS,
        width: int = DEFAULT_WIDTH,
        lipschitz: float = DEFAULT_LIPSCHITZ,
        seed: int = 0,
        activation: str = "lipswish",
        box: Optional[Sequence[Tuple[float, float]]] = None,
    ):
        if dim < 1 or n_blocks < 1 or width < 1:
            raise ParameterError("dim, n_blocks and width must be positive")
        if not 0.0 < lipschitz < 1.0:
            raise ParameterError(f"Lipschitz bound must lie in (0, 1), got {lipschitz}")
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")

        self.dim = dim
        self.n_blocks = n_blocks
        self.width = width
        self.lipschitz = float(lipschitz)
        self.seed = int(seed)
        self.activation = activation
        self.logger = logging.getLogger(f"{__name__}.InvResNet")

        if box is None:
            self.shift = np.zeros(dim)
            self.scale = np.ones(dim)
        else:
            box = np.asarray(box, dtype=float).reshape(dim, 2)
            if np.any(box[:, 1] <= box[:, 0]):
                raise ParameterError("bounding box sides must satisfy lo < hi")
            self.shift = 0.5 * (box[:, 0] + box[:, 1])
            self.scale = 0.5 * (box[:, 1] - box[:, 0])

        rng, vector_rng = spawn_generators(self.seed, 2)
        self.blocks: List[Dict[str, np.ndarray]] = []
        self.power_vectors: List[Dict[str, np.ndarray]] = []
        for _ in range(n_blocks):
            block = {
                "W1": self._uniform(rng, (width, dim), dim),
                "b1": self._uniform(rng, (width,), dim),
                "rho1": np.full(width, BETA_INIT_RAW),
                "W2": self._uniform(rng, (width, width), width),
                "b2": self._uniform(rng, (width,), width),
                "rho2": np.full(width, BETA_INIT_RAW),
                "W3": self._uniform(rng, (dim, width), width),
                "b3": self._uniform(rng, (dim,), width),
            }
            vectors = {}
            for name in WEIGHT_NAMES:
                u = vector_rng.standard_normal(block[name].shape[0])
                vectors[name] = u / np.linalg.norm(u)
            self.blocks.append(block)
            self.power_vectors.append(vectors)

        self._cache: Optional[dict] = None
        self.last_inverse_iterations = 0
        self.spectral_normalize(INIT_POWER_ITERS)

    @staticmethod
    def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(block[name].size for block in self.blocks for name in PARAM_NAMES)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([block[name].ravel() for block in self.blocks for name in PARAM_NAMES])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ParameterError(f"expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for block in self.blocks:
            for name in PARAM_NAMES:
                size = block[name].size
                block[name] = flat[offset : offset + size].reshape(block[name].shape).copy()
                offset += size
        self._cache = None

    def zero_(self) -> "InvResNet":
        """Zero all weights and biases; the map becomes the identity"""
        for block in self.blocks:
            for name in PARAM_NAMES:
                if not name.startswith("rho"):
                    block[name][...] = 0.0
        self._cache = None
        return self

    def copy(self) -> "InvResNet":
        clone = object.__new__(InvResNet)
        clone.__dict__.update(self.__dict__)
        clone.shift = self.shift.copy()
        clone.scale = self.scale.copy()
        clone.blocks = [{k: v.copy() for k, v in b.items()} for b in self.blocks]
        clone.power_vectors = [{k: v.copy() for k, v in pv.items()} for pv in self.power_vectors]
        clone._cache = None
        return clone

    def betas(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        block = self.blocks[k]
        return softplus(block["rho1"]), softplus(block["rho2"])

    # ------------------------------------------------------------------
    # Spectral normalization
    # ------------------------------------------------------------------

    def spectral_normalize(self, n_power_iters: int = DEFAULT_POWER_ITERS) -> "InvResNet":
        """Scale every weight matrix by ``min(1, c**(1/3) / sigma_hat)``, in place"""
        if n_power_iters < 1:
            raise ParameterError("n_power_iters must be at least 1")
        target = self.lipschitz ** (1.0 / 3.0)
        for block, vectors in zip(self.blocks, self.power_vectors):
            for name in WEIGHT_NAMES:
                W = block[name]
                if not np.any(W):
                    continue
                sigma, u, _ = power_iteration(W, vectors[name], n_power_iters)
                vectors[name] = u
                if sigma > target:
                    block[name] = W * (target / sigma)
        self._cache = None
        return self

    # ------------------------------------------------------------------
    # Forward / inverse
    # ------------------------------------------------------------------

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and x.ndim <= 1:
            x = x.reshape(-1, 1)
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ParameterError(f"expected inputs with {self.dim} columns, got {x.shape[1]}")
        return x

    def _residual(self, k: int, t: np.ndarray, keep: Optional[list] = None) -> np.ndarray:
        block = self.blocks[k]
        beta1, beta2 = self.betas(k)
        z1 = t @ block["W1"].T + block["b1"]
        a1, d1, db1 = _activation(z1, beta1, self.activation)
        z2 = a1 @ block["W2"].T + block["b2"]
        a2, d2, db2 = _activation(z2, beta2, self.activation)
        g = a2 @ block["W3"].T + block["b3"]
        if keep is not None:
            keep.append({"t": t, "a1": a1, "d1": d1, "db1": db1, "a2": a2, "d2": d2, "db2": db2})
        return g

    def block_residual(self, k: int, t) -> np.ndarray:
        """Residual branch ``g_k`` in normalized coordinates"""
        return self._residual(k, self._prepare(t))

    def forward(self, x, cache: bool = False) -> np.ndarray:
        """Apply ``h_Theta``; ``cache=True`` keeps activations for ``backward``"""
        x = self._prepare(x)
        t = (x - self.shift) / self.scale
        keep = [] if cache else None
        for k in range(self.n_blocks):
            t = t + self._residual(k, t, keep)
        if not np.all(np.isfinite(t)):
            raise NumericError("non-finite activation in forward pass")
        if cache:
            self._cache = {"records": keep, "n": x.shape[0]}
        return self.shift + self.scale * t

    __call__ = forward

    def inverse(self, q, tol: float = 1e-10, max_iter: int = INVERSE_MAX_ITER) -> np.ndarray:
        """Invert block by block in reverse order with ``t <- t_out - g(t)``"""
        q = self._prepare(q)
        t = (q - self.shift) / self.scale
        stop = (tol / float(np.max(self.scale))) * (1.0 - self.lipschitz) / self.lipschitz
        total = 0
        for k in reversed(range(self.n_blocks)):
            target = t
            current = target.copy()
            for it in range(1, max_iter + 1):
                nxt = target - self._residual(k, current)
                step = float(np.max(np.abs(nxt - current))) if nxt.size else 0.0
                current = nxt
                if step <= stop:
                    break
            else:
                raise ConvergenceError(
                    f"fixed-point inversion of block {k} did not converge in {max_iter} iterations", step
                )
            total += it
            t = current
        self.last_inverse_iterations = total
        if not np.all(np.isfinite(t)):
            raise NumericError("non-finite value in inverse pass")
        return self.shift + self.scale * t

    # ------------------------------------------------------------------
    # Reverse mode
    # ------------------------------------------------------------------

    def backward(self, upstream) -> np.ndarray:
        """
        Gradient of ``sum(upstream * forward(x))`` with respect to the flat
        parameter vector, using the activations of the last cached forward.
        """
        if self._cache is None:
            raise UsageError("backward needs a preceding forward(x, cache=True)")
        records = self._cache["records"]
        upstream = np.asarray(upstream, dtype=float).reshape(self._cache["n"], self.dim)

        dt = upstream * self.scale
        grads: List[List[np.ndarray]] = [None] * self.n_blocks
        for k in reversed(range(self.n_blocks)):
            block, rec = self.blocks[k], records[k]
            rho1_sig, rho2_sig = expit(block["rho1"]), expit(block["rho2"])

            dg = dt
            dW3 = dg.T @ rec["a2"]
            db3 = dg.sum(axis=0)
            da2 = dg @ block["W3"]
            dz2 = da2 * rec["d2"]
            drho2 = (da2 * rec["db2"]).sum(axis=0) * rho2_sig
            dW2 = dz2.T @ rec["a1"]
            db2 = dz2.sum(axis=0)
            da1 = dz2 @ block["W2"]
            dz1 = da1 * rec["d1"]
            drho1 = (da1 * rec["db1"]).sum(axis=0) * rho1_sig
            dW1 = dz1.T @ rec["t"]
            db1 = dz1.sum(axis=0)

            dt = dt + dz1 @ block["W1"]
            grads[k] = [dW1, db1, drho1, dW2, db2, drho2, dW3, db3]

        return np.concatenate([g.ravel() for block_grads in grads for g in block_grads])

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "n_blocks": self.n_blocks,
            "width": self.width,
            "lipschitz": self.lipschitz,
            "seed": self.seed,
            "activation": self.activation,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "blocks": [{name: block[name].tolist() for name in PARAM_NAMES} for block in self.blocks],
            "power_vectors": [{name: pv[name].tolist() for name in WEIGHT_NAMES} for pv in self.power_vectors],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InvResNet":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ParameterError(f"not an InvResNet checkpoint: format {data.get('format')!r}")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ParameterError(f"unsupported checkpoint version {data.get('version')!r}")
        net = object.__new__(cls)
        net.dim = int(data["dim"])
        net.n_blocks = int(data["n_blocks"])
        net.width = int(data["width"])
        net.lipschitz = float(data["lipschitz"])
        net.seed = int(data["seed"])
        net.activation = data.get("activation", "lipswish")
        net.logger = logging.getLogger(f"{__name__}.InvResNet")
        net.shift = np.asarray(data["shift"], dtype=float)
        net.scale = np.asarray(data["scale"], dtype=float)
        net.blocks = [{name: np.asarray(b[name], dtype=float) for name in PARAM_NAMES} for b in data["blocks"]]
        net.power_vectors = [
            {name: np.asarray(pv[name], dtype=float) for name in WEIGHT_NAMES} for pv in data["power_vectors"]
        ]
        net._cache = None
        net.last_inverse_iterations = 0
        return net

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        self.logger.debug(f"💾 Checkpoint written to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "InvResNet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments for a flat parameter vector"""

    n_params: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)
        if self.m.size != self.n_params or self.v.size != self.n_params:
            raise ParameterError("Adam moments must match the parameter count")

    def update(self, params: np.ndarray, grad: np.ndarray, lr: Optional[float] = None) -> np.ndarray:
        """One bias-corrected Adam step; returns the new parameter vector"""
        lr = self.lr if lr is None else lr
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.step)
        v_hat = self.v / (1.0 - self.beta2**self.step)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(step: int, total: int, lr: float, lr_min: float = 1e-5) -> float:
    """Cosine decay from ``lr`` at step 0 to ``lr_min`` at ``total``"""
    if total <= 0:
        return lr
    frac = min(1.0, step / total)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + np.cos(np.pi * frac))
