"""
Target resolution shared by the adapters: a named benchmark or a CSV dataset.
"""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

from harness.config import RUNTIME_CONFIG
from homeofit.errors import ParameterError
from homeofit.targets import (
    Benchmark,
    Dataset,
    get_benchmark,
    interpolant_from_dataset,
    load_dataset,
    make_dataset,
)

logger = logging.getLogger(__name__)

TARGET_PROPERTIES = {
    "target": {
        "type": "string",
        "enum": ["f1", "f2", "f3", "f4", "pes"],
        "description": "Named benchmark target",
    },
    "dataset": {"type": "string", "description": "CSV dataset (header x0[,x1...],value)"},
    "out": {"type": "string", "description": "Run directory (a suffixed sibling is used if it is not empty)"},
}

GRID_PROPERTIES = {
    "val_dataset": {"type": "string", "description": "Validation CSV for dataset targets"},
    "train_points": {"type": "array", "items": {"type": "integer", "minimum": 2}},
    "val_points": {"type": "array", "items": {"type": "integer", "minimum": 2}},
}


@dataclass
class ResolvedTarget:
    name: str
    dim: int
    function: Optional[Callable]
    domain: Tuple[Tuple[float, float], ...]
    benchmark: Optional[Benchmark] = None


def resolve_target(params: Dict[str, Any]) -> ResolvedTarget:
    if params.get("target"):
        bench = get_benchmark(params["target"])
        return ResolvedTarget(bench.name, bench.dim, bench.function, bench.domain, bench)
    ds = load_dataset(params["dataset"])
    if ds.dim == 1:
        f = interpolant_from_dataset(ds)
        return ResolvedTarget(params["dataset"], 1, f, (f.domain,))
    lo, hi = ds.X.min(axis=0), ds.X.max(axis=0)
    return ResolvedTarget(params["dataset"], ds.dim, None, tuple(zip(lo.tolist(), hi.tolist())))


def one_dimensional(params: Dict[str, Any]) -> ResolvedTarget:
    target = resolve_target(params)
    if target.dim != 1 or target.function is None:
        raise ParameterError(f"target {target.name!r} is not a one-dimensional function")
    return target


def training_data(params: Dict[str, Any], target: ResolvedTarget) -> Tuple[Dataset, Dataset]:
    """Training and validation sets for a benchmark (grids) or dataset files"""
    threads = RUNTIME_CONFIG["threads"]
    bench = target.benchmark
    if bench is not None:
        train = make_dataset(
            bench.function,
            bench.train_grid(params.get("train_points")),
            cutoff=bench.cutoff,
            minimum=bench.minimum,
            max_workers=threads,
        )
        val = make_dataset(
            bench.function, bench.val_grid(params.get("val_points")), cutoff=bench.cutoff, max_workers=threads
        )
    else:
        train = load_dataset(params["dataset"])
        val = load_dataset(params["val_dataset"]) if params.get("val_dataset") else train
    logger.info(f"📊 {target.name}: {len(train)} training rows, {len(val)} validation rows")
    return train, val
