"""
Baseline adapter - direct total-degree polynomial least squares
"""
import logging
import re
from typing import Any, Dict, List

import pandas as pd

from harness.config import OUTPUT_CONFIG, RunConfig
from homeofit.construct import check_degree_floor
from homeofit.critical import find_critical_sets
from homeofit.errors import HomeofitError, UsageError
from homeofit.fit import fit_baseline, residual_table
from homeofit.targets import Dataset, PesConfig, morse_variables
from tools.adapters.target_source import GRID_PROPERTIES, TARGET_PROPERTIES, resolve_target, training_data
from tools.base_tool import BaseTool, write_csv, write_json

logger = logging.getLogger(__name__)

SWEEP_PATTERN = re.compile(r"^(\d+):(\d+)$")


def parse_sweep(text: str) -> List[int]:
    match = SWEEP_PATTERN.match(text.strip())
    if not match:
        raise UsageError(f"sweep must look like LO:HI, got {text!r}")
    lo, hi = int(match.group(1)), int(match.group(2))
    if lo > hi:
        raise UsageError(f"empty sweep range {text!r}")
    return list(range(lo, hi + 1))


class BaselineAdapter(BaseTool):
    """Direct polynomial fit of the target, same metrics pipeline as the learned path"""

    name = "baseline"
    description = "Direct polynomial least squares (Chebyshev basis on the data box)"

    schema = {
        "type": "object",
        "properties": {
            **TARGET_PROPERTIES,
            **GRID_PROPERTIES,
            "degree": {"type": "integer", "minimum": 0},
            "sweep": {"type": "string", "pattern": r"^\d+:\d+$"},
            "variables": {"type": "string", "enum": ["internal", "morse"], "default": "internal"},
            "ridge_fallback": {"type": "boolean", "default": True},
            "seed": {"type": "integer", "default": 0},
        },
        "required": [],
        "additionalProperties": False,
    }

    def custom_validation(self, params: Dict[str, Any]) -> Dict[str, Any]:
        values = {k: params[k] for k in RunConfig.model_fields if k in params and k != "sweep"}
        sweep = parse_sweep(params["sweep"]) if params.get("sweep") else None
        run = RunConfig(subcommand="baseline", mode="baseline", sweep=sweep, **values)
        return {**params, "run_config": run}

    def process(self, params: Dict[str, Any]) -> Dict[str, Any]:
        # 1. Resolver objetivo y datos
        run: RunConfig = params["run_config"]
        target = resolve_target(params)
        self.open_run(run.out, run.model_dump())
        train, val = training_data(params, target)

        if run.variables == "morse":
            cfg = PesConfig()
            train = Dataset(morse_variables(train.X, cfg), train.y)
            val = Dataset(morse_variables(val.X, cfg), val.y)
            self.logger.info("🔧 Fitting in Morse variables (y0, y1, y2)")

        # 2. Ajustar cada grado del barrido
        degrees = run.sweep if run.sweep is not None else [run.degree]
        results = []
        for degree in degrees:
            result = fit_baseline(
                train, val, degree, ridge_fallback=run.ridge_fallback, target=target.name
            )
            results.append(result)

        if run.sweep is not None:
            rows = [
                {
                    "degree": r.report.degree,
                    "n_basis": r.report.n_basis,
                    "train_rmse": r.report.train_rmse,
                    "rmse": r.report.rmse,
                    "mae": r.report.mae,
                }
                for r in results
            ]
            write_csv(self.artifact("sweep_file"), pd.DataFrame(rows))
            best = min(results, key=lambda r: r.report.rmse)
            self.logger.info(f"📊 Best direct polynomial fit: degree {best.report.degree}")
        else:
            best = results[0]

        report = best.report
        report.extra["variables"] = run.variables
        if run.sweep is not None:
            report.extra["sweep"] = {"degrees": degrees, "best_degree": report.degree}

        write_csv(self.artifact("residuals_file"), residual_table(val.X, val.y, best.model(val.X)))
        report.residuals_csv = OUTPUT_CONFIG["residuals_file"]
        self.partial_report = report.model_dump()

        # 🔧 Piso de grado solo para objetivos 1D con función conocida
        if target.dim == 1 and target.function is not None:
            try:
                cs = find_critical_sets(target.function, target.domain[0])
            except HomeofitError as e:
                cs = None
                self.logger.warning(f"⚠️ Degree floor unavailable ({e.error_type})")
            if cs is not None:
                floor = check_degree_floor(cs, report.degree, best.model)
                report.extra["degree_floor"] = floor.to_dict()
                report.extra["M"] = cs.M

        payload = {"success": True, "exit_code": 0, **report.model_dump()}
        write_json(self.artifact("report_file"), payload)
        return {"report": payload, "exit_code": 0}
