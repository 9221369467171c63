"""
Fit adapter - learned homeomorphism with variable-projection coefficients
"""
import logging
from typing import Any, Dict

import numpy as np
import pandas as pd

from harness.config import OUTPUT_CONFIG, TRAINING_DEFAULTS, RunConfig
from homeofit.construct import check_degree_floor, single_extremum_h
from homeofit.critical import find_critical_sets
from homeofit.errors import HomeofitError, NotSingleExtremumError
from homeofit.fit import FitConfig, residual_table, train_on_data
from tools.adapters.target_source import GRID_PROPERTIES, TARGET_PROPERTIES, resolve_target, training_data
from tools.base_tool import EXIT_OK, EXIT_OPTIMIZATION, BaseTool, write_csv, write_json

logger = logging.getLogger(__name__)

NETWORK_OPTIONS = ("steps", "n_blocks", "width", "lipschitz", "lr")


class FitAdapter(BaseTool):
    """Train ``f ~ sum a_i h(x)^i`` with an invertible residual network"""

    name = "fit"
    description = "Learned fit: polynomial in the coordinates of a trained invertible network"

    schema = {
        "type": "object",
        "properties": {
            **TARGET_PROPERTIES,
            **GRID_PROPERTIES,
            "degree": {"type": "integer", "minimum": 0},
            "fixed_coeffs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "seed": {"type": "integer", "default": 0},
            "steps": {"type": "integer", "minimum": 0},
            "n_blocks": {"type": "integer", "minimum": 1},
            "width": {"type": "integer", "minimum": 1},
            "lipschitz": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "lr": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["degree"],
        "additionalProperties": False,
    }

    def custom_validation(self, params: Dict[str, Any]) -> Dict[str, Any]:
        run = RunConfig(
            subcommand="fit",
            mode="learned",
            **{k: params[k] for k in RunConfig.model_fields if k in params},
        )
        return {**params, "run_config": run}

    def process(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Entrenar la red y escribir los artefactos de la corrida"""
        # 1. Resolver objetivo y configuración
        run: RunConfig = params["run_config"]
        target = resolve_target(params)
        bench = target.benchmark
        default_steps = bench.default_steps if bench is not None else 20000
        cfg = FitConfig(
            degree=run.degree,
            dim=target.dim,
            fixed_coeffs=run.fixed_coeffs,
            seed=run.seed,
            steps=run.steps if run.steps is not None else default_steps,
            n_blocks=run.n_blocks or TRAINING_DEFAULTS["n_blocks"],
            width=run.width or TRAINING_DEFAULTS["width"],
            lipschitz=run.lipschitz or TRAINING_DEFAULTS["lipschitz"],
            lr=run.lr or TRAINING_DEFAULTS["lr"],
            lr_min=TRAINING_DEFAULTS["lr_min"],
            eval_every=TRAINING_DEFAULTS["eval_every"],
            n_power_iters=TRAINING_DEFAULTS["n_power_iters"],
        )
        self.open_run(run.out, {**run.model_dump(), "fit_config": cfg.model_dump()})

        # 2. Entrenar
        train, val = training_data(params, target)
        result = train_on_data(train, val, cfg, target=target.name)
        report = result.report

        # 3. Guardar checkpoint y residuos
        result.net.save(self.artifact("checkpoint_file"))
        residuals = residual_table(val.X, val.y, result.model(val.X))
        write_csv(self.artifact("residuals_file"), residuals)
        report.residuals_csv = OUTPUT_CONFIG["residuals_file"]
        self.partial_report = report.model_dump()

        # 4. Verificaciones 1D (piso de grado, forma cerrada)
        if target.dim == 1 and target.function is not None:
            report.extra.update(self._one_dimensional_checks(target, result, cfg))

        exit_code = EXIT_OPTIMIZATION if report.diverged else EXIT_OK
        payload = {"success": exit_code == EXIT_OK, "exit_code": exit_code, **report.model_dump()}
        write_json(self.artifact("report_file"), payload)
        if report.diverged:
            self.logger.error("❌ Training diverged; report written with the last finite snapshot")
        return {"report": payload, "exit_code": exit_code}

    def _one_dimensional_checks(self, target, result, cfg: FitConfig) -> Dict[str, Any]:
        """Learned-h samples, closed-form comparison and the degree floor"""
        f, domain = target.function, target.domain[0]
        xs = np.linspace(domain[0], domain[1], OUTPUT_CONFIG["h_samples"])
        h_vals = result.model.h(xs)
        samples = pd.DataFrame({"x": xs, "h": h_vals})
        extra: Dict[str, Any] = {}

        try:
            cs = find_critical_sets(f, domain)
        except HomeofitError as e:
            self.logger.warning(f"⚠️ Critical set unavailable ({e.error_type}); skipping degree floor")
            write_csv(self.artifact("h_samples_file"), samples)
            return extra

        if cs.M == 1:
            try:
                a0, a2, reference = single_extremum_h(f, cs.representatives[0], domain)
                ref_vals = reference(xs)
                samples["reference_h"] = ref_vals
                closed = {"a0": a0, "a2": a2}
                if cfg.fixed_coeffs is not None and np.allclose(cfg.fixed_coeffs, [a0, 0.0, a2]):
                    closed["sup_deviation"] = float(np.max(np.abs(ref_vals - h_vals)))
                extra["closed_form"] = closed
            except NotSingleExtremumError as e:
                self.logger.warning(f"⚠️ No closed-form comparison: {e}")
        write_csv(self.artifact("h_samples_file"), samples)

        floor = check_degree_floor(cs, cfg.degree, result.model)
        extra["degree_floor"] = floor.to_dict()
        extra["M"] = cs.M
        return extra
