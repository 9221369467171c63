"""
Construct adapter - exact path ``f = p o h``
"""
import logging
import time
from typing import Any, Dict

import numpy as np
import pandas as pd

from harness.config import OUTPUT_CONFIG, RunConfig
from homeofit.construct import build_exact_representation, check_degree_floor, single_extremum_h
from homeofit.critical import DEFAULT_SCAN_POINTS, evaluate_callable
from homeofit.errors import NotSingleExtremumError
from homeofit.fit import FitReport, metrics
from tools.adapters.target_source import TARGET_PROPERTIES, one_dimensional
from tools.base_tool import BaseTool, write_csv, write_json

logger = logging.getLogger(__name__)


class ConstructAdapter(BaseTool):
    """Critical detection, Chandler polynomial and exact homeomorphism for a 1D target"""

    name = "construct"
    description = "Exact representation f = p o h (Chandler polynomial + piecewise homeomorphism)"

    schema = {
        "type": "object",
        "properties": {
            **TARGET_PROPERTIES,
            "n_scan": {"type": "integer", "minimum": 3, "default": DEFAULT_SCAN_POINTS},
            "plateau_tol": {"type": "number", "exclusiveMinimum": 0},
            "eps": {"type": "number", "exclusiveMinimum": 0, "description": "strictify ramp height"},
        },
        "required": [],
        "additionalProperties": False,
    }

    def custom_validation(self, params: Dict[str, Any]) -> Dict[str, Any]:
        run = RunConfig(
            subcommand="construct",
            mode="exact",
            target=params.get("target"),
            dataset=params.get("dataset"),
            out=params.get("out"),
        )
        return {**params, "run_config": run}

    def process(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Construcción exacta: conjuntos críticos, polinomio de Chandler y h"""
        # 1. Resolver objetivo y abrir la corrida
        target = one_dimensional(params)
        config = params["run_config"].model_dump()
        config.update({k: params[k] for k in ("n_scan", "plateau_tol", "eps") if k in params})
        self.open_run(params.get("out"), config)

        # 2. Construir la representación exacta
        started = time.perf_counter()
        f, domain = target.function, target.domain[0]
        rep = build_exact_representation(
            f,
            domain,
            n_scan=params.get("n_scan", DEFAULT_SCAN_POINTS),
            plateau_tol=params.get("plateau_tol"),
            eps=params.get("eps"),
        )
        cs, cr, h = rep.critical, rep.chandler, rep.h
        self.logger.info(
            f"🔧 M={cs.M}, Chandler degree {cr.p.degree}, composition residual {rep.composition_residual:.3e}"
        )

        write_json(self.artifact("chandler_file"), {**cr.to_dict(), "critical_set": cs.to_dict()})

        # 3. Muestrear h y comparar con la forma cerrada
        xs = np.linspace(domain[0], domain[1], OUTPUT_CONFIG["h_samples"])
        f_vals = evaluate_callable(f, xs)
        h_vals = h(xs)
        composed = cr.p(h_vals)
        samples = pd.DataFrame({"x": xs, "h": h_vals, "f": f_vals, "p_of_h": composed})

        extra: Dict[str, Any] = {
            "M": cs.M,
            "composition_residual": rep.composition_residual,
            "target_deviation": rep.target_deviation,
            "strictified": rep.strictified,
            "junction_gaps": h.junction_gaps(),
            "chandler_residuals": list(cr.residuals),
            "critical_set": cs.to_dict(),
        }
        if cs.M == 1:
            try:
                a0, a2, reference = single_extremum_h(f, cs.representatives[0], domain)
                ref_vals = reference(xs)
                samples["reference_h"] = ref_vals
                extra["closed_form"] = {
                    "a0": a0,
                    "a2": a2,
                    "sup_deviation": float(np.max(np.abs(ref_vals - h_vals))),
                }
            except NotSingleExtremumError as e:
                self.logger.warning(f"⚠️ No closed-form comparison: {e}")
        write_csv(self.artifact("h_samples_file"), samples)

        floor = check_degree_floor(cs, cr.p.degree, lambda x: cr.p(h(x)))
        extra["degree_floor"] = floor.to_dict()

        # 4. Métricas y reporte
        m = metrics(composed, f_vals)
        report = FitReport(
            model="exact",
            target=target.name,
            dim=1,
            degree=cr.p.degree,
            n_basis=cr.p.degree + 1,
            rmse=m.rmse,
            mae=m.mae,
            mre=m.mre,
            sup_error=m.sup,
            mre_excluded=m.mre_excluded,
            n_val=xs.size,
            wall_time=time.perf_counter() - started,
            coeffs=[float(c) for c in cr.p.coeffs],
            extra=extra,
        )
        payload = {"success": True, "exit_code": 0, **report.model_dump()}
        write_json(self.artifact("report_file"), payload)
        self.logger.info(f"✅ Exact construction written to {self.run_dir}")
        return {"report": payload, "exit_code": 0}
