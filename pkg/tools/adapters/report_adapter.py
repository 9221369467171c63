"""
Report adapter - comparison tables from run reports
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from harness.config import RunConfig
from homeofit.errors import ParameterError
from tools.base_tool import BaseTool, write_csv

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("model", "degree", "n_basis", "rmse", "mae")
TABLE_COLUMNS = ["model", "target", "degree", "n_basis", "rmse", "mae"]


def load_report(path: str) -> Dict[str, Any]:
    file = Path(path)
    if file.is_dir():
        file = file / "report.json"
    if not file.exists():
        raise ParameterError(f"report file not found: {file}")
    try:
        data = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParameterError(f"{file} is not valid JSON: {e}") from e
    if data.get("success") is False and "rmse" not in data:
        raise ParameterError(f"{file} records a failed run ({data.get('error_type')})")
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ParameterError(f"{file} lacks report fields {missing}")
    return data


def comparison_table(reports: List[Dict[str, Any]]) -> pd.DataFrame:
    """One row per report; a dim column appears when dimensions differ"""
    frame = pd.DataFrame(reports)
    if "target" not in frame:
        frame["target"] = ""
    columns = list(TABLE_COLUMNS)
    dims = frame["dim"] if "dim" in frame else pd.Series([1] * len(frame))
    if dims.nunique() > 1:
        frame["dim"] = dims
        columns.insert(2, "dim")
    return frame[columns].reset_index(drop=True)


def to_markdown(frame: pd.DataFrame) -> str:
    def cell(value) -> str:
        if isinstance(value, float):
            return f"{value:.4g}"
        return str(value)

    header = "| " + " | ".join(frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = ["| " + " | ".join(cell(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule, *rows]) + "\n"


class ReportAdapter(BaseTool):
    """Combine report.json files into Markdown and CSV comparison tables"""

    name = "report"
    description = "Comparison table (model, degree, n_basis, RMSE, MAE) from run reports"

    schema = {
        "type": "object",
        "properties": {
            "reports": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "out": {"type": "string"},
        },
        "required": ["reports"],
        "additionalProperties": False,
    }

    def custom_validation(self, params: Dict[str, Any]) -> Dict[str, Any]:
        run = RunConfig(subcommand="report", mode="report", reports=params["reports"], out=params.get("out"))
        return {**params, "run_config": run}

    def process(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Leer los report.json y escribir las tablas comparativas"""
        run: RunConfig = params["run_config"]
        reports = [load_report(path) for path in run.reports]
        self.open_run(run.out, run.model_dump())

        table = comparison_table(reports)
        write_csv(self.artifact("table_csv"), table)
        self.artifact("table_markdown").write_text(to_markdown(table), encoding="utf-8")
        self.logger.info(f"📊 Comparison table with {len(table)} rows written to {self.run_dir}")
        return {"rows": table.to_dict(orient="records"), "exit_code": 0}
