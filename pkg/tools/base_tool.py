"""
Base class for all harness tools - clase base separada de los adaptadores
=========================================================================

Every subcommand is a tool: a name, a description, a JSON schema for its
parameters and a ``process()`` method. ``execute()`` validates, runs and wraps
the outcome in the standard envelope; it is the only place where exceptions
become exit codes.
"""
import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Optional

import jsonschema
import numpy as np
import pandas as pd
from pydantic import ValidationError

from harness.config import LOGGING_CONFIG, OUTPUT_CONFIG, RUNTIME_CONFIG
from homeofit.errors import HomeofitError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_OPTIMIZATION = 3


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, float_format=OUTPUT_CONFIG["float_format"], lineterminator="\n")
    return path


def allocate_run_dir(out: Optional[str], tool_name: str) -> Path:
    """
    Fresh run directory. An existing non-empty ``out`` is never reused; a
    numeric suffix is appended instead.
    """
    if out is None:
        base = Path(RUNTIME_CONFIG["runs_dir"]) / tool_name
    else:
        base = Path(out)
    candidate, suffix = base, 1
    while candidate.exists() and any(candidate.iterdir()):
        candidate = base.with_name(f"{base.name}-{suffix}")
        suffix += 1
    candidate.mkdir(parents=True, exist_ok=True)
    return candidate


class BaseTool(ABC):
    """Base class for tools with JSON schemas and standardized execution"""

    # 🎯 PROPIEDADES QUE DEBEN SER DEFINIDAS POR SUBCLASES
    name: str = "base_tool"
    description: str = "Base tool - should be overridden"

    # 🎯 SCHEMA POR DEFECTO - DEBE SER SOBRESCRITO
    schema: Dict[str, Any] = {"type": "object", "properties": {}, "required": []}

    def __init__(self):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.run_dir: Optional[Path] = None
        self.partial_report: Optional[Dict[str, Any]] = None
        self._file_handler: Optional[logging.Handler] = None
        self._validate_tool_definition()

    def _validate_tool_definition(self):
        if self.name == "base_tool":
            self.logger.warning(f"Tool {self.__class__.__name__} should override 'name' property")
        if not self.schema.get("properties"):
            self.logger.warning(f"Tool {self.name} has empty schema - should define properties")

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """
        🎯 MÉTODO ESTÁNDAR DE EJECUCIÓN
        Valida parámetros, ejecuta la lógica específica y nunca lanza excepciones
        """
        self.run_dir = None
        self.partial_report = None
        try:
            self.logger.info(f"🛠️ Executing tool: {self.name}")
            # 1. Validar parámetros
            validated = self.validate_params(params)

            # 2. Ejecutar lógica específica
            result = self.process(validated)

            # 3. Estandarizar respuesta
            exit_code = int(result.pop("exit_code", EXIT_OK)) if isinstance(result, dict) else EXIT_OK
            return {
                "success": exit_code == EXIT_OK,
                "exit_code": exit_code,
                "result": result,
                "tool": self.name,
                "run_dir": str(self.run_dir) if self.run_dir else None,
            }
        except ValueError as e:
            self.logger.error(f"❌ Validation error in {self.name}: {e}")
            return self._failure(str(e), "validation_error", EXIT_INPUT)
        except HomeofitError as e:
            self.logger.error(f"❌ {self.name} failed ({e.error_type}): {e}")
            return self._failure(str(e), e.error_type, e.exit_code)
        except Exception as e:
            self.logger.error(f"❌ Execution error in {self.name}: {e}")
            return self._failure(str(e), "execution_error", EXIT_INPUT)
        finally:
            self._detach_log_file()

    def _failure(self, message: str, error_type: str, exit_code: int) -> Dict[str, Any]:
        envelope = {
            "success": False,
            "error": message,
            "error_type": error_type,
            "exit_code": exit_code,
            "tool": self.name,
            "run_dir": str(self.run_dir) if self.run_dir else None,
        }
        # 🔧 Las métricas obtenidas antes del fallo se conservan en report.json
        if self.partial_report is not None:
            envelope["partial_report"] = self.partial_report
        if self.run_dir is not None:
            write_json(self.run_dir / OUTPUT_CONFIG["report_file"], {**(self.partial_report or {}), **envelope})
        return envelope

    def validate_params(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            jsonschema.validate(instance=params, schema=self.schema)
        except jsonschema.ValidationError as e:
            error_msg = f"Parameter validation failed: {e.message}"
            if e.validator == "required":
                error_msg += f"; provided parameters: {sorted(params)}"
            raise ValueError(error_msg) from e
        try:
            validated = self.custom_validation(params)
        except ValidationError as e:
            raise ValueError(f"Parameter validation failed: {e}") from e
        self.logger.debug(f"✅ Parameters validated for {self.name}")
        return validated

    def custom_validation(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Validación personalizada - sobrescribir en subclases"""
        return params

    @abstractmethod
    def process(self, params: Dict[str, Any]) -> Dict[str, Any]:
        raise NotImplementedError(f"Tool {self.name} must implement process() method")

    # ------------------------------------------------------------------
    # Run directory helpers
    # ------------------------------------------------------------------

    def open_run(self, out: Optional[str], config: Dict[str, Any]) -> Path:
        """Crear el directorio de la corrida, adjuntar ``run.log`` y guardar la configuración"""
        self.run_dir = allocate_run_dir(out, self.name)
        if "file" in LOGGING_CONFIG["handlers"]:
            handler = logging.FileHandler(self.run_dir / LOGGING_CONFIG["file_name"], encoding="utf-8")
            handler.setFormatter(logging.Formatter(LOGGING_CONFIG["format"]))
            logging.getLogger().addHandler(handler)
            self._file_handler = handler
        write_json(self.run_dir / OUTPUT_CONFIG["config_file"], config)
        self.logger.info(f"📁 Run directory: {self.run_dir}")
        return self.run_dir

    def _detach_log_file(self):
        """Soltar el handler de ``run.log``"""
        if self._file_handler is not None:
            logging.getLogger().removeHandler(self._file_handler)
            self._file_handler.close()
            self._file_handler = None

    def artifact(self, key: str) -> Path:
        return self.run_dir / OUTPUT_CONFIG[key]

    def get_schema_info(self) -> Dict[str, Any]:
        """Información del schema para el modo info"""
        properties = self.schema.get("properties", {})
        required = self.schema.get("required", [])
        return {
            "name": self.name,
            "description": self.description,
            "required_params": list(required),
            "optional_params": [p for p in properties if p not in required],
        }
