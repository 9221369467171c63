"""
Harness Configuration
=====================

Static configuration of the homeofit command harness plus the environment
overrides (``HOMEOFIT_THREADS``, ``HOMEOFIT_LOG_LEVEL``, ``HOMEOFIT_RUNS_DIR``).
"""
import logging
import os
from typing import List, Literal, Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

load_dotenv()

logger = logging.getLogger(__name__)


class EnvironmentSettings(BaseModel):
    """Validated ``HOMEOFIT_*`` overrides"""

    threads: Optional[int] = Field(None, ge=1)
    runs_dir: str = "runs"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    @field_validator("threads", mode="before")
    @classmethod
    def _zero_means_unset(cls, value):
        if value is None or str(value).strip() in ("", "0"):
            return None
        return value


def read_environment(environ: Optional[Mapping[str, str]] = None) -> EnvironmentSettings:
    """Parse the overrides; an invalid value falls back to its default with a warning"""
    env = os.environ if environ is None else environ
    raw = {
        "threads": env.get("HOMEOFIT_THREADS"),
        "runs_dir": env.get("HOMEOFIT_RUNS_DIR", "runs"),
        "log_level": env.get("HOMEOFIT_LOG_LEVEL", "INFO").upper(),
    }
    try:
        return EnvironmentSettings(**raw)
    except ValidationError as e:
        invalid = sorted({str(err["loc"][0]) for err in e.errors()})
        logger.warning(f"⚠️ Invalid environment overrides {invalid}; using defaults for them")
        return EnvironmentSettings(**{k: v for k, v in raw.items() if k not in invalid})


ENVIRONMENT = read_environment()

# 🎯 CONFIGURACIÓN DEL HARNESS
HARNESS_CONFIG = {
    "name": "homeofit-harness",
    "version": "1.0.0",
    "description": "Polynomial o homeomorphism approximation - construct, fit, baseline, report",
}

# Tools Configuration
TOOLS_CONFIG = {
    "adapters_package": "tools.adapters",
    "enabled_tools": ["construct", "fit", "baseline", "report"],
}

# Logging Configuration
LOGGING_CONFIG = {
    "level": ENVIRONMENT.log_level,
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "handlers": ["console", "file"],
    "file_name": "run.log",
}

# Runtime Configuration
RUNTIME_CONFIG = {
    "threads": ENVIRONMENT.threads,
    "runs_dir": ENVIRONMENT.runs_dir,
    "thread_env_vars": ["OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"],
}

# 🔧 Valores por defecto del entrenamiento
TRAINING_DEFAULTS = {
    "n_blocks": 15,
    "width": 8,
    "lipschitz": 0.97,
    "lr": 1e-3,
    "lr_min": 1e-5,
    "eval_every": 100,
    "n_power_iters": 1,
}

# Output artifacts
OUTPUT_CONFIG = {
    "config_file": "config.json",
    "report_file": "report.json",
    "chandler_file": "chandler.json",
    "checkpoint_file": "checkpoint.json",
    "h_samples_file": "h_samples.csv",
    "residuals_file": "residuals.csv",
    "sweep_file": "sweep.csv",
    "table_markdown": "comparison.md",
    "table_csv": "comparison.csv",
    "float_format": "%.17g",
    "h_samples": 2001,
}


def apply_thread_limits() -> None:
    """Export HOMEOFIT_THREADS to the BLAS/OpenMP thread variables"""
    threads = RUNTIME_CONFIG["threads"]
    if threads:
        for name in RUNTIME_CONFIG["thread_env_vars"]:
            os.environ.setdefault(name, str(threads))


apply_thread_limits()


class RunConfig(BaseModel):
    """Resolved configuration of one harness run, echoed to ``config.json``"""

    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["construct", "fit", "baseline", "report"]
    target: Optional[str] = None
    dataset: Optional[str] = None
    val_dataset: Optional[str] = None
    mode: Literal["exact", "learned", "baseline", "report"]
    degree: Optional[int] = Field(None, ge=0)
    fixed_coeffs: Optional[List[float]] = None
    seed: int = 0
    steps: Optional[int] = Field(None, ge=0)
    n_blocks: Optional[int] = Field(None, ge=1)
    width: Optional[int] = Field(None, ge=1)
    lipschitz: Optional[float] = Field(None, gt=0.0, lt=1.0)
    lr: Optional[float] = Field(None, gt=0.0)
    train_points: Optional[List[int]] = None
    val_points: Optional[List[int]] = None
    sweep: Optional[List[int]] = None
    variables: Literal["internal", "morse"] = "internal"
    ridge_fallback: bool = True
    out: Optional[str] = None
    reports: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if self.mode == "report":
            if not self.reports:
                raise ValueError("report needs at least one report file")
            return self
        if (self.target is None) == (self.dataset is None):
            raise ValueError("exactly one of target or dataset is required")
        if self.mode == "exact":
            network = [self.steps, self.n_blocks, self.width, self.lipschitz, self.lr, self.fixed_coeffs]
            if any(v is not None for v in network):
                raise ValueError("exact mode does not take network options")
        if self.mode in ("learned", "baseline") and self.degree is None and self.sweep is None:
            raise ValueError(f"{self.subcommand} needs a degree")
        if self.variables == "morse" and (self.mode != "baseline" or self.target != "pes"):
            raise ValueError("morse variables are only available for the pes baseline")
        return self
