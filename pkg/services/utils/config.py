"""
Run configuration
Purpose: One validated configuration object for a pipeline run

Precedence: CLI flag > environment (RESCUE_*) > YAML file > defaults.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from agents.detector_support import AnchorConfig
from agents.evaluation import EvaluationConfig
from agents.fusion import FusionConfig
from agents.geometry import GeometryConfig
from agents.particle_filter import PfConfig
from agents.reid import ReidConfig
from agents.simulation import ScenarioSpec
from agents.tracking import TrackerConfig
from utils.errors import InputError
from utils.records import VersionedRecord, read_yaml, schema_error

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class InputPaths(BaseModel):
    optical: Optional[str] = None
    thermal: Optional[str] = None
    calibration: Optional[str] = None
    poses: Optional[str] = None
    annotations: Optional[str] = None
    patches_dir: Optional[str] = None


class RunConfig(VersionedRecord):
    seed: int = Field(0, ge=0)
    out_dir: str = "out"
    log_level: str = "INFO"
    anchors: AnchorConfig = Field(default_factory=AnchorConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    pf: PfConfig = Field(default_factory=PfConfig)
    reid: ReidConfig = Field(default_factory=ReidConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    inputs: InputPaths = Field(default_factory=InputPaths)
    scenario: Optional[ScenarioSpec] = None
    dump_particles: bool = False
    plot: bool = False


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """RESCUE_SEED / RESCUE_OUT_DIR / RESCUE_LOG_LEVEL from the environment (and .env)"""
    if environ is None:
        load_dotenv()
        environ = os.environ
    overrides: Dict[str, Any] = {}
    if environ.get("RESCUE_SEED"):
        try:
            overrides["seed"] = int(environ["RESCUE_SEED"])
        except ValueError as e:
            raise InputError(f"RESCUE_SEED must be an integer, got '{environ['RESCUE_SEED']}'") from e
    if environ.get("RESCUE_OUT_DIR"):
        overrides["out_dir"] = environ["RESCUE_OUT_DIR"]
    if environ.get("RESCUE_LOG_LEVEL"):
        overrides["log_level"] = environ["RESCUE_LOG_LEVEL"].upper()
    return overrides


def with_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """
    Apply dotted-key overrides ("pf.n", "seed", ...); None values are ignored

    The result is validated again.
    """
    payload = cfg.model_dump(mode="json")
    for key, value in overrides.items():
        if value is None:
            continue
        target = payload
        *parents, leaf = key.split(".")
        for part in parents:
            if target.get(part) is None:
                target[part] = {}
            target = target[part]
        target[leaf] = value
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise schema_error(e) from e


def load_run_config(path=None, cli_overrides: Optional[Mapping[str, Any]] = None,
                    environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Raises:
        ParseError / SchemaError: invalid YAML file
        InputError: invalid environment value
    """
    cfg = RunConfig()
    if path:
        cfg = read_yaml(path, RunConfig)
        cfg = cfg.model_copy(update={"inputs": _resolve_inputs(cfg.inputs, Path(path).parent)})
    cfg = with_overrides(cfg, env_overrides(environ))
    if cli_overrides:
        cfg = with_overrides(cfg, cli_overrides)
    if cfg.log_level not in LOG_LEVELS:
        raise InputError(f"log level must be one of {', '.join(LOG_LEVELS)}, got '{cfg.log_level}'")
    return cfg


def _resolve_inputs(inputs: InputPaths, base: Path) -> InputPaths:
    """Paths in a config file are relative to the file"""
    resolved = {}
    for name, value in inputs.model_dump().items():
        if value is not None and not Path(value).is_absolute():
            value = str(base / value)
        resolved[name] = value
    return InputPaths(**resolved)
