"""
Configuration utilities for the representation grounding planner.
"""
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


class Config:
    """Configuration class for application-wide settings."""

    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # Shipped fixtures
    DATA_DIR = Path(os.getenv('REPGROUNDER_DATA_DIR', Path(__file__).resolve().parent.parent / 'data'))
    REGISTRY_FILE = DATA_DIR / 'registry.json'
    BENCHMARK_FILE = DATA_DIR / 'benchmark.yaml'

    # Geometry tolerances
    GEOMETRY_TOL = 1e-9
    TASK_POSITION_TOL_M = 1e-3
    TASK_ANGLE_TOL_RAD = 1e-2

    # Scene simulation
    GRASP_RADIUS_M = _env_float('GRASP_RADIUS_M', 0.02)
    NOMINAL_SPEED_MPS = _env_float('NOMINAL_SPEED_MPS', 0.25)
    SETTLE_TOLERANCE_M = _env_float('SETTLE_TOLERANCE_M', 0.02)
    PLACEMENT_CLEARANCE_M = _env_float('PLACEMENT_CLEARANCE_M', 0.02)
    PLACEMENT_MAX_ATTEMPTS = _env_int('PLACEMENT_MAX_ATTEMPTS', 200)
    DRAWER_OPEN_FRACTION = 1.0 / 3.0

    # Toolkit
    DEFAULT_LAMBDA = _env_float('DEFAULT_LAMBDA', 0.01)
    ADAPTIVE_PADDING_FRACTION = _env_float('ADAPTIVE_PADDING_FRACTION', 0.25)
    FINE_SCALE_DEFAULT = _env_float('FINE_SCALE_DEFAULT', 0.2)

    # Solver
    WAYPOINT_COUNT = _env_int('WAYPOINT_COUNT', 8)
    DENSIFY_FACTOR = _env_int('DENSIFY_FACTOR', 4)
    SOLVER_MAX_ITERATIONS = _env_int('SOLVER_MAX_ITERATIONS', 200)
    SOLVER_TOLERANCE = _env_float('SOLVER_TOLERANCE', 1e-3)
    SOLVER_RESTARTS = _env_int('SOLVER_RESTARTS', 4)
    COLLISION_MARGIN_M = _env_float('COLLISION_MARGIN_M', 0.01)
    FD_STEP = 1e-5

    # Tracking
    TRACK_PERIOD_S = _env_float('TRACK_PERIOD_S', 0.5)
    TRACK_STALENESS_BUDGET_S = _env_float('TRACK_STALENESS_BUDGET_S', 1.0)
    EXTRACTION_RETRIES = _env_int('EXTRACTION_RETRIES', 2)

    # Grounding
    GROUNDING_PHASE_LATENCY_S = _env_float('GROUNDING_PHASE_LATENCY_S', 2.0)
    GROUNDING_SINGLE_SHOT_LATENCY_S = _env_float('GROUNDING_SINGLE_SHOT_LATENCY_S', 6.0)
    NO_COG_SCHEMA_ERROR_PROB = _env_float('NO_COG_SCHEMA_ERROR_PROB', 0.2)
    GROUNDING_RETRIES = _env_int('GROUNDING_RETRIES', 2)

    # Remote chat-completion backend
    LLM_ENDPOINT = os.getenv('LLM_ENDPOINT', 'http://localhost:8080/v1/chat/completions')
    LLM_MODEL = os.getenv('LLM_MODEL', 'gpt-4o-mini')
    LLM_TIMEOUT_S = _env_float('LLM_TIMEOUT_S', 60.0)
    LLM_MAX_IN_FLIGHT = _env_int('LLM_MAX_IN_FLIGHT', 2)
    GROUNDING_API_KEY_ENV = os.getenv('GROUNDING_API_KEY_ENV', 'GROUNDING_API_KEY')

    # Benchmark
    MAX_TRIAL_WORKERS = _env_int('MAX_TRIAL_WORKERS', 4)


def load_yaml_overrides(path: Optional[str]) -> Dict[str, Any]:
    """Read a YAML override file; a missing path yields an empty mapping."""
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a mapping at top level")
    return data
