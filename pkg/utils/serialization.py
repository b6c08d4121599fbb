"""
JSON helpers shared by file loaders and report writers.
"""
from pathlib import Path
from typing import Any, Union

import orjson
from pydantic import ValidationError

from utils.errors import ConfigError

REPORT_DECIMALS = 6


def read_json_file(path: Union[str, Path]) -> Any:
    """Load a JSON file, turning I/O and syntax problems into ConfigError."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read file ({e.strerror or e})") from e
    try:
        return orjson.loads(data)
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e


def format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def round_floats(value: Any, ndigits: int = REPORT_DECIMALS) -> Any:
    if isinstance(value, float):
        return round(float(value), ndigits)
    if isinstance(value, dict):
        return {k: round_floats(v, ndigits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v, ndigits) for v in value]
    return value


def dumps(value: Any, indent: bool = False) -> bytes:
    """Deterministic JSON: sorted keys, numpy scalars accepted."""
    option = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    if indent:
        option |= orjson.OPT_INDENT_2
    return orjson.dumps(value, option=option)
