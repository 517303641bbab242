"""File utility helpers for SFMIPA."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


def ensure_directory(path: Union[str, Path]) -> Path:
    """Create a directory (and parents) if it doesn't exist.

    Args:
        path: Directory path to create.

    Returns:
        Path object of the created directory.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _reject_constant(name: str) -> float:
    raise ValueError(f"non-finite number '{name}' is not allowed")


def _unique_keys(pairs: List[Tuple[str, Any]]) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    for key, value in pairs:
        if key in data:
            raise ValueError(f"duplicate key '{key}'")
        data[key] = value
    return data


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON file strictly: no NaN/Infinity literals, no repeated keys.

    Raises:
        FileNotFoundError: If the file does not exist.
        json.JSONDecodeError: If the file is not valid JSON (carries line and column).
        ValueError: On a non-finite literal or a duplicate key.
    """
    with open(Path(path), "r", encoding="utf-8") as f:
        return json.load(f, parse_constant=_reject_constant, object_pairs_hook=_unique_keys)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: Union[str, Path], data: Dict[str, Any], indent: int = 2) -> None:
    """Write ``data`` with sorted keys and a trailing newline; numpy values become plain JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True, ensure_ascii=False, allow_nan=False, default=_to_builtin)
        f.write("\n")
    logger.debug("Wrote %s", path)
