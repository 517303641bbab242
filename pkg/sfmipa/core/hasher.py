"""Fingerprints for scenarios and run outputs.

Scenarios are hashed through a canonical JSON form, so two files that
differ only in key order or whitespace share a fingerprint. Output files
are hashed by content for the run manifest.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Sequence, Union

from sfmipa.models.scenario import Scenario

logger = logging.getLogger(__name__)


def compute_file_hash(file_path: Union[str, Path], chunk_size: int = 8192) -> str:
    """SHA-256 of a file's contents.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")

    sha256 = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            sha256.update(chunk)
    return sha256.hexdigest()


def canonicalize_config(config: Dict[str, Any]) -> str:
    """Deterministic JSON string: sorted keys, no whitespace."""
    return json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def scenario_hash(s: Scenario) -> str:
    """SHA-256 of the canonical JSON form of a scenario."""
    digest = hashlib.sha256(canonicalize_config(s.to_dict()).encode("utf-8")).hexdigest()
    logger.debug("Scenario hash: %s", digest)
    return digest


def run_hash(scenario_digest: str, command: str, seeds: Sequence[int]) -> str:
    """Identifier of one CLI run: SHA-256(scenario hash + command + seeds)."""
    combined = scenario_digest + command + ",".join(str(seed) for seed in seeds)
    return hashlib.sha256(combined.encode("utf-8")).hexdigest()
