"""Utility functions for SFMIPA."""

from sfmipa.utils.file_utils import (
    ensure_directory,
    read_json,
    write_json,
)
