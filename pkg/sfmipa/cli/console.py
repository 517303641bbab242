"""Terminal colouring and summary printing for the SFMIPA CLI."""

from typing import Sequence

import numpy as np


# ANSI color codes for terminal output
class Colors:
    """Terminal color codes for pretty output."""
    HEADER = "\033[95m"
    CYAN = "\033[96m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    RED = "\033[91m"
    BOLD = "\033[1m"
    DIM = "\033[2m"
    RESET = "\033[0m"


def colorize(text: str, color: str) -> str:
    """Wrap text in ANSI color codes."""
    return f"{color}{text}{Colors.RESET}"


def bold(text: str) -> str:
    return colorize(text, Colors.BOLD)


def success(text: str) -> str:
    return colorize(text, Colors.GREEN)


def warning(text: str) -> str:
    return colorize(text, Colors.YELLOW)


def error(text: str) -> str:
    return colorize(text, Colors.RED)


def info(text: str) -> str:
    return colorize(text, Colors.CYAN)


def header(text: str) -> str:
    return colorize(text, Colors.HEADER + Colors.BOLD)


def dim(text: str) -> str:
    return colorize(text, Colors.DIM)


def fmt_vector(values: Sequence[float], precision: int = 6) -> str:
    return np.array2string(np.asarray(values, dtype=float), precision=precision, separator=", ")


def print_banner() -> None:
    print()
    print(header("  SFMIPA"))
    print(f"  {dim('Timeout-controlled stochastic flow model with IPA goodput gradients')}")
    print()


def print_section(title: str) -> None:
    print()
    print("  " + header(title))
    print("  " + dim("-" * 50))


def print_ok(message: str) -> None:
    print("  " + success("[OK]") + " " + message)


def print_warn(message: str) -> None:
    print("  " + warning("[WARN]") + " " + message)


def print_fail(message: str) -> None:
    print("  " + error("[FAIL]") + " " + message)


def print_files(paths: Sequence[object]) -> None:
    for path in paths:
        print("    " + dim("wrote") + " " + info(str(path)))
