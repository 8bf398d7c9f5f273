"""
console.py - Coloured terminal logging for the CLI and library progress lines.

Everything goes to stderr so CSV written to stdout stays clean. `info`,
`success` and `dim` lines are only shown in verbose mode; `warn` and `error`
always are.

Usage:
    from sps_grf.console import log, configure
    configure(verbose=True)
    log("Stage I converged", "success")
"""

from __future__ import annotations

import sys

# Colors
GREEN = "\033[92m"
YELLOW = "\033[93m"
RED = "\033[91m"
CYAN = "\033[96m"
DIM = "\033[2m"
RESET = "\033[0m"

_CLI_SEPARATOR_WIDTH = 50
_ALWAYS_SHOWN = frozenset({"warn", "error"})

_state = {"verbose": False}


def configure(verbose: bool) -> None:
    """Toggle verbose output for the whole process."""
    _state["verbose"] = bool(verbose)


def is_verbose() -> bool:
    return _state["verbose"]


def log(msg: str, level: str = "info") -> None:
    """Print a coloured log line to stderr.

    Args:
        msg: Message text.
        level: One of info, success, warn, error, dim.
    """
    if level not in _ALWAYS_SHOWN and not _state["verbose"]:
        return
    colors = {"info": CYAN, "success": GREEN, "warn": YELLOW, "error": RED, "dim": DIM}
    print(f"{colors.get(level, RESET)}{msg}{RESET}", file=sys.stderr)


def banner(title: str) -> None:
    """Separator-framed section title (verbose only)."""
    log("=" * _CLI_SEPARATOR_WIDTH, "dim")
    log(title, "info")
    log("=" * _CLI_SEPARATOR_WIDTH, "dim")
