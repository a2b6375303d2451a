"""Logging helper that writes tagged lines to stderr."""

from __future__ import annotations

import sys
from typing import Any

_quiet = False


def set_quiet(quiet: bool) -> None:
    global _quiet
    _quiet = bool(quiet)


def log(message: Any) -> None:
    if _quiet:
        return
    text = str(message)
    # stdout is reserved for command output.
    try:
        print(text, file=sys.stderr, flush=True)
    except Exception:
        pass
