"""Python bindings for the cbflab analysis library."""

import json

from ._core import (
    ConfigError,
    Expression,
    ParseError,
    SafeSet,
    __version__,
    commands,
    forward_invariance,
    locate_zeros,
    parse_expr,
)
from ._core import _run_file, _run_text


def run(command, config=None, path=None, export_dir=""):
    """Run one CLI command on a config given as YAML text or a file path.

    Returns (report, exit_code) with the report decoded to a dict.
    """
    if (config is None) == (path is None):
        raise ValueError("pass exactly one of config or path")
    if path is not None:
        text, code = _run_file(str(path), command, export_dir)
    else:
        text, code = _run_text(config, command, export_dir)
    return json.loads(text), code


__all__ = [
    "ConfigError",
    "Expression",
    "ParseError",
    "SafeSet",
    "__version__",
    "commands",
    "forward_invariance",
    "locate_zeros",
    "parse_expr",
    "run",
]
