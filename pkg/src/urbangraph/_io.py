"""Output helpers: every file the tool writes starts with a ``#`` comment header."""
from __future__ import annotations

import contextlib
import os
from typing import Mapping

from . import __version__


def make_header(config: Mapping | None = None, title: str | None = None) -> str:
    lines = [f"urbangraph {__version__}"]
    if title:
        lines.append(title)
    for key in sorted(config or {}):
        lines.append(f"{key}={_fmt(config[key])}")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


@contextlib.contextmanager
def open_output(path, header: str | None = None, comment: str = "#"):
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"{comment} {line}".rstrip() + "\n")
        yield fh
