"""Deterministic JSON and CSV emission.

All floating point numbers are written with 17 significant digits so that
values round-trip exactly and reruns with identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import math
from typing import Any, IO

import numpy as np


def format_float(x: float) -> str:
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        raise ValueError("non-finite float cannot be serialized: %r" % x)
    s = format(float(x), ".17g")
    # JSON requires a leading digit and no bare trailing dot
    if s.startswith("."):
        s = "0" + s
    elif s.startswith("-."):
        s = "-0" + s[1:]
    return s


def _encode(obj: Any, indent: int, level: int, out: list[str]) -> None:
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        import json as _json

        out.append(_json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), indent, level, out)
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for k, item in enumerate(obj):
            out.append(pad_in)
            _encode(item, indent, level + 1, out)
            out.append(",\n" if k + 1 < len(obj) else "\n")
        out.append(pad + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        import json as _json

        out.append("{\n")
        items = list(obj.items())
        for k, (key, val) in enumerate(items):
            if not isinstance(key, str):
                raise TypeError("JSON object keys must be strings, got %r" % (key,))
            out.append(pad_in + _json.dumps(key) + ": ")
            _encode(val, indent, level + 1, out)
            out.append(",\n" if k + 1 < len(items) else "\n")
        out.append(pad + "}")
    else:
        raise TypeError("cannot serialize %r of type %s" % (obj, type(obj).__name__))


def dumps(obj: Any, indent: int = 2) -> str:
    out: list[str] = []
    _encode(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def dump(obj: Any, path: str, indent: int = 2) -> None:
    text = dumps(obj, indent=indent)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def write_csv(path_or_fh: str | IO[str], header: list[str], rows: list[list]) -> None:
    """Write rows with deterministic float formatting and LF newlines."""

    def cell(v) -> str:
        if isinstance(v, (float, np.floating)):
            return format_float(float(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_fh, str):
        with open(path_or_fh, "w", newline="\n") as fh:
            fh.write(text)
    else:
        path_or_fh.write(text)
