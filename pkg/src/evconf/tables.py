"""Delimiter-separated report files.

All logs and reports share one shape: '#'-prefixed comment lines carrying
provenance, a tab-separated header row, then one row per record.  Floats
are serialized with repr() so files round-trip bit-exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParseError

__all__ = ["format_value", "write_table", "read_table"]


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_table(path, columns, rows, comments=()) -> None:
    """Rows are dicts keyed by column name; missing keys are an error."""
    lines = [f"# {c}" for c in comments]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(format_value(row[c]) for c in columns))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_table(path) -> tuple[list[str], list[str], list[dict[str, str]]]:
    """Returns (comments, columns, rows); values stay strings for the
    caller to interpret."""
    comments, columns, rows = [], None, []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if columns is not None:
                    raise ParseError("comment after header", line=lineno)
                comments.append(line[1:].strip())
                continue
            cells = line.split("\t")
            if columns is None:
                columns = cells
                continue
            if len(cells) != len(columns):
                raise ParseError(
                    f"expected {len(columns)} columns, found {len(cells)}",
                    line=lineno,
                )
            rows.append(dict(zip(columns, cells)))
    if columns is None:
        raise ParseError("missing header row", line=1)
    return comments, columns, rows
