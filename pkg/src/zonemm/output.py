"""CSV emission helpers: shortest round-trip floats, comma delimiter,
mandatory header, locale-independent."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

__all__ = ["fmt", "write_csv", "read_csv"]


def fmt(x) -> str:
    """Shortest decimal string that round-trips the value; blank for NaN."""
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return "True" if x else "False"
    if isinstance(x, (int,)) or (hasattr(x, "dtype") and getattr(x, "dtype").kind in "iu"):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return ""
    return repr(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Parse a file written by write_csv; values stay as strings so a
    write -> read -> write cycle is byte-identical."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = lines[0].split(",") if lines else []
    return header, [line.split(",") for line in lines[1:]]
