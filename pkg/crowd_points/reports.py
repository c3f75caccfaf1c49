"""CSV and JSON rendering of report tables, shared by the CLI and the luigi tasks"""
import json
import os
import sys
from typing import Optional

import pandas as pd

from crowd_points import __version__

FORMATS = ("csv", "json")


def format_table(table: pd.DataFrame, fmt: str, command: str) -> str:
    """
    CSV: header plus rows, floats with six decimals. JSON: ``{"command", "version", "rows"}``
    with missing values as null.
    """
    if fmt == "csv":
        return table.to_csv(index=False, float_format="%.6f")
    if fmt == "json":
        rows = table.astype(object).where(table.notna(), None).to_dict(orient="records")
        return json.dumps({"command": command, "version": __version__, "rows": rows}, indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}, expected one of {FORMATS}")


def write_table(table: pd.DataFrame, fmt: str, command: str, path: Optional[str] = None):
    """Writes to ``path``, or to stdout when it is None"""
    text = format_table(table, fmt, command)
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, mode="w", encoding="utf-8", newline="") as f:
        f.write(text)
