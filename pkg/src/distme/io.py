"""Delimited-text tables with JSON schema sidecars."""

from __future__ import annotations

import csv
import json
import os

import numpy as np

__all__ = [
    "MissingValueError",
    "read_table",
    "write_table",
    "write_keyvalue",
    "read_keyvalue",
    "format_value",
    "schema_path",
]

MISSING = {"", "na", "nan", "null", "none"}


class MissingValueError(ValueError):
    pass


def schema_path(path) -> str:
    return f"{path}.schema.json"


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _column(raw):
    try:
        return np.array([float(v) if v.strip().lower() not in MISSING else np.nan for v in raw])
    except ValueError:
        return np.array(raw, dtype=object)


def read_table(path, delimiter=","):
    """Read a headed delimited file into an ordered ``{name: array}`` mapping.

    Numeric columns become float arrays (missing entries as NaN); anything
    else stays as an object array of strings.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names in header")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    cols = list(zip(*rows)) if rows else [()] * len(header)
    return {h: _column(list(c)) for h, c in zip(header, cols)}


def write_table(path, columns, data, description=None, descriptions=None, delimiter=","):
    """Write ``data`` (a mapping of equal-length columns or a list of row dicts).

    A ``<path>.schema.json`` sidecar records column order and meaning.
    """
    columns = list(columns)
    if isinstance(data, dict):
        n = len(data[columns[0]]) if columns else 0
        rows = ([data[c][i] for c in columns] for i in range(n))
    else:
        rows = ([r[c] for c in columns] for r in data)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(v) for v in r])
    schema = {
        "file": os.path.basename(path),
        "delimiter": delimiter,
        "description": description or "",
        "columns": [
            {"name": c, "description": (descriptions or {}).get(c, "")} for c in columns
        ],
    }
    with open(schema_path(path), "w") as fh:
        json.dump(schema, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_keyvalue(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {format_value(v)}\n")


def read_keyvalue(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out
