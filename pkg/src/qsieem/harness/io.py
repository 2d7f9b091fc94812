"""CSV result files with a provenance header, written atomically."""

import csv
import io
import os
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def render_csv(header, columns, rows):
    """Text of a CSV file whose first lines are ``# key = value``."""
    buf = io.StringIO()
    for key, val in header:
        buf.write(f"# {key} = {_fmt(val)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path, header, columns, rows):
    atomic_write(path, render_csv(header, columns, rows))


def read_csv(path):
    """(header dict, column names, list of row dicts with raw strings)."""
    header, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = val.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    cols = next(reader, [])
    rows = [dict(zip(cols, r)) for r in reader if r]
    return header, cols, rows
