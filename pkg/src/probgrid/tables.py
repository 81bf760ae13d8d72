"""Versioned columnar text tables.

Layout of every table written by the package::

    # probgrid-table: 1
    # key: <json value>
    # ...
    col_a<TAB>col_b<TAB>...
    v<TAB>v<TAB>...

Floats are written with ``repr`` so reading back is bit-exact; missing
values are written as ``NA``.
"""

import hashlib
import io
import json
import os

import numpy as np
import pandas as pd

from .errors import ParseError

TABLE_VERSION = 1
_MAGIC = "# probgrid-table:"


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _format_column(values):
    arr = np.asarray(values)
    if arr.dtype.kind == "f":
        return ["NA" if np.isnan(v) else repr(float(v)) for v in arr]
    if arr.dtype.kind in "iub":
        return [str(int(v)) for v in arr]
    return ["NA" if v is None else str(v) for v in values]


def table_bytes(columns, meta=None):
    """Serialise ``columns`` (an ordered mapping name -> sequence)."""
    lines = [f"{_MAGIC} {TABLE_VERSION}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {json.dumps(value, sort_keys=True)}")
    names = list(columns)
    lines.append("\t".join(names))
    cols = [_format_column(columns[n]) for n in names]
    nrows = {len(c) for c in cols}
    if len(nrows) > 1:
        raise ValueError(f"ragged columns: lengths {sorted(nrows)}")
    lines.extend("\t".join(row) for row in zip(*cols))
    return ("\n".join(lines) + "\n").encode()


def write_table(path, columns, meta=None):
    """Write a table atomically and return its sha256."""
    data = table_bytes(columns, meta)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return sha256_bytes(data)


def read_table(path, string_columns=()):
    """Return ``(meta, DataFrame)``.

    Columns named in ``string_columns`` are kept as text; all others are
    parsed as numbers with round-trip float precision.
    """
    with open(path, "r") as fh:
        text = fh.read()
    head, _, _ = text.partition("\n")
    if not head.startswith(_MAGIC):
        raise ParseError("not a probgrid table (missing version header)", line=1, source=path)
    meta = {}
    body_start = 0
    lines = text.split("\n")
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("# "):
            body_start = i
            break
        key, sep, value = line[2:].partition(": ")
        if not sep:
            raise ParseError("malformed metadata line", line=i + 1, source=path)
        meta[key] = json.loads(value)
    body = "\n".join(lines[body_start:])
    dtype = {c: str for c in string_columns}
    frame = pd.read_csv(
        io.StringIO(body), sep="\t", na_values=["NA"], keep_default_na=False,
        float_precision="round_trip", dtype=dtype,
    )
    return meta, frame
