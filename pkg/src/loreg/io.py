"""Plain-text CSV matrices and small JSON helpers.

Matrices are written one row per line, comma separated, using Python's
shortest round-trip float repr, so ``read_matrix(write_matrix(M)) == M``
bit for bit.
"""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CSVParseError


def format_float(x):
    x = float(x)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def write_matrix(path, M, header=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in M:
            fh.write(",".join(format_float(v) for v in row) + "\n")
    return path


def read_matrix(path, header=False, allow_nan=False):
    """Read a numeric CSV matrix.

    Parameters
    ----------
    path : str or Path
    header : bool
        Skip the first line when True.
    allow_nan : bool
        Accept ``nan`` tokens (used for undefined variance entries).

    Returns
    -------
    ndarray of shape (rows, cols)

    Raises
    ------
    CSVParseError
        On ragged rows or non-numeric tokens; rows and columns are reported
        1-based, counting the header line if present.
    """
    rows = []
    width = None
    with Path(path).open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not tok.strip() for tok in rec):
                continue
            vals = []
            for colno, tok in enumerate(rec, start=1):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise CSVParseError(f"non-numeric token {tok!r}", lineno, colno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise CSVParseError(f"expected {width} values, found {len(vals)}", lineno)
            rows.append(vals)
    if not rows:
        raise CSVParseError("no data rows")
    M = np.array(rows, dtype=float)
    bad_mask = np.isinf(M) if allow_nan else ~np.isfinite(M)
    if bad_mask.any():
        bad = np.argwhere(bad_mask)[0]
        raise CSVParseError("non-finite value", int(bad[0]) + 1 + int(header), int(bad[1]) + 1)
    return M


def dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    Path(path).write_text(text)
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def to_jsonable(x):
    """Convert numpy scalars/arrays (NaN -> None) into JSON-safe Python values."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not np.isfinite(x) else x
    if isinstance(x, np.bool_):
        return bool(x)
    return x
