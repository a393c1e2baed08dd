"""Matrix files, result tables, reports and key = value config files.

Binary matrix layout: b"BPRM", version byte 1, rows and cols as unsigned
64-bit little-endian, then rows*cols little-endian float64 in row-major order.
All writers go through a temp file in the target directory and an atomic
rename, so a failed run never leaves a partial file behind.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"BPRM"
VERSION = 1
_HEADER = struct.Struct("<QQ")
# refuse headers that would ask for more than 2**31 entries
MAX_ENTRIES = 2 ** 31


class MatrixFormatError(ValueError):
    """Malformed matrix file; the message names the offending position."""


class ConfigError(ValueError):
    pass


def _format_of(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise ValueError(f"unknown matrix format {fmt!r}")
        return fmt
    return "bin" if Path(path).suffix.lower() == ".bin" else "csv"


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Open a temp file next to `path`; rename it over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": "", "encoding": "utf-8"})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _parse_csv(text: str) -> np.ndarray:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MatrixFormatError("empty matrix file")
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise MatrixFormatError(f"row {lineno}: {len(fields)} values, expected {width}")
        row = []
        for col, field in enumerate(fields, start=1):
            try:
                val = float(field)
            except ValueError:
                raise MatrixFormatError(f"row {lineno}, column {col}: cannot parse {field.strip()!r}") from None
            if not math.isfinite(val):
                raise MatrixFormatError(f"row {lineno}, column {col}: non-finite value")
            row.append(val)
        rows.append(row)
    return np.array(rows, dtype=np.float64)


def _parse_bin(data: bytes) -> np.ndarray:
    head = len(MAGIC) + 1 + _HEADER.size
    if len(data) < head:
        raise MatrixFormatError(f"byte {len(data)}: truncated header")
    if data[:4] != MAGIC:
        raise MatrixFormatError("byte 0: bad magic, expected b'BPRM'")
    if data[4] != VERSION:
        raise MatrixFormatError(f"byte 4: unsupported version {data[4]}")
    rows, cols = _HEADER.unpack_from(data, 5)
    if rows == 0 or cols == 0:
        raise MatrixFormatError(f"byte 5: empty dimensions {rows}x{cols}")
    if rows * cols > MAX_ENTRIES:
        raise MatrixFormatError(f"byte 5: dimensions {rows}x{cols} overflow the size limit")
    expected = head + 8 * rows * cols
    if len(data) != expected:
        raise MatrixFormatError(f"byte {min(len(data), expected)}: payload has {len(data) - head} bytes, "
                                f"expected {expected - head}")
    arr = np.frombuffer(data, dtype="<f8", offset=head).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise MatrixFormatError(f"byte {head + 8 * bad}: non-finite value")
    return arr


def read_matrix(path, fmt=None) -> np.ndarray:
    fmt = _format_of(path, fmt)
    if fmt == "bin":
        return _parse_bin(Path(path).read_bytes())
    return _parse_csv(Path(path).read_text(encoding="utf-8"))


def write_matrix(m, path, fmt=None) -> None:
    fmt = _format_of(path, fmt)
    arr = np.ascontiguousarray(m, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError("matrix must be 2-d")
    if fmt == "bin":
        with atomic_open(path, "wb") as fh:
            fh.write(MAGIC + bytes([VERSION]) + _HEADER.pack(*arr.shape))
            fh.write(arr.tobytes())
    else:
        with atomic_open(path) as fh:
            for row in arr:
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(rows, path, columns=None) -> None:
    """Comma-separated table with one header row."""
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    with atomic_open(path) as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row.get(c)) for c in columns) + "\n")


def read_table(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        return val if math.isfinite(val) else str(val)
    return obj


def write_report(report: dict, path) -> None:
    with atomic_open(path) as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out
