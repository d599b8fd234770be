"""Matrix files and atomic output.

Text: a ``rows cols`` header line, then one line of whitespace-separated
reals per row.  Binary: the magic ``CONEMAT1``, rows and cols as
little-endian uint64, then the entries as little-endian float64, row-major.
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile

import numpy as np

from .exceptions import MatrixFormatError

MAGIC = b"CONEMAT1"
_HEADER = struct.Struct("<8sQQ")


class Format(str, enum.Enum):
    TEXT = "text"
    BINARY = "binary"


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_text(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    return "\n".join(lines) + "\n"


def format_binary(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    return _HEADER.pack(MAGIC, M.shape[0], M.shape[1]) + M.astype("<f8").tobytes()


def write_matrix(path, M, fmt=Format.TEXT):
    fmt = Format(fmt)
    atomic_write(path, format_text(M) if fmt is Format.TEXT else format_binary(M))


def _finite(M, line=None):
    if not np.all(np.isfinite(M)):
        raise MatrixFormatError("non-finite entry", line)
    return M


def parse_binary(raw):
    if len(raw) < _HEADER.size:
        raise MatrixFormatError("binary file shorter than its header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFormatError("bad magic, expected CONEMAT1")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise MatrixFormatError(
            f"binary payload has {len(raw)} bytes, header implies {expected}")
    M = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return _finite(M.astype(np.float64))


def parse_text(text):
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MatrixFormatError("missing 'rows cols' header", 1)
    head = lines[0].split()
    if len(head) != 2 or not all(h.isdigit() for h in head):
        raise MatrixFormatError("header must be two nonnegative integers", 1)
    rows, cols = int(head[0]), int(head[1])
    M = np.empty((rows, cols))
    body = lines[1:]
    for r in range(rows):
        lineno = r + 2
        if r >= len(body):
            raise MatrixFormatError(f"expected {rows} rows, found {r}", lineno)
        toks = body[r].split()
        if len(toks) != cols:
            raise MatrixFormatError(f"expected {cols} values, found {len(toks)}",
                                    lineno)
        try:
            M[r] = [float(t) for t in toks]
        except ValueError as exc:
            raise MatrixFormatError(f"not a number: {exc}", lineno) from None
        _finite(M[r], lineno)
    for extra, rest in enumerate(body[rows:]):
        if rest.strip():
            raise MatrixFormatError("unexpected data after the last row",
                                    rows + 2 + extra)
    return M


def read_matrix(path, fmt=None):
    """Read a matrix file; the format is sniffed from the magic if omitted."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if fmt is None:
        fmt = Format.BINARY if raw.startswith(MAGIC) else Format.TEXT
    if Format(fmt) is Format.BINARY:
        return parse_binary(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise MatrixFormatError("file is neither text nor CONEMAT1 binary") from None
    return parse_text(text)


def format_config(cfg):
    """Flat ``key=value`` lines in sorted key order."""
    out = []
    for key in sorted(cfg):
        v = cfg[key]
        if v is None:
            v = ""
        elif isinstance(v, enum.Enum):
            v = v.value
        elif isinstance(v, float):
            v = repr(v)
        elif isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        out.append(f"{key}={v}")
    return "\n".join(out) + "\n"


def parse_config(text):
    cfg = {}
    for i, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise MatrixFormatError("config lines must be key=value", i)
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg
