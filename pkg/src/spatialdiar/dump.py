"""Versioned binary matrix container with a text header.

Layout::

    SDDUMP 1
    meta <key> <value>            (any number, value may contain spaces)
    array <name> <dtype> <d1>x<d2>x...
    ...
    end
    <raw little-endian C-order bytes of every array, in header order>

Scalars use the shape ``-``.  Supported dtypes: float64, float32, int64,
int32, uint8.  Used for feature dumps and model checkpoints.
"""

import os
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = "SDDUMP"
VERSION = 1
DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "int32": "<i4", "uint8": "u1"}


class DumpFormatError(ValueError):
    pass


def write_dump(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, object] = None) -> None:
    """Write atomically (temp file plus rename)."""
    header = [f"{MAGIC} {VERSION}"]
    for key, value in (meta or {}).items():
        _check_token(key, "meta key")
        text = str(value)
        if "\n" in text:
            raise ValueError(f"meta value for {key!r} contains a newline")
        header.append(f"meta {key} {text}")
    blobs = []
    for name, arr in arrays.items():
        _check_token(name, "array name")
        a = np.asarray(arr)
        if a.dtype == bool:
            a = a.astype(np.uint8)
        kind = a.dtype.name
        if kind not in DTYPES:
            raise ValueError(f"array {name!r}: unsupported dtype {kind}")
        shape = "x".join(str(d) for d in a.shape) if a.ndim else "-"
        header.append(f"array {name} {kind} {shape}")
        blobs.append(np.ascontiguousarray(a, dtype=DTYPES[kind]).tobytes())
    header.append("end")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_dump(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Arrays and meta strings of a dump file."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    lines = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise DumpFormatError(f"{path}: header not terminated by 'end'")
        try:
            line = data[pos:nl].decode("utf-8")
        except UnicodeDecodeError:
            raise DumpFormatError(f"{path}: header line {len(lines) + 1} is not text") from None
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise DumpFormatError(f"{path}: not a {MAGIC} file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise DumpFormatError(f"{path}: bad version line {lines[0]!r}") from None
    if version != VERSION:
        raise DumpFormatError(f"{path}: unsupported version {version} (expected {VERSION})")
    meta, specs = {}, []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(" ", 2)
        if parts[0] == "meta" and len(parts) >= 2:
            meta[parts[1]] = parts[2] if len(parts) > 2 else ""
        elif parts[0] == "array" and len(parts) == 3 and len(parts[2].split()) == 2:
            kind, shape_txt = parts[2].split()
            if kind not in DTYPES:
                raise DumpFormatError(f"{path}: line {lineno}: unsupported dtype {kind}")
            try:
                shape = () if shape_txt == "-" else tuple(int(d) for d in shape_txt.split("x"))
            except ValueError:
                raise DumpFormatError(f"{path}: line {lineno}: bad shape {shape_txt!r}") from None
            if any(d < 0 for d in shape):
                raise DumpFormatError(f"{path}: line {lineno}: negative dimension")
            specs.append((parts[1], kind, shape))
        else:
            raise DumpFormatError(f"{path}: line {lineno}: cannot parse {line!r}")
    arrays = {}
    for name, kind, shape in specs:
        dt = np.dtype(DTYPES[kind])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise DumpFormatError(f"{path}: truncated data for array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                                     offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    if pos != len(data):
        raise DumpFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays, meta


def _check_token(s: str, what: str) -> None:
    if not s or any(c.isspace() for c in s):
        raise ValueError(f"{what} {s!r} must be a non-empty token without whitespace")
