"""Binary parameter checkpoints.

Layout (little-endian)::

    b"ECMB" | u32 version | section*

    section := u32 name_len | name (UTF-8) | u32 rows | u32 cols | f64[rows*cols]

Sections run to end of file, in the order they were written.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DimensionError, FormatError
from .tensor import Tensor

MAGIC = b"ECMB"
VERSION = 1


def encode_params(params: Mapping[str, Tensor | np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"{name}: checkpoint sections are 2-D")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_params(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    Path(path).write_bytes(encode_params(params))


def decode_params(buf: bytes, path="<bytes>") -> dict[str, np.ndarray]:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(path, "bad magic, expected ECMB", 0)
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(path, f"unsupported checkpoint version {version}", 4)
    out: dict[str, np.ndarray] = {}
    pos = 8
    while pos < len(buf):
        start = pos
        if pos + 4 > len(buf):
            raise FormatError(path, "truncated section header", pos)
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + n + 8 > len(buf):
            raise FormatError(path, "truncated section name", start)
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(path, "section name is not UTF-8", pos) from exc
        pos += n
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = rows * cols * 8
        if pos + nbytes > len(buf):
            raise FormatError(path, f"truncated data for section {name!r}", pos)
        if name in out:
            raise FormatError(path, f"duplicate section {name!r}", start)
        out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    return out


def load_params(path) -> dict[str, np.ndarray]:
    path = Path(path)
    return decode_params(path.read_bytes(), path)


def assign_params(target: Mapping[str, Tensor], values: Mapping[str, np.ndarray], path="<checkpoint>", strict: bool = True) -> None:
    """Copy checkpoint arrays into existing tensors, validating names and shapes.

    With ``strict`` every target must be present; extra sections are always
    ignored so one file can carry several parameter groups.
    """
    for name, t in target.items():
        if name not in values:
            if strict:
                raise FormatError(path, f"missing section {name!r}")
            continue
        arr = values[name]
        if arr.shape != t.shape:
            raise FormatError(path, f"section {name!r} has shape {arr.shape}, config expects {t.shape}")
        t.data[...] = arr
