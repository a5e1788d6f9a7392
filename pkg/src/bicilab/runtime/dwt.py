"""DWT v1 weight files: a text manifest followed by raw little-endian float64 data.

Layout::

    DWT1
    params=<count>
    <name> <shape, e.g. 64x1x32 or scalar> <byte offset> <element count>
    ...
    END
    <raw bytes>

Byte offsets are relative to the first byte after the ``END`` line.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np


class WeightFileError(ValueError):
    pass


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(s: str) -> tuple[int, ...]:
    return () if s == "scalar" else tuple(int(d) for d in s.split("x"))


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    lines = ["DWT1", f"params={len(params)}"]
    blobs, offset = [], 0
    for name, arr in params.items():
        if not name or any(c.isspace() for c in name):
            raise WeightFileError(f"invalid parameter name {name!r}")
        a = np.asarray(arr, dtype="<f8")
        lines.append(f"{name} {_shape_str(a.shape)} {offset} {a.size}")
        blobs.append(a.tobytes())
        offset += a.nbytes
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    end = blob.find(b"\nEND\n")
    if not blob.startswith(b"DWT1\n") or end < 0:
        raise WeightFileError("not a DWT v1 file")
    header = blob[:end].decode("ascii").split("\n")
    data = blob[end + len(b"\nEND\n"):]
    try:
        count = int(header[1].split("=", 1)[1])
    except (IndexError, ValueError) as exc:
        raise WeightFileError("malformed DWT parameter count") from exc
    entries = header[2:]
    if len(entries) != count:
        raise WeightFileError(f"DWT manifest lists {len(entries)} params, header says {count}")
    out = {}
    for line in entries:
        name, shape_s, off_s, n_s = line.split(" ")
        shape, off, n = _parse_shape(shape_s), int(off_s), int(n_s)
        if int(np.prod(shape)) != n or off + 8 * n > len(data):
            raise WeightFileError(f"DWT entry {name} is inconsistent with the data block")
        out[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
    return out


def save(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
