"""Binary field snapshots and delimited time series."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KCM1"
VERSION = 1


class FieldContainer:
    """Ordered set of named float64 arrays with a self-describing binary form.

    Layout (all integers little-endian):
    magic "KCM1" | u32 version | u8 little-endian flag | u32 field count |
    per field: u32 name length, utf-8 name, u8 dtype code (1 = float64),
    u32 ndim, u64 * ndim shape, raw data.
    """

    def __init__(self, fields: dict | None = None):
        self.fields = {}
        for name, arr in (fields or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        self.fields[name] = np.ascontiguousarray(arr, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    def __contains__(self, name: str) -> bool:
        return name in self.fields

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldContainer) or list(self.fields) != list(other.fields):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.fields.values(), other.fields.values())
        )

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<IBI", VERSION, 1, len(self.fields))]
        for name, arr in self.fields.items():
            key = name.encode("utf-8")
            out.append(struct.pack("<I", len(key)) + key)
            out.append(struct.pack("<BI", 1, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FieldContainer":
        if data[:4] != MAGIC:
            raise ValueError("not a field container (bad magic)")
        pos = 4
        version, little, count = struct.unpack_from("<IBI", data, pos)
        pos += struct.calcsize("<IBI")
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        dtype = "<f8" if little else ">f8"
        out = cls()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BI", data, pos)
            pos += struct.calcsize("<BI")
            if code != 1:
                raise ValueError(f"field {name!r}: unsupported element type {code}")
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            out.fields[name] = np.frombuffer(data[pos:pos + size], dtype=dtype).reshape(shape).astype(np.float64)
            pos += size
        if pos != len(data):
            raise ValueError("trailing bytes after last field")
        return out

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path) -> "FieldContainer":
        return cls.from_bytes(Path(path).read_bytes())


def format_value(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".16e")


def format_timeseries(columns, rows) -> str:
    width = len(columns)
    lines = [",".join(columns)]
    for r in rows:
        if len(r) != width:
            raise ValueError(f"row has {len(r)} entries, expected {width}")
        lines.append(",".join(format_value(x) for x in r))
    return "\n".join(lines) + "\n"


def write_timeseries(path, columns, rows) -> Path:
    """Comma-separated text: header, then rows with 17 significant digits."""
    text = format_timeseries(columns, rows)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_timeseries(path):
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        vals = []
        for tok in line.split(","):
            try:
                vals.append(float(tok))
            except ValueError:
                vals.append(tok)
        rows.append(vals)
    return columns, rows
