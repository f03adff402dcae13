"""Versioned little-endian container used by both model files.

Layout: 4-byte magic, u16 format version, u32 header length, UTF-8 JSON
header (sorted keys), then a stream of scalars and typed arrays.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

VERSION = 1
_DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8")}


class FormatError(ValueError):
    pass


class Writer:
    def __init__(self, magic: bytes):
        self._buf = io.BytesIO()
        self._buf.write(magic)
        self._buf.write(struct.pack("<H", VERSION))

    def header(self, obj) -> None:
        raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
        self._buf.write(struct.pack("<I", len(raw)))
        self._buf.write(raw)

    def u32(self, v: int) -> None:
        self._buf.write(struct.pack("<I", v))

    def i64(self, v: int) -> None:
        self._buf.write(struct.pack("<q", v))

    def f64(self, v: float) -> None:
        self._buf.write(struct.pack("<d", v))

    def array(self, a: np.ndarray) -> None:
        a = np.ascontiguousarray(a)
        code = b"f" if a.dtype.kind == "f" else b"i"
        a = a.astype(_DTYPES[code], copy=False)
        self._buf.write(code)
        self._buf.write(struct.pack("<B", a.ndim))
        self._buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        self._buf.write(a.tobytes())

    def getvalue(self) -> bytes:
        return self._buf.getvalue()


class Reader:
    def __init__(self, data: bytes, magic: bytes):
        if data[:4] != magic:
            raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
        self._data = data
        self._pos = 4
        (version,) = self._unpack("<H")
        if version != VERSION:
            raise FormatError(f"unsupported format version {version}")

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise FormatError("truncated model file")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def _unpack(self, fmt: str):
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))

    def header(self):
        (n,) = self._unpack("<I")
        return json.loads(self._take(n).decode())

    def u32(self) -> int:
        return self._unpack("<I")[0]

    def i64(self) -> int:
        return self._unpack("<q")[0]

    def f64(self) -> float:
        return self._unpack("<d")[0]

    def array(self) -> np.ndarray:
        code = self._take(1)
        if code not in _DTYPES:
            raise FormatError(f"unknown array type {code!r}")
        (ndim,) = self._unpack("<B")
        shape = self._unpack(f"<{ndim}Q")
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        raw = self._take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    def done(self) -> None:
        if self._pos != len(self._data):
            raise FormatError(f"{len(self._data) - self._pos} trailing bytes")
