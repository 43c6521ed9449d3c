"""Little-endian length-prefixed field codec shared by the wire formats."""

from __future__ import annotations

import struct

import numpy as np


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<B", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<Q", v))
        return self

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def bits(self, bits: np.ndarray) -> "Writer":
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        self.u32(bits.size)
        self._parts.append(np.packbits(bits, bitorder="little").tobytes())
        return self

    def ints(self, values: np.ndarray, dtype: str = "<u4") -> "Writer":
        values = np.asarray(values).reshape(-1)
        self.u32(values.size)
        self._parts.append(values.astype(dtype).tobytes())
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.pos = offset

    def _take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated field")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def bits(self) -> np.ndarray:
        n = self.u32()
        raw = np.frombuffer(self._take((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:n].copy()

    def ints(self, dtype: str = "<u4") -> np.ndarray:
        n = self.u32()
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self._take(n * width), dtype=dtype).astype(np.int64)

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_done(self) -> None:
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
