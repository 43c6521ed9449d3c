"""Protocol messages and their canonical frame encoding.

Frame layout (little-endian)::

    magic "ARNA" | version u8 | session id (16 bytes) | seq u32 | tag u8 | body length u32 | body

The body is the message's fields, each length-prefixed by the shared codec.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np

from .codec import DecodeError, Reader, Writer

MAGIC = b"ARNA"
VERSION = 1
SESSION_ID_BYTES = 16
HEADER = struct.Struct("<4sB16sIBI")


class MalformedFrame(ValueError):
    pass


class VersionMismatch(MalformedFrame):
    pass


class SequenceGap(MalformedFrame):
    def __init__(self, expected: int, got: int):
        self.expected, self.got = expected, got
        super().__init__(f"expected sequence number {expected}, got {got}")


def _write_matrix(w: Writer, M: np.ndarray, dtype: str = "<u4") -> None:
    M = np.atleast_2d(np.asarray(M))
    w.u32(M.shape[0]).u32(M.shape[1])
    w.ints(M, dtype)


def _read_matrix(rd: Reader, dtype: str = "<u4") -> np.ndarray:
    rows, cols = rd.u32(), rd.u32()
    data = rd.ints(dtype)
    if data.size != rows * cols:
        raise DecodeError("matrix size mismatch")
    return data.reshape(rows, cols)


class Message:
    TAG: ClassVar[int]

    def write(self, w: Writer) -> None:
        raise NotImplementedError

    @classmethod
    def read(cls, rd: Reader) -> "Message":
        raise NotImplementedError

    def body(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.body() == other.body()

    __hash__ = None

    @property
    def name(self) -> str:
        return type(self).__name__


@dataclass(eq=False)
class ProverKeyCommit(Message):
    TAG = 1
    z: np.ndarray

    def write(self, w):
        w.ints(self.z)

    @classmethod
    def read(cls, rd):
        return cls(rd.ints())


@dataclass(eq=False)
class CoinCommit(Message):
    TAG = 2
    c: np.ndarray

    def write(self, w):
        w.ints(self.c)

    @classmethod
    def read(cls, rd):
        return cls(rd.ints())


@dataclass(eq=False)
class ProverCoins(Message):
    TAG = 3
    r_p: np.ndarray

    def write(self, w):
        w.bits(self.r_p)

    @classmethod
    def read(cls, rd):
        return cls(rd.bits())


@dataclass(eq=False)
class EtcffKeys(Message):
    TAG = 4
    A: list[np.ndarray]
    v: list[np.ndarray]

    def write(self, w):
        w.u32(len(self.A))
        for A, v in zip(self.A, self.v):
            _write_matrix(w, A)
            w.ints(v)

    @classmethod
    def read(cls, rd):
        A, v = [], []
        for _ in range(rd.u32()):
            A.append(_read_matrix(rd))
            v.append(rd.ints())
        return cls(A, v)


@dataclass(eq=False)
class CommitStrings(Message):
    TAG = 5
    y: np.ndarray  # (2nN, m_lwe)

    def write(self, w):
        _write_matrix(w, self.y)

    @classmethod
    def read(cls, rd):
        return cls(_read_matrix(rd))


@dataclass(eq=False)
class RoundChoice(Message):
    TAG = 6
    hadamard: bool

    def write(self, w):
        w.u8(1 if self.hadamard else 0)

    @classmethod
    def read(cls, rd):
        v = rd.u8()
        if v > 1:
            raise DecodeError("round choice must be 0 or 1")
        return cls(bool(v))


@dataclass(eq=False)
class TestReveal(Message):
    TAG = 7
    beta: np.ndarray
    x: np.ndarray  # (2nN, w_pre) bits

    def write(self, w):
        w.bits(self.beta)
        w.u32(self.x.shape[1] if self.x.ndim == 2 else 0).bits(self.x)

    @classmethod
    def read(cls, rd):
        beta = rd.bits()
        width = rd.u32()
        x = rd.bits()
        return cls(beta, x.reshape(-1, width) if width else x.reshape(len(beta), 0))


@dataclass(eq=False)
class HadamardReveal(Message):
    TAG = 8
    beta: np.ndarray
    d: np.ndarray  # (2nN, w_pre) bits

    def write(self, w):
        w.bits(self.beta)
        w.u32(self.d.shape[1] if self.d.ndim == 2 else 0).bits(self.d)

    @classmethod
    def read(cls, rd):
        beta = rd.bits()
        width = rd.u32()
        d = rd.bits()
        return cls(beta, d.reshape(-1, width) if width else d.reshape(len(beta), 0))


@dataclass(eq=False)
class VerifierOpen(Message):
    TAG = 9
    r_v: np.ndarray
    s_v: np.ndarray
    outcomes: np.ndarray
    trapdoors: list[np.ndarray]

    def write(self, w):
        w.bits(self.r_v).bits(self.s_v).bits(self.outcomes)
        w.u32(len(self.trapdoors))
        for R in self.trapdoors:
            _write_matrix(w, R, "<i4")

    @classmethod
    def read(cls, rd):
        r_v, s_v, out = rd.bits(), rd.bits(), rd.bits()
        return cls(r_v, s_v, out, [_read_matrix(rd, "<i4") for _ in range(rd.u32())])


@dataclass(eq=False)
class NpzkMsg(Message):
    TAG = 10
    COMMIT: ClassVar[int] = 0
    CHALLENGE: ClassVar[int] = 1
    RESPONSE: ClassVar[int] = 2
    DEBUG: ClassVar[int] = 3
    kind: int
    payload: bytes

    def write(self, w):
        w.u8(self.kind).blob(self.payload)

    @classmethod
    def read(cls, rd):
        kind = rd.u8()
        if kind > 3:
            raise DecodeError("unknown npzk message kind")
        return cls(kind, rd.blob())


@dataclass(eq=False)
class Abort(Message):
    TAG = 11
    reason: str

    def write(self, w):
        w.blob(self.reason.encode())

    @classmethod
    def read(cls, rd):
        try:
            return cls(rd.blob().decode())
        except UnicodeDecodeError as exc:
            raise DecodeError("abort reason is not UTF-8") from exc


@dataclass(eq=False)
class Verdict(Message):
    TAG = 12
    accept: bool

    def write(self, w):
        w.u8(1 if self.accept else 0)

    @classmethod
    def read(cls, rd):
        v = rd.u8()
        if v > 1:
            raise DecodeError("verdict must be 0 or 1")
        return cls(bool(v))


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.TAG: cls
    for cls in (ProverKeyCommit, CoinCommit, ProverCoins, EtcffKeys, CommitStrings, RoundChoice,
                TestReveal, HadamardReveal, VerifierOpen, NpzkMsg, Abort, Verdict)
}


@dataclass(frozen=True)
class Frame:
    session_id: bytes
    seq: int
    message: Message


def frame_encode(message: Message, session_id: bytes, seq: int) -> bytes:
    if len(session_id) != SESSION_ID_BYTES:
        raise ValueError("session id must be 16 bytes")
    body = message.body()
    return HEADER.pack(MAGIC, VERSION, session_id, seq, message.TAG, len(body)) + body


def frame_decode(data: bytes, expected_seq: int | None = None, session_id: bytes | None = None) -> Frame:
    if len(data) < HEADER.size:
        raise MalformedFrame("frame shorter than header")
    magic, version, sid, seq, tag, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedFrame("bad magic")
    if version != VERSION:
        raise VersionMismatch(f"frame version {version}, expected {VERSION}")
    if len(data) != HEADER.size + length:
        raise MalformedFrame("body length mismatch")
    if session_id is not None and sid != session_id:
        raise MalformedFrame("session id mismatch")
    if expected_seq is not None and seq != expected_seq:
        raise SequenceGap(expected_seq, seq)
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise MalformedFrame(f"unknown tag {tag}")
    rd = Reader(data, HEADER.size)
    try:
        msg = cls.read(rd)
        rd.expect_done()
    except DecodeError as exc:
        raise MalformedFrame(str(exc)) from exc
    return Frame(sid, seq, msg)


def message_fields(msg: Message) -> dict:
    return {f.name: getattr(msg, f.name) for f in fields(msg)}
