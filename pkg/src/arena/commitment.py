"""Perfectly binding LWE-style string commitments.

``z = A enc(s) + noise(s) + floor(q/2) m + tag(i)  (mod q)``

The randomness ``s`` is a bit string: the first ``k * secret_bits`` bits are
packed little-endian into a secret vector in Z_q^k, and the remaining
``noise_bits`` seed the noise. Row j of the noise is the seed bit
``s[idx(j)]`` for a fixed public index map whose first ``noise_bits`` entries
are the identity. The noise is therefore small, deterministic in s, linear in
the bits (cheap inside the relation circuit), and covers every seed bit.

The commitment has ``extra_rows + len(m)`` rows; the first ``extra_rows`` rows
carry no message, so ``z`` also pins down the message length.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng as arena_rng

VERSION = 1


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class CommitParams:
    q: int
    k: int
    secret_bits: int
    noise_bits: int
    extra_rows: int
    max_msg_bits: int
    tag_bytes: int = 16

    @property
    def rand_bits(self) -> int:
        return self.k * self.secret_bits + self.noise_bits

    @property
    def max_rows(self) -> int:
        return self.extra_rows + self.max_msg_bits

    @property
    def delta(self) -> int:
        return self.q // 2


MICRO = CommitParams(q=257, k=1, secret_bits=5, noise_bits=3, extra_rows=4, max_msg_bits=8, tag_bytes=4)
STANDARD = CommitParams(q=65521, k=8, secret_bits=15, noise_bits=64, extra_rows=64, max_msg_bits=1 << 16)


@dataclass(frozen=True)
class CommitmentScheme:
    params: CommitParams
    seed: bytes
    A: np.ndarray = field(repr=False, compare=False)
    noise_index: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if self.params.extra_rows < self.params.noise_bits:
            raise ValueError("extra_rows must cover every noise bit")

    @property
    def secret_weights(self) -> np.ndarray:
        """Per-row coefficients on the secret bits: A[:, c] * 2^b flattened to (rows, k*secret_bits)."""
        p = self.params
        pw = (1 << np.arange(p.secret_bits, dtype=np.int64)) % p.q
        return (self.A[:, :, None] * pw[None, None, :]).reshape(p.max_rows, -1) % p.q


def gen(params: CommitParams, rng: np.random.Generator) -> CommitmentScheme:
    seed = arena_rng.child(rng)
    return scheme_from_seed(params, seed)


def scheme_from_seed(params: CommitParams, seed: bytes) -> CommitmentScheme:
    g = arena_rng.stream(seed, "commit-pk")
    A = g.integers(0, params.q, size=(params.max_rows, params.k), dtype=np.int64)
    idx = g.integers(0, params.noise_bits, size=params.max_rows)
    idx[: params.noise_bits] = np.arange(params.noise_bits)
    return CommitmentScheme(params, seed, A, idx)


def initiate(scheme: CommitmentScheme, rng: np.random.Generator) -> bytes:
    return rng.bytes(scheme.params.tag_bytes)


@lru_cache(maxsize=64)
def _full_tag(params: CommitParams, seed: bytes, i: bytes) -> np.ndarray:
    digest = hashlib.sha256(b"commit-tag" + seed + i).digest()
    out = arena_rng.stream(digest).integers(0, params.q, size=params.max_rows, dtype=np.int64)
    out.flags.writeable = False
    return out


def tag_vector(scheme: CommitmentScheme, i: bytes, rows: int) -> np.ndarray:
    p = scheme.params
    if len(i) != p.tag_bytes:
        raise LengthError(f"tag must be {p.tag_bytes} bytes")
    return _full_tag(p, scheme.seed, bytes(i))[:rows]


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _as_bits(x) -> np.ndarray:
    if isinstance(x, (bytes, bytearray)):
        return bytes_to_bits(bytes(x))
    return np.asarray(x, dtype=np.uint8).reshape(-1)


def split_randomness(scheme: CommitmentScheme, s) -> tuple[np.ndarray, np.ndarray]:
    p = scheme.params
    s = _as_bits(s)
    if s.size != p.rand_bits:
        raise LengthError(f"randomness must be {p.rand_bits} bits, got {s.size}")
    cut = p.k * p.secret_bits
    return s[:cut], s[cut:]


def random_randomness(scheme: CommitmentScheme, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=scheme.params.rand_bits, dtype=np.uint8)


def commit(scheme: CommitmentScheme, i: bytes, m, s) -> np.ndarray:
    """m and s are bytes or bit arrays; returns z in Z_q^(extra_rows + |m| bits)."""
    p = scheme.params
    msg = _as_bits(m)
    if msg.size > p.max_msg_bits:
        raise LengthError(f"message has {msg.size} bits, width is {p.max_msg_bits}")
    secret, noise_seed = split_randomness(scheme, s)
    rows = p.extra_rows + msg.size
    svec = secret.reshape(p.k, p.secret_bits).astype(np.int64) @ (1 << np.arange(p.secret_bits, dtype=np.int64))
    noise = noise_seed[scheme.noise_index[:rows]].astype(np.int64)
    z = scheme.A[:rows] @ svec + noise + tag_vector(scheme, i, rows)
    z[p.extra_rows:] += p.delta * msg.astype(np.int64)
    return z % p.q


def verify(scheme: CommitmentScheme, i: bytes, z: np.ndarray, m, s) -> bool:
    try:
        expected = commit(scheme, i, m, s)
    except LengthError:
        return False
    z = np.asarray(z)
    return z.shape == expected.shape and bool(np.array_equal(z, expected))


def z_to_bytes(scheme: CommitmentScheme, z: np.ndarray) -> bytes:
    dtype = "<u2" if scheme.params.q <= 1 << 16 else "<u4"
    return bytes([VERSION]) + struct.pack("<I", len(z)) + np.asarray(z).astype(dtype).tobytes()


def z_from_bytes(scheme: CommitmentScheme, data: bytes) -> np.ndarray:
    if not data or data[0] != VERSION:
        raise ValueError("bad commitment version")
    (n,) = struct.unpack_from("<I", data, 1)
    dtype = "<u2" if scheme.params.q <= 1 << 16 else "<u4"
    width = np.dtype(dtype).itemsize
    if len(data) != 5 + n * width:
        raise LengthError("commitment byte length mismatch")
    return np.frombuffer(data[5:], dtype=dtype).astype(np.int64)
