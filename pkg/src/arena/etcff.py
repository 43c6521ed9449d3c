"""Toy LWE extended trapdoor claw-free functions.

Orientation: the trapdoor matrix ``A = [Abar | G - Abar R]`` is n_lwe x m_lwe
and the function is ``y = A^T x + e0 + b v``, so images live in Z_q^m_lwe and
preimage vectors in Z_q^n_lwe. G is the base-2 gadget ``I_n (x) (1, 2, ..., 2^(w-1))``.

Every parameter preset here is far too small to be secure.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

VERSION = 1


class ParamsInvalid(ValueError):
    pass


@dataclass(frozen=True)
class LweParams:
    name: str
    q: int
    n_lwe: int
    m_bar: int
    w_gadget: int
    B_f: int
    e0_max: int
    B_g: int
    B_invert: int
    sigma_R: int
    gauss_s: float
    bits_per_coord: int
    ratio_min: int = 16

    @property
    def m_lwe(self) -> int:
        return self.m_bar + self.n_lwe * self.w_gadget

    @property
    def w_pre(self) -> int:
        return self.n_lwe * self.bits_per_coord

    @property
    def domain_size(self) -> int:
        return min(self.q, 1 << self.bits_per_coord)

    @property
    def decode_radius(self) -> int:
        """Largest gadget-domain error E the base-2 decoder corrects (E < q/6)."""
        return -(-self.q // 6) - 1 if self.q % 6 else self.q // 6 - 1

    @property
    def s1_max(self) -> float:
        """Largest singular value of R for which every ||e|| <= B_invert decodes."""
        return (self.decode_radius / self.B_invert - 1) / math.sqrt(self.m_bar)

    def validate(self) -> "LweParams":
        if self.B_f * self.ratio_min > self.e0_max:
            raise ParamsInvalid(f"need B_f * {self.ratio_min} <= e0_max")
        if not self.e0_max < self.B_g <= self.B_invert:
            raise ParamsInvalid("need e0_max < B_g <= B_invert")
        if self.B_g - self.e0_max <= self.e0_max:
            raise ParamsInvalid("need B_g - e0_max > e0_max")
        if self.q <= 4 * self.B_invert:
            raise ParamsInvalid("need q > 4 B_invert")
        if (1 << self.w_gadget) < self.q or (1 << (self.w_gadget - 1)) >= self.q:
            raise ParamsInvalid("gadget width must satisfy 2^(w-1) < q <= 2^w")
        if self.s1_max <= 0:
            raise ParamsInvalid("B_invert too large for the decoder radius")
        if self.e0_max + self.B_f - 1 > self.B_invert:
            raise ParamsInvalid("claw partner errors must stay invertible")
        return self


MICRO = LweParams(
    name="micro", q=97, n_lwe=1, m_bar=2, w_gadget=7,
    B_f=1, e0_max=1, B_g=3, B_invert=3, sigma_R=1, gauss_s=1.5,
    bits_per_coord=4, ratio_min=1,
).validate()

DEMO = LweParams(
    name="demo", q=12289, n_lwe=8, m_bar=6, w_gadget=14,
    B_f=2, e0_max=32, B_g=65, B_invert=65, sigma_R=1, gauss_s=12.0,
    bits_per_coord=14,
).validate()

PRESETS = {"micro": MICRO, "demo": DEMO}


@dataclass(frozen=True)
class EtcffKey:
    """Public function key: trapdoor matrix A and offset v."""

    A: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class EtcffKeyPair:
    kind: Literal["f", "g"]
    key: EtcffKey
    R: np.ndarray
    s: np.ndarray | None = None
    e: np.ndarray | None = None


@dataclass(frozen=True)
class Inversion:
    s: np.ndarray
    e: np.ndarray

    @property
    def norm(self) -> int:
        return int(np.abs(self.e).max()) if self.e.size else 0


def centered(x: np.ndarray, q: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64) % q
    return np.where(x > q // 2, x - q, x)


def gadget(params: LweParams) -> np.ndarray:
    g = (1 << np.arange(params.w_gadget, dtype=np.int64)) % params.q
    return np.kron(np.eye(params.n_lwe, dtype=np.int64), g[None, :])


def gen_trap(params: LweParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    q, n, mb = params.q, params.n_lwe, params.m_bar
    G = gadget(params)
    while True:
        abar = rng.integers(0, q, size=(n, mb), dtype=np.int64)
        R = rng.integers(-params.sigma_R, params.sigma_R + 1, size=(mb, n * params.w_gadget), dtype=np.int64)
        if np.linalg.norm(R, 2) <= params.s1_max:
            break
    A = np.concatenate([abar, (G - abar @ R) % q], axis=1)
    return A, R


def trapdoor_valid(A: np.ndarray, R: np.ndarray, params: LweParams) -> bool:
    A = np.asarray(A, dtype=np.int64)
    R = np.asarray(R, dtype=np.int64)
    n, mb = params.n_lwe, params.m_bar
    if A.shape != (n, params.m_lwe) or R.shape != (mb, n * params.w_gadget):
        return False
    if np.linalg.norm(R.astype(float), 2) > params.s1_max:
        return False
    abar = A[:, :mb]
    return bool(np.array_equal(A[:, mb:] % params.q, (gadget(params) - abar @ R) % params.q))


def _gadget_decode(w: np.ndarray, params: LweParams) -> np.ndarray:
    """Recover s_i from w[i, j] = 2^j s_i + err (mod q) by successive refinement."""
    q = params.q
    w = np.asarray(w, dtype=np.int64) % q
    est = w[..., 0].astype(np.float64)
    for j in range(1, params.w_gadget):
        scale = float(1 << j)
        k = np.rint((scale * est - w[..., j]) / q)
        est = (w[..., j] + k * q) / scale
    return np.rint(est).astype(np.int64) % q


def invert(A: np.ndarray, R: np.ndarray, c: np.ndarray, params: LweParams) -> Inversion | None:
    """Return (s, e) with c = A^T s + e and ||e|| <= B_invert, or None."""
    q, mb = params.q, params.m_bar
    A = np.asarray(A, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64) % q
    w = (c[:mb] @ np.asarray(R, dtype=np.int64) + c[mb:]) % q
    s = _gadget_decode(w.reshape(params.n_lwe, params.w_gadget), params)
    e = centered(c - s @ A, q)
    if np.abs(e).max() > params.B_invert:
        return None
    return Inversion(s, e)


def keygen(kind: Literal["f", "g"], params: LweParams, rng: np.random.Generator) -> EtcffKeyPair:
    A, R = gen_trap(params, rng)
    q = params.q
    if kind == "f":
        s = rng.integers(0, params.domain_size, size=params.n_lwe, dtype=np.int64)
        e = rng.integers(-(params.B_f - 1), params.B_f, size=params.m_lwe, dtype=np.int64)
        v = (s @ A + e) % q
        return EtcffKeyPair("f", EtcffKey(A, v), R, s, e)
    if kind != "g":
        raise ValueError("kind must be 'f' or 'g'")
    while True:
        u = rng.integers(0, q, size=params.m_lwe, dtype=np.int64)
        inv = invert(A, R, u, params)
        if inv is None or inv.norm > params.B_g:
            return EtcffKeyPair("g", EtcffKey(A, u), R)


def truncated_gaussian_pmf(params: LweParams) -> tuple[np.ndarray, np.ndarray]:
    support = np.arange(-params.e0_max, params.e0_max + 1)
    weights = np.exp(-math.pi * support.astype(float) ** 2 / params.gauss_s ** 2)
    return support, weights / weights.sum()


def sample_truncated_gaussian(params: LweParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Coordinatewise discrete Gaussian conditioned on |e0_j| <= e0_max.

    Sampled by exact inversion of the truncated pmf, which has the same law as
    rejection from the untruncated Gaussian.
    """
    support, pmf = truncated_gaussian_pmf(params)
    shape = params.m_lwe if size is None else (size, params.m_lwe)
    idx = np.searchsorted(np.cumsum(pmf), rng.random(shape), side="right")
    return support[np.minimum(idx, support.size - 1)]


def embed(x_bits: np.ndarray, params: LweParams) -> np.ndarray:
    """Little-endian base-2 packing of bit chunks into Z_q coordinates."""
    bits = np.asarray(x_bits, dtype=np.int64).reshape(params.n_lwe, params.bits_per_coord)
    return bits @ (1 << np.arange(params.bits_per_coord, dtype=np.int64))


def unembed(x: np.ndarray, params: LweParams) -> np.ndarray | None:
    x = np.asarray(x, dtype=np.int64)
    if (x < 0).any() or (x >= params.domain_size).any():
        return None
    return ((x[:, None] >> np.arange(params.bits_per_coord)) & 1).reshape(-1).astype(np.uint8)


def uniform_preimage(params: LweParams, rng: np.random.Generator) -> np.ndarray:
    return unembed(rng.integers(0, params.domain_size, size=params.n_lwe, dtype=np.int64), params)


def eval_sample(
    key: EtcffKey, b: int, x_bits: np.ndarray, params: LweParams, rng: np.random.Generator, e0: np.ndarray | None = None
) -> np.ndarray:
    if e0 is None:
        e0 = sample_truncated_gaussian(params, rng)
    return (embed(x_bits, params) @ key.A + e0 + int(b) * key.v) % params.q


def check_preimage(key: EtcffKey, b: int, x_bits: np.ndarray, y: np.ndarray, params: LweParams) -> bool:
    if len(x_bits) != params.w_pre:
        return False
    x = embed(x_bits, params)
    if (x >= params.domain_size).any():
        return False
    r = centered(np.asarray(y, dtype=np.int64) - x @ key.A - int(b) * key.v, params.q)
    return bool(np.abs(r).max() <= params.e0_max)


def trapdoor_key_check(key: EtcffKey, R: np.ndarray, params: LweParams) -> bool:
    if not trapdoor_valid(key.A, R, params):
        return False
    inv = invert(key.A, R, key.v, params)
    return inv is None or inv.norm < params.B_f or inv.norm > params.B_g


def key_kind_from_trapdoor(key: EtcffKey, R: np.ndarray, params: LweParams) -> Literal["f", "g"]:
    inv = invert(key.A, R, key.v, params)
    return "f" if inv is not None and inv.norm < params.B_f else "g"


def recover_preimages(key: EtcffKey, R: np.ndarray, y: np.ndarray, params: LweParams) -> list[tuple[int, np.ndarray]]:
    out = []
    for b, target in ((0, y), (1, np.asarray(y, dtype=np.int64) - key.v)):
        inv = invert(key.A, R, target, params)
        if inv is not None and inv.norm <= params.e0_max:
            bits = unembed(inv.s, params)
            if bits is not None:
                out.append((b, bits))
    return out


# ---- canonical serialisation ----------------------------------------------


def _pack_matrix(M: np.ndarray, signed: bool) -> bytes:
    M = np.atleast_2d(np.asarray(M, dtype=np.int64))
    fmt = "<i4" if signed else "<u4"
    return struct.pack("<II", *M.shape) + M.astype(fmt).tobytes()


def _unpack_matrix(data: bytes, offset: int, signed: bool) -> tuple[np.ndarray, int]:
    rows, cols = struct.unpack_from("<II", data, offset)
    offset += 8
    size = rows * cols * 4
    M = np.frombuffer(data[offset:offset + size], dtype="<i4" if signed else "<u4").astype(np.int64)
    return M.reshape(rows, cols), offset + size


def key_to_bytes(key: EtcffKey, params: LweParams) -> bytes:
    return b"ETK" + bytes([VERSION]) + struct.pack("<I", params.q) + _pack_matrix(key.A, False) + _pack_matrix(key.v[None, :], False)


def key_from_bytes(data: bytes) -> tuple[EtcffKey, int]:
    if data[:3] != b"ETK" or data[3] != VERSION:
        raise ValueError("bad key header")
    (q,) = struct.unpack_from("<I", data, 4)
    A, off = _unpack_matrix(data, 8, False)
    v, off = _unpack_matrix(data, off, False)
    return EtcffKey(A, v[0]), q


def trapdoor_to_bytes(R: np.ndarray) -> bytes:
    return b"ETR" + bytes([VERSION]) + _pack_matrix(R, True)


def trapdoor_from_bytes(data: bytes) -> np.ndarray:
    if data[:3] != b"ETR" or data[3] != VERSION:
        raise ValueError("bad trapdoor header")
    R, _ = _unpack_matrix(data, 4, True)
    return R


def with_ratio(params: LweParams, **changes) -> LweParams:
    return replace(params, **changes).validate()
