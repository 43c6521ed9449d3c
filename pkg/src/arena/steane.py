"""Concatenated Steane code as a classical codeword-set gadget.

Level 1 is the [7,4] Hamming code: even-weight words encode logical 0, odd
ones logical 1. Level 2 is the standard-basis support of the level-2
concatenated encoding: seven level-1 codeword blocks whose logical bits form
a level-1 codeword; its logical bit is the overall parity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

HAMMING_GENERATOR = np.array(
    [
        [1, 1, 1, 0, 0, 0, 0],
        [1, 0, 0, 1, 1, 0, 0],
        [0, 1, 0, 1, 0, 1, 0],
        [1, 1, 0, 1, 0, 0, 1],
    ],
    dtype=np.uint8,
)
HAMMING_PARITY_CHECK = np.array(
    [
        [1, 0, 1, 0, 1, 0, 1],
        [0, 1, 1, 0, 0, 1, 1],
        [0, 0, 0, 1, 1, 1, 1],
    ],
    dtype=np.uint8,
)

TRAP_LABELS = ("0", "+")
LOGICAL_LABELS = ("0", "1", "+", "-")
HADAMARD_LABEL = {"0": "+", "+": "0", "1": "-", "-": "1"}


class LevelUnsupported(ValueError):
    pass


class LabelInvalid(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def _hamming_words() -> np.ndarray:
    msgs = np.array(list(itertools.product((0, 1), repeat=4)), dtype=np.uint8)
    words = (msgs @ HAMMING_GENERATOR) % 2
    return np.array(sorted(map(tuple, words)), dtype=np.uint8)


@dataclass(frozen=True)
class CodewordSets:
    t: int
    N: int
    K: int
    level1: tuple[np.ndarray, np.ndarray] = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        """|D0| = |D1|."""
        return 8 if self.t == 1 else 8 ** 8

    def enumerate(self, v: int) -> list[tuple[int, ...]]:
        if self.t != 1:
            raise LevelUnsupported("explicit enumeration is only offered at level 1")
        return [tuple(int(x) for x in w) for w in self.level1[v]]


def decode_many(words: np.ndarray, t: int) -> np.ndarray:
    """Vectorised codeword_decode: 0, 1, or -1 for non-codewords."""
    words = np.asarray(words, dtype=np.uint8)
    if t == 1:
        syn = (words @ HAMMING_PARITY_CHECK.T) % 2
        valid = ~syn.any(axis=-1)
        logical = words.sum(axis=-1) % 2
    else:
        blocks = words.reshape(words.shape[:-1] + (7, 7))
        syn = (blocks @ HAMMING_PARITY_CHECK.T) % 2
        inner_ok = ~syn.any(axis=(-1, -2))
        outer = blocks.sum(axis=-1) % 2
        outer_ok = ~((outer @ HAMMING_PARITY_CHECK.T) % 2).any(axis=-1)
        valid = inner_ok & outer_ok
        logical = outer.sum(axis=-1) % 2
    return np.where(valid, logical, -1).astype(np.int8)


def _min_weight(t: int, n: int) -> int:
    for w in range(1, n + 1):
        combos = itertools.combinations(range(n), w)
        while True:
            chunk = list(itertools.islice(combos, 50000))
            if not chunk:
                break
            words = np.zeros((len(chunk), n), dtype=np.uint8)
            words[np.repeat(np.arange(len(chunk)), w), np.array(chunk).reshape(-1)] = 1
            if (decode_many(words, t) >= 0).any():
                return w
    raise AssertionError("code has no nonzero word")


@lru_cache(maxsize=None)
def gen_codeword_sets(t: int) -> CodewordSets:
    if t not in (1, 2):
        raise LevelUnsupported(f"level {t} not supported (use 1 or 2)")
    words = _hamming_words()
    parity = words.sum(axis=1) % 2
    level1 = (words[parity == 0], words[parity == 1])
    n = 7 ** t
    return CodewordSets(t=t, N=n, K=_min_weight(t, n), level1=level1)


def is_member(sets: CodewordSets, word: Sequence[int]) -> bool:
    return bool(decode_many(np.asarray(word)[None, :], sets.t)[0] >= 0)


def codeword_decode(q: Sequence[int], sets: CodewordSets) -> int | None:
    q = np.asarray(q, dtype=np.uint8)
    if q.shape != (sets.N,):
        raise LengthMismatch(f"expected {sets.N} bits")
    v = int(decode_many(q[None, :], sets.t)[0])
    return None if v < 0 else v


def sample_codewords(sets: CodewordSets, logical: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A uniform element of D^v for every entry v of `logical`."""
    logical = np.asarray(logical, dtype=np.uint8)
    d0, d1 = sets.level1
    pick = rng.integers(0, 8, size=logical.shape)
    outer = np.where(logical[..., None] == 1, d1[pick], d0[pick])
    if sets.t == 1:
        return outer
    inner_pick = rng.integers(0, 8, size=outer.shape)
    blocks = np.where(outer[..., None] == 1, d1[inner_pick], d0[inner_pick])
    return blocks.reshape(logical.shape + (sets.N,))


@dataclass(frozen=True)
class EncodingKey:
    n: int
    N: int
    traps: tuple[tuple[str, ...], ...]
    perm: tuple[int, ...]
    a: np.ndarray = field(compare=False)
    b: np.ndarray = field(compare=False)
    s_p: np.ndarray = field(compare=False)

    def trap_bits(self) -> np.ndarray:
        """Traps as bits, 1 for '+'."""
        return np.array([[1 if x == "+" else 0 for x in row] for row in self.traps], dtype=np.uint8)

    def __eq__(self, other):
        return (
            isinstance(other, EncodingKey)
            and (self.n, self.N, self.traps, self.perm) == (other.n, other.N, other.traps, other.perm)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.s_p, other.s_p)
        )

    __hash__ = None


def fisher_yates(size: int, rng: np.random.Generator) -> tuple[int, ...]:
    items = list(range(size))
    for i in range(size - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        items[i], items[j] = items[j], items[i]
    return tuple(items)


def gen_encoding_key(n: int, N: int, rng: np.random.Generator, rand_bits: int = 0) -> EncodingKey:
    traps = tuple(tuple(TRAP_LABELS[int(x)] for x in rng.integers(0, 2, size=N)) for _ in range(n))
    perm = fisher_yates(2 * N, rng)
    a = rng.integers(0, 2, size=2 * n * N, dtype=np.uint8)
    b = rng.integers(0, 2, size=2 * n * N, dtype=np.uint8)
    s_p = rng.integers(0, 2, size=rand_bits, dtype=np.uint8)
    return EncodingKey(n, N, traps, perm, a, b, s_p)


def apply_permutation(perm: Sequence[int], x: np.ndarray) -> np.ndarray:
    """Move entry k of the last axis to position perm[k]."""
    x = np.asarray(x)
    out = np.empty_like(x)
    out[..., np.asarray(perm)] = x
    return out


def invert_block_split(u: np.ndarray, perm: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.uint8)
    if u.shape[-1] != len(perm):
        raise LengthMismatch(f"block has {u.shape[-1]} bits, permutation {len(perm)}")
    x = u[..., np.asarray(perm)]
    half = len(perm) // 2
    return x[..., :half], x[..., half:]


def trap_check(z: Sequence[int], trap_labels: Sequence[str], gate: str) -> bool:
    """Support condition of <z| U^N |traps> for traps in {0, +}."""
    if len(z) != len(trap_labels):
        raise LengthMismatch("trap string and labels differ in length")
    constrained_label = "0" if gate == "I" else "+"
    return all(not (lab == constrained_label and int(bit)) for bit, lab in zip(z, trap_labels))


def sample_encoded_measurement(
    logical_labels: Sequence[str],
    key: EncodingKey,
    block_basis: Sequence[str],
    rng: np.random.Generator,
    sets: CodewordSets | None = None,
) -> np.ndarray:
    """Outcome bits of measuring the encoded product state block-by-block.

    Blocks measured in the X basis are handled by rotating labels through H,
    so the outcome is a standard-basis sample of the rotated encoding; the
    Z-pad a applies to Z blocks and b to X blocks.
    """
    sets = sets or gen_codeword_sets(_level_of(key.N))
    n, N = key.n, key.N
    if len(logical_labels) != n or len(block_basis) != n:
        raise LengthMismatch("one label and one basis per logical qubit")
    for lab in logical_labels:
        if lab not in LOGICAL_LABELS:
            raise LabelInvalid(f"logical label {lab!r}")
    rotated = [HADAMARD_LABEL[l] if bb == "X" else l for l, bb in zip(logical_labels, block_basis)]
    coin = rng.integers(0, 2, size=n)
    logical = np.array([{"0": 0, "1": 1}.get(l, c) for l, c in zip(rotated, coin)], dtype=np.uint8)
    q = sample_codewords(sets, logical, rng)
    traps = key.trap_bits()
    free = np.where(np.array(block_basis)[:, None] == "X", traps == 0, traps == 1)
    z = (rng.integers(0, 2, size=(n, N)) * free).astype(np.uint8)
    x = apply_permutation(key.perm, np.concatenate([q, z], axis=1))
    pad = np.where(np.array(block_basis)[:, None] == "X", key.b.reshape(n, 2 * N), key.a.reshape(n, 2 * N))
    return (x ^ pad).reshape(-1).astype(np.uint8)


def _level_of(N: int) -> int:
    if N == 7:
        return 1
    if N == 49:
        return 2
    raise LevelUnsupported(f"N={N}")


def level_of(N: int) -> int:
    return _level_of(N)


def dump_codeword_sets(sets: CodewordSets) -> str:
    """Text fixture of the level-1 sets (level 2 is defined from them)."""
    lines = [f"# level {sets.t} N={sets.N} K={sets.K}"]
    for v in (0, 1):
        for w in sets.level1[v]:
            lines.append(f"{v} {''.join(map(str, w))}")
    return "\n".join(lines) + "\n"
