"""Zero-knowledge proofs for the prover's final NP statement.

The reference backend is 3-party MPC-in-the-head over a mixed circuit: boolean
wires are XOR-shared, arithmetic wires are additively shared mod q, and each
repetition opens two of the three party views. The engine evaluates a circuit
for all repetitions and parties at once: share arrays have shape
``(reps, parties, wires)``.

Circuits are lists of vector ops:

* ``linb`` / ``linq``: sparse linear maps (XOR sums, or Z_q combinations) plus
  a public constant that only party 0 adds.
* ``and`` / ``mul``: the nonlinear gates; each party records its output.
* ``lift``: boolean share to arithmetic share of the same bit. Party k's share
  is first viewed as a sharing held by k alone, then the three are combined
  with ``x + y - 2xy`` (two ``mul`` gates).

A relation holds iff the single boolean ``final`` wire is 1 and every
arithmetic ``zero_checks`` wire is 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import commitment as cm
from . import predicates
from . import rng as arena_rng
from . import steane
from . import xz_hamiltonian as xz
from .codec import DecodeError, Reader, Writer
from .steane import HAMMING_PARITY_CHECK

DEFAULT_REPS = 40
SEED_BYTES = 16


class ParamsUnsupported(ValueError):
    pass


class WitnessInvalid(ValueError):
    pass


# ---- circuits --------------------------------------------------------------


@dataclass
class Op:
    kind: str
    out: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    ptr: np.ndarray | None = None
    coef: np.ndarray | None = None
    const: np.ndarray | None = None
    offset: int = 0


@dataclass
class Circuit:
    q: int
    n_bool: int
    n_arith: int
    witness: np.ndarray
    pub_bool: np.ndarray
    pub_arith: np.ndarray
    ops: list[Op]
    final: int
    zero_checks: np.ndarray
    n_and: int
    n_mul: int
    final_and: tuple[int, int] | None = None
    labels: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_witness(self) -> int:
        return int(self.witness.size)

    def digest(self) -> bytes:
        h = hashlib.sha256(b"circuit")
        h.update(np.array([self.q, self.n_bool, self.n_arith, self.final, self.n_and, self.n_mul], dtype="<i8").tobytes())
        for arr in (self.witness, self.pub_bool, self.pub_arith, self.zero_checks):
            h.update(np.asarray(arr, dtype="<i8").tobytes())
        for op in self.ops:
            h.update(op.kind.encode())
            for arr in (op.out, op.a, op.b, op.ptr, op.coef, op.const):
                h.update(b"-" if arr is None else np.asarray(arr, dtype="<i8").tobytes())
        return h.digest()


class CircuitBuilder:
    def __init__(self, q: int):
        self.q = q
        self.n_bool = 0
        self.n_arith = 0
        self.ops: list[Op] = []
        self.n_and = 0
        self.n_mul = 0
        self.witness: list[np.ndarray] = []
        self.pub_bool: list[np.ndarray] = []
        self.pub_arith: list[np.ndarray] = []
        self.zero: list[np.ndarray] = []
        self.labels: dict[str, np.ndarray] = {}
        self._one: np.ndarray | None = None

    def _bool(self, k: int) -> np.ndarray:
        out = np.arange(self.n_bool, self.n_bool + k)
        self.n_bool += k
        return out

    def _arith(self, k: int) -> np.ndarray:
        out = np.arange(self.n_arith, self.n_arith + k)
        self.n_arith += k
        return out

    def witness_bits(self, k: int, label: str | None = None) -> np.ndarray:
        w = self._bool(k)
        self.witness.append(w)
        if label:
            self.labels[label] = w
        return w

    def public_bits(self, k: int) -> np.ndarray:
        w = self._bool(k)
        self.pub_bool.append(w)
        return w

    def public_ints(self, k: int) -> np.ndarray:
        w = self._arith(k)
        self.pub_arith.append(w)
        return w

    def lin2(self, rows: Sequence[Sequence[int]], const: Sequence[int] | None = None) -> np.ndarray:
        """XOR of each row's wires, plus a constant bit."""
        rows = [np.asarray(r, dtype=np.int64).reshape(-1) for r in rows]
        c = np.zeros(len(rows), dtype=np.uint8) if const is None else np.asarray(const, dtype=np.uint8) % 2
        for i, r in enumerate(rows):
            if r.size == 0:
                rows[i] = self.one()
                c[i] ^= 1
        out = self._bool(len(rows))
        ptr = np.cumsum([0] + [r.size for r in rows[:-1]])
        self.ops.append(Op("linb", out, a=np.concatenate(rows), ptr=ptr, const=c))
        return out

    def xor(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.lin2(np.stack([x, y], axis=1))

    def not_(self, x: np.ndarray) -> np.ndarray:
        return self.lin2(np.asarray(x)[:, None], np.ones(len(x)))

    def xor_const(self, x: np.ndarray, const: Sequence[int]) -> np.ndarray:
        return self.lin2(np.asarray(x)[:, None], const)

    def const_bits(self, values: Sequence[int]) -> np.ndarray:
        return self.lin2(np.broadcast_to(self.one()[:1], (len(values), 1)), np.asarray(values) ^ 1)

    def one(self) -> np.ndarray:
        if self._one is None:
            out = self._bool(1)
            self.ops.append(Op("linb", out, a=np.zeros(0, dtype=np.int64), ptr=np.zeros(0, dtype=np.int64), const=np.ones(1, dtype=np.uint8)))
            self._one = out
        return self._one

    def and_(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x, y = np.asarray(x), np.asarray(y)
        out = self._bool(x.size)
        self.ops.append(Op("and", out, a=x, b=y, offset=self.n_and))
        self.n_and += x.size
        return out

    def linq(self, rows: Sequence[Sequence[int]], coefs: Sequence[Sequence[int]], const: Sequence[int] | None = None) -> np.ndarray:
        rows = [np.asarray(r, dtype=np.int64) for r in rows]
        if any(r.size == 0 for r in rows):
            raise ParamsUnsupported("arithmetic rows must be non-empty")
        out = self._arith(len(rows))
        ptr = np.cumsum([0] + [r.size for r in rows[:-1]])
        coef = np.concatenate([np.asarray(c, dtype=np.int64) % self.q for c in coefs])
        c = np.zeros(len(rows), dtype=np.int64) if const is None else np.asarray(const, dtype=np.int64) % self.q
        self.ops.append(Op("linq", out, a=np.concatenate(rows), ptr=ptr, coef=coef, const=c))
        return out

    def mulq(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = self._arith(len(x))
        self.ops.append(Op("mul", out, a=np.asarray(x), b=np.asarray(y), offset=self.n_mul))
        self.n_mul += len(x)
        return out

    def lift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        out = self._arith(x.size)
        self.ops.append(Op("lift", out, a=x, offset=self.n_mul))
        self.n_mul += 2 * x.size
        return out

    def zero_check(self, w: np.ndarray) -> None:
        self.zero.append(np.asarray(w))

    def and_all(self, bits: np.ndarray) -> int:
        """AND-tree over `bits`; the last op is always an AND gate."""
        bits = np.asarray(bits)
        if bits.size == 0:
            bits = self.one()
        if bits.size == 1:
            bits = np.concatenate([bits, self.one()])
        while bits.size > 1:
            half = bits.size // 2
            paired = self.and_(bits[:half], bits[half:2 * half])
            bits = np.concatenate([paired, bits[2 * half:]])
        return int(bits[0])

    def build(self, final: int) -> Circuit:
        last = self.ops[-1]
        final_and = None
        if last.kind == "and" and int(last.out[-1]) == final:
            final_and = (len(self.ops) - 1, last.out.size - 1)
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
        return Circuit(
            q=self.q, n_bool=self.n_bool, n_arith=self.n_arith,
            witness=cat(self.witness), pub_bool=cat(self.pub_bool), pub_arith=cat(self.pub_arith),
            ops=self.ops, final=final, zero_checks=cat(self.zero),
            n_and=self.n_and, n_mul=self.n_mul, final_and=final_and, labels=self.labels,
        )


# ---- share evaluation ------------------------------------------------------

Nonlinear = Callable[[str, int, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Evaluation:
    bool_wires: np.ndarray
    arith_wires: np.ndarray

    def final(self, circ: Circuit) -> np.ndarray:
        return self.bool_wires[..., circ.final]

    def zeros(self, circ: Circuit) -> np.ndarray:
        return self.arith_wires[..., circ.zero_checks]


def evaluate(
    circ: Circuit,
    witness_shares: np.ndarray,
    pub_bool: np.ndarray,
    pub_arith: np.ndarray,
    pid: np.ndarray,
    nonlinear: Nonlinear,
) -> Evaluation:
    """Run every party in `pid` (shape (reps, parties)) through the circuit."""
    q = circ.q
    reps, parties = pid.shape
    B = np.zeros((reps, parties, circ.n_bool), dtype=np.uint8)
    A = np.zeros((reps, parties, circ.n_arith), dtype=np.int64)
    lead = (pid == 0)[..., None]
    B[..., circ.witness] = witness_shares
    B[..., circ.pub_bool] = lead * np.asarray(pub_bool, dtype=np.uint8)
    A[..., circ.pub_arith] = lead * (np.asarray(pub_arith, dtype=np.int64) % q)
    for op in circ.ops:
        if op.kind == "linb":
            if op.a.size:
                s = np.add.reduceat(B[..., op.a].astype(np.int32), op.ptr, axis=-1) & 1
            else:
                s = np.zeros((reps, parties, op.out.size), dtype=np.int32)
            B[..., op.out] = s ^ (lead * op.const)
        elif op.kind == "linq":
            s = np.add.reduceat(A[..., op.a] * op.coef, op.ptr, axis=-1)
            A[..., op.out] = (s + lead * op.const) % q
        elif op.kind == "and":
            B[..., op.out] = nonlinear("and", op.offset, B[..., op.a], B[..., op.b])
        elif op.kind == "mul":
            A[..., op.out] = nonlinear("mul", op.offset, A[..., op.a], A[..., op.b])
        elif op.kind == "lift":
            x = B[..., op.a].astype(np.int64)
            k = x.shape[-1]
            X = [np.where(pid[..., None] == j, x, 0) for j in range(3)]
            u = (X[0] + X[1] - 2 * nonlinear("mul", op.offset, X[0], X[1])) % q
            A[..., op.out] = (u + X[2] - 2 * nonlinear("mul", op.offset + k, u, X[2])) % q
        else:
            raise ValueError(op.kind)
    return Evaluation(B, A)


def evaluate_clear(circ: Circuit, witness: np.ndarray, pub_bool: np.ndarray, pub_arith: np.ndarray) -> Evaluation:
    q = circ.q

    def nl(kind, offset, x, y):
        return (x & y) if kind == "and" else (x * y) % q

    w = np.asarray(witness, dtype=np.uint8)[None, None, :]
    return evaluate(circ, w, pub_bool, pub_arith, np.zeros((1, 1), dtype=np.int64), nl)


def relation_holds(circ: Circuit, witness, pub_bool, pub_arith) -> bool:
    ev = evaluate_clear(circ, witness, pub_bool, pub_arith)
    return bool(ev.final(circ)[0, 0] == 1 and not ev.zeros(circ).any())


# ---- party tapes and views ---------------------------------------------------


@dataclass
class Tapes:
    wbits: np.ndarray  # (reps, P, n_witness)
    abits: np.ndarray  # (reps, P, n_and)
    mvals: np.ndarray  # (reps, P, n_mul)


def make_tapes(circ: Circuit, seeds: Sequence[Sequence[bytes]]) -> Tapes:
    w, a, m = [], [], []
    for row in seeds:
        wr, ar, mr = [], [], []
        for seed in row:
            g = arena_rng.stream(seed, "mpc-tape")
            wr.append(g.integers(0, 2, size=circ.n_witness, dtype=np.uint8))
            ar.append(g.integers(0, 2, size=circ.n_and, dtype=np.uint8))
            mr.append(g.integers(0, circ.q, size=circ.n_mul, dtype=np.int64))
        w.append(wr), a.append(ar), m.append(mr)
    return Tapes(np.array(w, dtype=np.uint8), np.array(a, dtype=np.uint8), np.array(m, dtype=np.int64))


def _and_share(x, y, x1, y1, r, r1):
    return (x & y) ^ (x1 & y) ^ (x & y1) ^ r ^ r1


def _mul_share(x, y, x1, y1, r, r1, q):
    return (x * y + x1 * y + x * y1 + r - r1) % q


def view_digest(seed: bytes, explicit: np.ndarray | None, and_out: np.ndarray, mul_out: np.ndarray) -> bytes:
    h = hashlib.sha256(b"mpc-view")
    h.update(seed)
    if explicit is not None:
        h.update(np.packbits(np.asarray(explicit, dtype=np.uint8), bitorder="little").tobytes())
    h.update(np.packbits(np.asarray(and_out, dtype=np.uint8), bitorder="little").tobytes())
    h.update(np.asarray(mul_out, dtype="<u4").tobytes())
    return h.digest()


# ---- proof messages ----------------------------------------------------------


@dataclass
class CommitMessage:
    view_commits: list[list[np.ndarray]]  # reps x 3 commitment strings
    final_shares: np.ndarray  # (reps, 3)
    zero_shares: np.ndarray  # (reps, 3, k)


@dataclass
class OpenedView:
    seed: bytes
    explicit: np.ndarray | None
    and_out: np.ndarray
    mul_out: np.ndarray
    commit_rand: np.ndarray


@dataclass
class ResponseMessage:
    opened: list[tuple[OpenedView, OpenedView]]


@dataclass
class NpzkProofTranscript:
    commit: CommitMessage
    challenges: np.ndarray
    response: ResponseMessage

    @property
    def reps(self) -> int:
        return len(self.challenges)


@dataclass
class ProofContext:
    """Public data every proof in a session shares: the circuit and commitment setup."""

    circuit: Circuit
    scheme: cm.CommitmentScheme
    tag: bytes


class Prover:
    """Interactive prover: commit(), then respond(challenges)."""

    def __init__(
        self,
        ctx: ProofContext,
        witness: np.ndarray,
        pub_bool: np.ndarray,
        pub_arith: np.ndarray,
        reps: int,
        rng: np.random.Generator,
        corrupt: np.ndarray | None = None,
    ):
        circ = ctx.circuit
        self.ctx = ctx
        self.reps = reps
        witness = np.asarray(witness, dtype=np.uint8)
        if witness.size != circ.n_witness:
            raise WitnessInvalid(f"witness has {witness.size} bits, circuit wants {circ.n_witness}")
        if corrupt is None and not relation_holds(circ, witness, pub_bool, pub_arith):
            raise WitnessInvalid("relation does not hold for this witness")
        self.seeds = [[rng.bytes(SEED_BYTES) for _ in range(3)] for _ in range(reps)]
        tapes = make_tapes(circ, self.seeds)
        shares = tapes.wbits.copy()
        shares[:, 2] = witness ^ shares[:, 0] ^ shares[:, 1]
        self.explicit = shares[:, 2].copy()
        and_out = np.zeros((reps, 3, circ.n_and), dtype=np.uint8)
        mul_out = np.zeros((reps, 3, circ.n_mul), dtype=np.int64)
        q = circ.q
        flip_at = None
        if corrupt is not None and circ.final_and is not None:
            flip_at = circ.ops[circ.final_and[0]].offset + circ.final_and[1]

        def nl(kind, offset, x, y):
            k = x.shape[-1]
            x1, y1 = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
            if kind == "and":
                r = tapes.abits[..., offset:offset + k]
                z = _and_share(x, y, x1, y1, r, np.roll(r, -1, axis=1))
                if flip_at is not None and offset <= flip_at < offset + k:
                    z[np.arange(reps), corrupt, flip_at - offset] ^= 1
                and_out[..., offset:offset + k] = z
            else:
                r = tapes.mvals[..., offset:offset + k]
                z = _mul_share(x, y, x1, y1, r, np.roll(r, -1, axis=1), q)
                mul_out[..., offset:offset + k] = z
            return z

        pid = np.tile(np.arange(3), (reps, 1))
        ev = evaluate(circ, shares, pub_bool, pub_arith, pid, nl)
        self.and_out, self.mul_out = and_out, mul_out
        self.final_shares = ev.final(circ)
        self.zero_shares = ev.zeros(circ)
        self.commit_rand = [[cm.random_randomness(ctx.scheme, rng) for _ in range(3)] for _ in range(reps)]
        self.view_commits = []
        for r in range(reps):
            row = []
            for p in range(3):
                d = view_digest(self.seeds[r][p], self.explicit[r] if p == 2 else None, and_out[r, p], mul_out[r, p])
                row.append(cm.commit(ctx.scheme, ctx.tag, d, self.commit_rand[r][p]))
            self.view_commits.append(row)

    def commit(self) -> CommitMessage:
        return CommitMessage(self.view_commits, self.final_shares.copy(), self.zero_shares.copy())

    def respond(self, challenges: np.ndarray) -> ResponseMessage:
        challenges = np.asarray(challenges)
        if challenges.shape != (self.reps,) or ((challenges < 0) | (challenges > 2)).any():
            raise ValueError("one challenge in {0, 1, 2} per repetition")
        opened = []
        for r, e in enumerate(challenges):
            pair = []
            for p in (int(e), (int(e) + 1) % 3):
                pair.append(OpenedView(
                    self.seeds[r][p], self.explicit[r].copy() if p == 2 else None,
                    self.and_out[r, p].copy(), self.mul_out[r, p].copy(), self.commit_rand[r][p],
                ))
            opened.append(tuple(pair))
        return ResponseMessage(opened)


def sample_challenges(reps: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 3, size=reps)


def prove(ctx: ProofContext, witness, pub_bool, pub_arith, reps: int, rng: np.random.Generator,
          challenges: np.ndarray | None = None) -> NpzkProofTranscript:
    prover = Prover(ctx, witness, pub_bool, pub_arith, reps, rng)
    c = prover.commit()
    e = sample_challenges(reps, rng) if challenges is None else np.asarray(challenges)
    return NpzkProofTranscript(c, e, prover.respond(e))


def cheat_prove(ctx: ProofContext, witness, pub_bool, pub_arith, reps: int, rng: np.random.Generator,
                challenges: np.ndarray | None = None) -> tuple[NpzkProofTranscript, np.ndarray]:
    """Best single-view cheat: corrupt one party's share of the final AND gate."""
    corrupt = rng.integers(0, 3, size=reps)
    prover = Prover(ctx, witness, pub_bool, pub_arith, reps, rng, corrupt=corrupt)
    c = prover.commit()
    e = sample_challenges(reps, rng) if challenges is None else np.asarray(challenges)
    return NpzkProofTranscript(c, e, prover.respond(e)), corrupt


def verify_repetitions(ctx: ProofContext, pub_bool, pub_arith, tr: NpzkProofTranscript) -> np.ndarray:
    """Per-repetition accept flags."""
    circ = ctx.circuit
    reps = tr.reps
    e = np.asarray(tr.challenges, dtype=np.int64)
    ok = np.ones(reps, dtype=bool)
    if len(tr.response.opened) != reps or len(tr.commit.view_commits) != reps:
        return np.zeros(reps, dtype=bool)
    pid = np.stack([e, (e + 1) % 3], axis=1)
    seeds = [[v.seed for v in pair] for pair in tr.response.opened]
    try:
        tapes = make_tapes(circ, seeds)
        rec_and = np.array([[v.and_out for v in pair] for pair in tr.response.opened], dtype=np.uint8)
        rec_mul = np.array([[v.mul_out for v in pair] for pair in tr.response.opened], dtype=np.int64)
        if rec_and.shape != (reps, 2, circ.n_and) or rec_mul.shape != (reps, 2, circ.n_mul):
            return np.zeros(reps, dtype=bool)
        shares = tapes.wbits.copy()
        for r, pair in enumerate(tr.response.opened):
            for j, v in enumerate(pair):
                if pid[r, j] == 2:
                    if v.explicit is None or v.explicit.size != circ.n_witness:
                        ok[r] = False
                        continue
                    shares[r, j] = v.explicit
    except (ValueError, TypeError):
        return np.zeros(reps, dtype=bool)
    q = circ.q

    def nl(kind, offset, x, y):
        k = x.shape[-1]
        if kind == "and":
            r = tapes.abits[..., offset:offset + k]
            z0 = _and_share(x[:, 0], y[:, 0], x[:, 1], y[:, 1], r[:, 0], r[:, 1])
            rec = rec_and[..., offset:offset + k]
        else:
            r = tapes.mvals[..., offset:offset + k]
            z0 = _mul_share(x[:, 0], y[:, 0], x[:, 1], y[:, 1], r[:, 0], r[:, 1], q)
            rec = rec_mul[..., offset:offset + k]
        ok[:] &= (z0 == rec[:, 0]).all(axis=-1)
        return rec.copy()

    ev = evaluate(circ, shares, pub_bool, pub_arith, pid, nl)
    fin = ev.final(circ)
    zer = ev.zeros(circ)
    claimed_f = np.asarray(tr.commit.final_shares, dtype=np.int64)
    claimed_z = np.asarray(tr.commit.zero_shares, dtype=np.int64)
    if claimed_f.shape != (reps, 3) or claimed_z.shape != (reps, 3, circ.zero_checks.size):
        return np.zeros(reps, dtype=bool)
    rows = np.arange(reps)
    for j in range(2):
        ok &= fin[:, j] == claimed_f[rows, pid[:, j]]
        ok &= (zer[:, j] == claimed_z[rows, pid[:, j]]).all(axis=-1)
    ok &= (claimed_f.sum(axis=1) % 2) == 1
    ok &= ~(claimed_z.sum(axis=1) % q).any(axis=-1)
    for r in range(reps):
        if not ok[r]:
            continue
        for j, v in enumerate(tr.response.opened[r]):
            p = int(pid[r, j])
            d = view_digest(v.seed, v.explicit if p == 2 else None, v.and_out, v.mul_out)
            if not cm.verify(ctx.scheme, ctx.tag, tr.commit.view_commits[r][p], d, v.commit_rand):
                ok[r] = False
                break
    return ok


def verify(ctx: ProofContext, pub_bool, pub_arith, tr: NpzkProofTranscript) -> bool:
    return bool(verify_repetitions(ctx, pub_bool, pub_arith, tr).all())


def simulate_transcript(ctx: ProofContext, pub_bool, pub_arith, challenges: np.ndarray,
                        rng: np.random.Generator) -> NpzkProofTranscript:
    """Honest-verifier simulator: no witness, challenges known in advance."""
    circ = ctx.circuit
    e = np.asarray(challenges, dtype=np.int64)
    reps = e.size
    q = circ.q
    pid = np.stack([e, (e + 1) % 3], axis=1)
    seeds = [[rng.bytes(SEED_BYTES) for _ in range(2)] for _ in range(reps)]
    tapes = make_tapes(circ, seeds)
    shares = tapes.wbits.copy()
    explicit = rng.integers(0, 2, size=(reps, circ.n_witness), dtype=np.uint8)
    for j in range(2):
        sel = pid[:, j] == 2
        shares[sel, j] = explicit[sel]
    and_out = np.zeros((reps, 2, circ.n_and), dtype=np.uint8)
    mul_out = np.zeros((reps, 2, circ.n_mul), dtype=np.int64)

    def nl(kind, offset, x, y):
        k = x.shape[-1]
        if kind == "and":
            r = tapes.abits[..., offset:offset + k]
            z0 = _and_share(x[:, 0], y[:, 0], x[:, 1], y[:, 1], r[:, 0], r[:, 1])
            z1 = rng.integers(0, 2, size=z0.shape, dtype=np.uint8)
            z = np.stack([z0, z1], axis=1)
            and_out[..., offset:offset + k] = z
        else:
            r = tapes.mvals[..., offset:offset + k]
            z0 = _mul_share(x[:, 0], y[:, 0], x[:, 1], y[:, 1], r[:, 0], r[:, 1], q)
            z1 = rng.integers(0, q, size=z0.shape)
            z = np.stack([z0, z1], axis=1)
            mul_out[..., offset:offset + k] = z
        return z

    ev = evaluate(circ, shares, pub_bool, pub_arith, pid, nl)
    fin, zer = ev.final(circ), ev.zeros(circ)
    final_shares = np.zeros((reps, 3), dtype=np.uint8)
    zero_shares = np.zeros((reps, 3, circ.zero_checks.size), dtype=np.int64)
    rows = np.arange(reps)
    third = (e + 2) % 3
    for j in range(2):
        final_shares[rows, pid[:, j]] = fin[:, j]
        zero_shares[rows, pid[:, j]] = zer[:, j]
    final_shares[rows, third] = 1 ^ fin[:, 0] ^ fin[:, 1]
    zero_shares[rows, third] = (-zer[:, 0] - zer[:, 1]) % q
    commits, opened = [], []
    for r in range(reps):
        row: list = [None, None, None]
        pair = []
        for j in range(2):
            p = int(pid[r, j])
            rand = cm.random_randomness(ctx.scheme, rng)
            expl = explicit[r].copy() if p == 2 else None
            d = view_digest(seeds[r][j], expl, and_out[r, j], mul_out[r, j])
            row[p] = cm.commit(ctx.scheme, ctx.tag, d, rand)
            pair.append(OpenedView(seeds[r][j], expl, and_out[r, j].copy(), mul_out[r, j].copy(), rand))
        row[int(third[r])] = cm.commit(ctx.scheme, ctx.tag, rng.bytes(32), cm.random_randomness(ctx.scheme, rng))
        commits.append(row)
        opened.append(tuple(pair))
    return NpzkProofTranscript(CommitMessage(commits, final_shares, zero_shares), e, ResponseMessage(opened))


# ---- serialisation -----------------------------------------------------------


def commit_to_bytes(ctx: ProofContext, msg: CommitMessage) -> bytes:
    w = Writer().u32(len(msg.view_commits))
    for r, row in enumerate(msg.view_commits):
        for z in row:
            w.blob(cm.z_to_bytes(ctx.scheme, z))
        w.bits(msg.final_shares[r])
        w.ints(msg.zero_shares[r])
    return w.getvalue()


def commit_from_bytes(ctx: ProofContext, data: bytes) -> CommitMessage:
    rd = Reader(data)
    reps = rd.u32()
    commits, fin, zer = [], [], []
    for _ in range(reps):
        commits.append([cm.z_from_bytes(ctx.scheme, rd.blob()) for _ in range(3)])
        fin.append(rd.bits())
        zer.append(rd.ints().reshape(3, -1))
    rd.expect_done()
    k = ctx.circuit.zero_checks.size
    return CommitMessage(commits, np.array(fin, dtype=np.uint8).reshape(reps, 3),
                         np.array(zer, dtype=np.int64).reshape(reps, 3, k))


def challenges_to_bytes(e: np.ndarray) -> bytes:
    return Writer().blob(np.asarray(e, dtype=np.uint8).tobytes()).getvalue()


def challenges_from_bytes(data: bytes) -> np.ndarray:
    rd = Reader(data)
    e = np.frombuffer(rd.blob(), dtype=np.uint8).astype(np.int64)
    rd.expect_done()
    if (e > 2).any():
        raise DecodeError("challenge out of range")
    return e


def response_to_bytes(msg: ResponseMessage) -> bytes:
    w = Writer().u32(len(msg.opened))
    for pair in msg.opened:
        for v in pair:
            w.blob(v.seed)
            w.u8(0 if v.explicit is None else 1)
            if v.explicit is not None:
                w.bits(v.explicit)
            w.bits(v.and_out).ints(v.mul_out).bits(v.commit_rand)
    return w.getvalue()


def response_from_bytes(data: bytes) -> ResponseMessage:
    rd = Reader(data)
    opened = []
    for _ in range(rd.u32()):
        pair = []
        for _ in range(2):
            seed = rd.blob()
            explicit = rd.bits() if rd.u8() else None
            pair.append(OpenedView(seed, explicit, rd.bits(), rd.ints(), rd.bits()))
        opened.append(tuple(pair))
    rd.expect_done()
    return ResponseMessage(opened)


# ---- transparent debug backend ---------------------------------------------


def debug_prove(witness: np.ndarray) -> bytes:
    """Not zero-knowledge: the witness itself is the proof."""
    return Writer().bits(witness).getvalue()


def debug_verify(ctx: ProofContext, pub_bool, pub_arith, proof: bytes) -> bool:
    try:
        rd = Reader(proof)
        w = rd.bits()
        rd.expect_done()
    except DecodeError:
        return False
    if w.size != ctx.circuit.n_witness:
        return False
    return relation_holds(ctx.circuit, w, pub_bool, pub_arith)


# ---- the session relation --------------------------------------------------


@dataclass(frozen=True)
class RelationShape:
    """Everything public that fixes the relation circuit's structure."""

    H: xz.XZHamiltonianInstance
    m: int
    t: int
    r: np.ndarray
    r_bits: int = xz.R_BITS

    @property
    def N(self) -> int:
        return 7 ** self.t

    @property
    def n_logical(self) -> int:
        return self.m * self.H.n


def permutation_matrix_bits(perm: Sequence[int]) -> np.ndarray:
    """Row k has its single 1 in column perm[k]."""
    size = len(perm)
    P = np.zeros((size, size), dtype=np.uint8)
    P[np.arange(size), np.asarray(perm)] = 1
    return P.reshape(-1)


def key_message_bits(perm: Sequence[int], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """The committed message: one-hot permutation, then a, then b."""
    return np.concatenate([permutation_matrix_bits(perm), np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8)])


def encode_witness(shape: RelationShape, s_p: np.ndarray, traps: Sequence[Sequence[str]], perm: Sequence[int],
                   a: np.ndarray, b: np.ndarray) -> np.ndarray:
    trap_bits = np.array([[1 if x == "+" else 0 for x in row] for row in traps], dtype=np.uint8).reshape(-1)
    return np.concatenate([np.asarray(s_p, dtype=np.uint8), trap_bits, key_message_bits(perm, a, b)])


def public_inputs(z: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(boolean public inputs, arithmetic public inputs)."""
    return np.asarray(u, dtype=np.uint8), np.asarray(z, dtype=np.int64)


def _syndrome_rows(t: int, base: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Linear rows (wire lists) for the codeword checks and the logical bit of one block."""
    H = [np.flatnonzero(row) for row in HAMMING_PARITY_CHECK]
    if t == 1:
        return [base[h] for h in H], [base]
    blocks = base.reshape(7, 7)
    inner = [blocks[i][h] for i in range(7) for h in H]
    outer = [blocks[h].reshape(-1) for h in H]
    return inner + outer, [base]


def build_relation_circuit(shape: RelationShape, scheme: cm.CommitmentScheme, tag: bytes) -> Circuit:
    """Circuit for: z commits to (pi, a, b) under s_p, and Q(t, pi, a, b, r, u) = 1.

    Witness layout: s_p bits, trap bits (1 = '+'), one-hot pi (row-major), a, b.
    Public inputs: u (outcome bits of the measured blocks, in term order) and z.
    """
    if shape.t not in (1, 2):
        raise ParamsUnsupported(f"level {shape.t}")
    p = scheme.params
    H, N, nl = shape.H, shape.N, shape.n_logical
    size = 2 * N
    msg_bits = size * size + 4 * nl * N
    if msg_bits > p.max_msg_bits:
        raise ParamsUnsupported(f"commitment width {p.max_msg_bits} below message size {msg_bits}")
    cb = CircuitBuilder(p.q)
    s_p = cb.witness_bits(p.rand_bits, "s_p")
    traps = cb.witness_bits(nl * N, "traps").reshape(nl, N)
    P = cb.witness_bits(size * size, "perm").reshape(size, size)
    a = cb.witness_bits(2 * nl * N, "a")
    b = cb.witness_bits(2 * nl * N, "b")
    terms = predicates.measured_terms(H, shape.r, shape.m, shape.r_bits)
    n_meas = sum(len(mt.blocks) for mt in terms)
    u = cb.public_bits(n_meas * size)
    rows = p.extra_rows + msg_bits
    z = cb.public_ints(rows)

    # commitment opening: every row of z is linear in the lifted bits
    secret_lift = cb.lift(s_p[: p.k * p.secret_bits])
    noise_lift = cb.lift(s_p[p.k * p.secret_bits:])
    msg = np.concatenate([P.reshape(-1), a, b])
    msg_lift = cb.lift(msg)
    pw = (1 << np.arange(p.secret_bits, dtype=np.int64)) % p.q
    svec = cb.linq(
        [secret_lift[c * p.secret_bits:(c + 1) * p.secret_bits] for c in range(p.k)],
        [pw] * p.k,
    )
    tag_vec = cm.tag_vector(scheme, tag, rows)
    row_wires, row_coefs = [], []
    for j in range(rows):
        wires = [*svec, noise_lift[scheme.noise_index[j]], z[j]]
        coefs = [*scheme.A[j], 1, -1]
        if j >= p.extra_rows:
            wires.append(msg_lift[j - p.extra_rows])
            coefs.append(p.delta)
        row_wires.append(wires)
        row_coefs.append(coefs)
    cb.zero_check(cb.linq(row_wires, row_coefs, tag_vec))

    # pi is a permutation matrix: every row and column sums to one
    P_lift = msg_lift[: size * size].reshape(size, size)
    lines = [P_lift[k] for k in range(size)] + [P_lift[:, k] for k in range(size)]
    cb.zero_check(cb.linq(lines, [np.ones(size, dtype=np.int64)] * len(lines), [-1] * len(lines)))

    # undo the pad: u' = u xor c, c = a on I blocks and b on H blocks
    c_wires = []
    gate_of = []
    for mt in terms:
        for blk, g in zip(mt.blocks, mt.gates):
            src = b if g == "H" else a
            c_wires.append(src[blk * size:(blk + 1) * size])
            gate_of.append((blk, g))
    c_wires = np.concatenate(c_wires)
    u_clear = cb.xor(u, c_wires).reshape(n_meas, size)

    # un-permute: x[k] = xor_j P[k, j] u'[j]
    prod = cb.and_(np.tile(P.reshape(-1), n_meas), np.repeat(u_clear, size, axis=0).reshape(-1))
    x = cb.lin2(prod.reshape(n_meas * size, size)).reshape(n_meas, size)
    code, trap_part = x[:, :N], x[:, N:]

    ok_bits = []
    checks, logical = [], []
    for i in range(n_meas):
        syn, lg = _syndrome_rows(shape.t, code[i])
        checks.extend(syn)
        logical.extend(lg)
    ok_bits.append(cb.not_(cb.lin2(checks)))
    v = cb.lin2(logical)

    # COUNT >= threshold, with pass_j = parity(v over the term) xor [target = +1]
    k = 0
    pass_rows, pass_const = [], []
    for mt in terms:
        pass_rows.append(v[k:k + len(mt.blocks)])
        pass_const.append(1 if mt.term.target == 1 else 0)
        k += len(mt.blocks)
    passes = cb.lin2(pass_rows, pass_const)
    threshold = xz.accept_threshold(shape.m, H.a, H.b, H.weight_sum)
    ok_bits.append(np.array([_count_at_least(cb, passes, threshold)]))

    # traps: a constrained trap may not read 1
    trap_src = np.concatenate([traps[blk] for blk, _ in gate_of])
    flip = np.concatenate([np.full(N, 1 if g == "I" else 0) for _, g in gate_of])
    bad = cb.and_(trap_part.reshape(-1), cb.xor_const(trap_src, flip))
    ok_bits.append(cb.not_(bad))

    final = cb.and_all(np.concatenate(ok_bits))
    return cb.build(final)


def _full_add(cb: CircuitBuilder, x: np.ndarray, y: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = cb.lin2(np.stack([x, y, c], axis=1))
    carry = cb.xor(cb.and_(cb.xor(x, c), cb.xor(y, c)), c)
    return s, carry


def _popcount(cb: CircuitBuilder, bits: np.ndarray) -> list[np.ndarray]:
    """Little-endian bit wires of the number of ones in `bits`."""
    nums = [[np.array([w])] for w in bits]
    zero = cb.const_bits([0])
    while len(nums) > 1:
        nxt = []
        pairs = len(nums) // 2
        left, right = nums[:pairs], nums[pairs:2 * pairs]
        width = max(len(x) for x in left + right)
        L = [np.concatenate([x[i] if i < len(x) else zero for x in left]) for i in range(width)]
        Rr = [np.concatenate([x[i] if i < len(x) else zero for x in right]) for i in range(width)]
        carry = np.broadcast_to(zero, (pairs,)).copy()
        out = []
        for i in range(width):
            s, carry = _full_add(cb, L[i], Rr[i], carry)
            out.append(s)
        out.append(carry)
        nxt = [[bit[j:j + 1] for bit in out] for j in range(pairs)]
        if len(nums) % 2:
            nxt.append(nums[-1])
        nums = nxt
    return [w for w in nums[0]]


def _count_at_least(cb: CircuitBuilder, bits: np.ndarray, threshold: int) -> int:
    if threshold <= 0:
        return int(cb.one()[0])
    if threshold > bits.size:
        return int(cb.const_bits([0])[0])
    count = _popcount(cb, bits)
    width = len(count)
    K = (1 << width) - threshold
    carry = cb.const_bits([0])
    for i in range(width):
        kb = cb.const_bits([(K >> i) & 1])
        _, carry = _full_add(cb, count[i], kb, carry)
    return int(carry[0])
