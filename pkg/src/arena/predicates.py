"""The transversal layer chosen by the coin string and the prover's predicates.

Logical qubit ``j * H.n + l`` is qubit l of witness copy j; its encoding block
occupies physical positions ``[2N (j*H.n + l), 2N (j*H.n + l + 1))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import steane
from . import xz_hamiltonian as xz
from .steane import CodewordSets


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MeasuredTerm:
    copy: int
    term: xz.XZTerm
    blocks: tuple[int, ...]
    gates: tuple[str, ...]


@dataclass(frozen=True)
class PredicateResult:
    ok: bool
    reason: str | None = None
    count: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def measured_terms(H: xz.XZHamiltonianInstance, r, m: int, r_bits: int = xz.R_BITS) -> list[MeasuredTerm]:
    out = []
    for j, s in enumerate(xz.sample_term_indices(r, H, m, r_bits)):
        term = H.terms[int(s)]
        blocks = tuple(j * H.n + q for q, _ in term.supports)
        gates = tuple("H" if p == "X" else "I" for _, p in term.supports)
        out.append(MeasuredTerm(j, term, blocks, gates))
    return out


def compute_U_r(H: xz.XZHamiltonianInstance, r, m: int, r_bits: int = xz.R_BITS) -> list[str]:
    gates = ["I"] * (m * H.n)
    for mt in measured_terms(H, r, m, r_bits):
        for blk, g in zip(mt.blocks, mt.gates):
            gates[blk] = g
    return gates


def physical_gates(gates: Sequence[str], N: int) -> np.ndarray:
    """Replicate each block gate over its 2N physical qubits; 1 marks H."""
    return np.repeat(np.array([g == "H" for g in gates], dtype=np.uint8), 2 * N)


def verifier_choose_h(r, H: xz.XZHamiltonianInstance, m: int, N: int, r_bits: int = xz.R_BITS) -> np.ndarray:
    return physical_gates(compute_U_r(H, r, m, r_bits), N)


def conjugate_pauli_keys(a: np.ndarray, b: np.ndarray, gates_phys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b, g = (np.asarray(v, dtype=np.uint8) for v in (a, b, gates_phys))
    if not a.shape == b.shape == g.shape:
        raise LengthMismatch("a, b and gates must have equal length")
    return np.where(g == 1, b, a), np.where(g == 1, a, b)


def measured_positions(H: xz.XZHamiltonianInstance, r, m: int, N: int, r_bits: int = xz.R_BITS) -> np.ndarray:
    """Physical indices of the measured blocks, concatenated in term order."""
    idx = [np.arange(2 * N * blk, 2 * N * (blk + 1)) for mt in measured_terms(H, r, m, r_bits) for blk in mt.blocks]
    return np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)


def extract_u(outcomes: np.ndarray, H: xz.XZHamiltonianInstance, r, m: int, N: int, r_bits: int = xz.R_BITS) -> np.ndarray:
    return np.asarray(outcomes, dtype=np.uint8)[measured_positions(H, r, m, N, r_bits)]


def predicate_R_r(
    traps: Sequence[Sequence[str]],
    perm: Sequence[int],
    u: np.ndarray,
    r,
    H: xz.XZHamiltonianInstance,
    m: int,
    sets: CodewordSets,
    r_bits: int = xz.R_BITS,
) -> PredicateResult:
    N = sets.N
    terms = measured_terms(H, r, m, r_bits)
    u = np.asarray(u, dtype=np.uint8)
    total_blocks = sum(len(mt.blocks) for mt in terms)
    if u.shape != (total_blocks * 2 * N,):
        return PredicateResult(False, "length")
    blocks = u.reshape(total_blocks, 2 * N)
    q, z = steane.invert_block_split(blocks, perm)
    logical = steane.decode_many(q, sets.t)
    if (logical < 0).any():
        return PredicateResult(False, "codeword")
    count = 0
    k = 0
    trap_ok = True
    for mt in terms:
        bits = []
        for blk, gate in zip(mt.blocks, mt.gates):
            bits.append(int(logical[k]))
            trap_ok &= steane.trap_check(z[k], traps[blk], gate)
            k += 1
        count += xz.term_passes(mt.term, bits)
    if not xz.accept_decision(count, m, H.a, H.b, H.weight_sum):
        return PredicateResult(False, "count", count)
    if not trap_ok:
        return PredicateResult(False, "trap", count)
    return PredicateResult(True, None, count)


def predicate_Q(
    traps: Sequence[Sequence[str]],
    perm: Sequence[int],
    a: np.ndarray,
    b: np.ndarray,
    r,
    u: np.ndarray,
    H: xz.XZHamiltonianInstance,
    m: int,
    sets: CodewordSets,
    r_bits: int = xz.R_BITS,
) -> PredicateResult:
    gates = physical_gates(compute_U_r(H, r, m, r_bits), sets.N)
    c, _ = conjugate_pauli_keys(a, b, gates)
    pos = measured_positions(H, r, m, sets.N, r_bits)
    u = np.asarray(u, dtype=np.uint8)
    if u.shape != pos.shape:
        return PredicateResult(False, "length")
    return predicate_R_r(traps, perm, u ^ c[pos], r, H, m, sets, r_bits)
