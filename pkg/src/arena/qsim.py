"""Dense simulation at validation scale.

Qubit 0 is the most significant tensor factor: basis index ``sum_k x_k 2^(n-1-k)``.
Covers ground states, Born-rule sampling, the trace-level decoding channel
Xi_N with its adjoint, the decoding procedure M on one encoded block, and the
maximisation behind the 2/3 soundness figure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize

from .steane import CodewordSets, EncodingKey, apply_permutation, is_member
from .xz_hamiltonian import (
    MAX_QUBITS, R_BITS, XZHamiltonianInstance, accept_decision, sample_term_indices, term_passes,
)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
HAD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

# statevector path of decode_M holds one full encoded block (2N = 14 qubits)
MAX_STATEVECTOR_QUBITS = 14


class TooManyQubits(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StateVector:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.n,):
            raise DimensionMismatch("amplitude count must be 2^n")
        if abs(np.vdot(self.amplitudes, self.amplitudes).real - 1) > 1e-10:
            raise ValueError("state is not normalised")

    def density(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0]).bit_length() - 1

    def check(self, tol: float = 1e-10) -> None:
        m = self.matrix
        if np.abs(m - m.conj().T).max() > tol:
            raise ValueError("not Hermitian")
        if abs(np.trace(m) - 1) > tol:
            raise ValueError("trace differs from 1")
        if np.linalg.eigvalsh(m).min() < -1e-8:
            raise ValueError("not positive semidefinite")


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def pauli_operator(n: int, supports: Sequence[tuple[int, str]]) -> np.ndarray:
    factors = [I2] * n
    for q, p in supports:
        factors[q] = PAULI[p]
    return kron_all(factors)


def hamiltonian_matrix(H: XZHamiltonianInstance) -> np.ndarray:
    if H.n > MAX_QUBITS:
        raise TooManyQubits(f"{H.n} qubits exceeds {MAX_QUBITS}")
    dim = 1 << H.n
    out = np.zeros((dim, dim), dtype=complex)
    for t in H.terms:
        out += float(t.weight) * pauli_operator(H.n, t.supports)
    return out


def ground_state(H: XZHamiltonianInstance) -> tuple[StateVector, float]:
    """Lowest eigenpair of the dense matrix; ties go to eigh's first column."""
    vals, vecs = np.linalg.eigh(hamiltonian_matrix(H))
    psi = vecs[:, 0]
    # fix the global phase so the output is reproducible
    k = int(np.argmax(np.abs(psi) > 1e-12))
    psi = psi * (abs(psi[k]) / psi[k])
    return StateVector(H.n, psi / np.linalg.norm(psi)), float(vals[0])


def expectation(state: StateVector, op: np.ndarray) -> float:
    return float(np.vdot(state.amplitudes, op @ state.amplitudes).real)


def _rotate_to_basis(psi: np.ndarray, n: int, bases: Sequence[str]) -> np.ndarray:
    t = psi.reshape((2,) * n)
    for q, basis in enumerate(bases):
        if basis == "X":
            t = np.moveaxis(np.tensordot(HAD, t, axes=([1], [q])), 0, q)
        elif basis != "Z":
            raise ValueError(f"unknown basis {basis!r}")
    return t.reshape(-1)


def outcome_distribution(state: StateVector, bases: Sequence[str]) -> np.ndarray:
    """Exact joint outcome probabilities, indexed like the computational basis."""
    if len(bases) != state.n:
        raise DimensionMismatch("one basis per qubit")
    p = np.abs(_rotate_to_basis(state.amplitudes, state.n, bases)) ** 2
    return p / p.sum()


def index_to_bits(idx: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1)
    return ((np.asarray(idx)[..., None] >> shifts) & 1).astype(np.uint8)


def label_one_probability(label: str, basis: str) -> float:
    if basis == "Z":
        return {"0": 0.0, "1": 1.0, "+": 0.5, "-": 0.5}[label]
    return {"+": 0.0, "-": 1.0, "0": 0.5, "1": 0.5}[label]


def sample_measurements(state, bases: Sequence[str], rng: np.random.Generator, shots: int | None = None):
    """Sample measurement bits (0 for eigenvalue +1) in the given per-qubit bases.

    ``state`` is a StateVector or a sequence of product labels in {0,1,+,-}.
    Returns shape (k,) for a single shot, else (shots, k).
    """
    count = 1 if shots is None else shots
    if isinstance(state, StateVector):
        p = outcome_distribution(state, bases)
        cdf = np.cumsum(p)
        idx = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
        out = index_to_bits(np.minimum(idx, p.size - 1), state.n)
    else:
        labels = list(state)
        if len(labels) != len(bases):
            raise DimensionMismatch("one basis per qubit")
        p1 = np.array([label_one_probability(l, b) for l, b in zip(labels, bases)])
        out = (rng.random((count, len(labels))) < p1).astype(np.uint8)
    return out[0] if shots is None else out


def collapse(state: StateVector, qubits: Sequence[int], bases: Sequence[str], outcomes: Sequence[int]) -> StateVector:
    """Post-measurement state after projecting `qubits` onto the given outcomes.

    The measured qubits are left in their post-measurement eigenstates.
    """
    t = state.amplitudes.reshape((2,) * state.n).copy()
    for q, basis, bit in zip(qubits, bases, outcomes):
        vec = np.array([1, 0], dtype=complex) if bit == 0 else np.array([0, 1], dtype=complex)
        if basis == "X":
            vec = HAD @ vec
        proj = np.outer(vec, vec.conj())
        t = np.moveaxis(np.tensordot(proj, t, axes=([1], [q])), 0, q)
    psi = t.reshape(-1)
    norm = np.linalg.norm(psi)
    if norm < 1e-12:
        raise ValueError("outcome has zero probability")
    return StateVector(state.n, psi / norm)


def amplified_verification(
    H: XZHamiltonianInstance,
    witness: StateVector,
    m: int,
    rng: np.random.Generator,
    r_bits: int = R_BITS,
) -> tuple[bool, int]:
    """One run of the bare amplified verifier on m copies of a witness state."""
    r = rng.integers(0, 2, size=m * r_bits, dtype=np.uint8)
    indices = sample_term_indices(r, H, m, r_bits)
    count = 0
    for s in np.unique(indices):
        term = H.terms[int(s)]
        bases = ["Z"] * H.n
        for q, p in term.supports:
            bases[q] = p
        shots = int(np.sum(indices == s))
        bits = sample_measurements(witness, bases, rng, shots=shots)
        support = [q for q, _ in term.supports]
        count += sum(term_passes(term, row[support]) for row in bits)
    return accept_decision(count, m, H.a, H.b, H.weight_sum), count


# ---- decoding channel and projectors -------------------------------------


@lru_cache(maxsize=None)
def _tensor_power(p: str, n: int) -> np.ndarray:
    return kron_all([PAULI[p]] * n)


def xi_channel(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=complex)
    n = int(sigma.shape[0]).bit_length() - 1
    if sigma.shape != (1 << n, 1 << n):
        raise DimensionMismatch("sigma must be 2^N x 2^N")
    if n > 10:
        raise TooManyQubits("xi_channel is evaluated densely for N <= 10")
    out = np.zeros((2, 2), dtype=complex)
    for p in "IXYZ":
        out += np.trace(_tensor_power(p, n).conj().T @ sigma) * PAULI[p]
    return out / 2


def xi_adjoint(tau: np.ndarray, n: int) -> np.ndarray:
    tau = np.asarray(tau, dtype=complex)
    if tau.shape != (2, 2):
        raise DimensionMismatch("tau must be a single-qubit operator")
    if n > 10:
        raise TooManyQubits("xi_adjoint is evaluated densely for N <= 10")
    out = np.zeros((1 << n, 1 << n), dtype=complex)
    for p in "IXYZ":
        out += np.trace(PAULI[p].conj().T @ tau) * _tensor_power(p, n)
    return out / 2


@dataclass(frozen=True)
class PauliProjectorSet:
    """Diagonals of Pi_0, Pi_1 (codeword supports) and Delta_0, Delta_1 (parity)."""

    pi0: np.ndarray
    pi1: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray


def projector_set(sets: CodewordSets) -> PauliProjectorSet:
    n = sets.N
    if n > 12:
        raise TooManyQubits("projectors are built densely")
    strings = index_to_bits(np.arange(1 << n), n)
    parity = strings.sum(axis=1) % 2
    member = np.array([is_member(sets, s) for s in strings])
    return PauliProjectorSet(
        pi0=(member & (parity == 0)).astype(np.uint8),
        pi1=(member & (parity == 1)).astype(np.uint8),
        delta0=(parity == 0).astype(np.uint8),
        delta1=(parity == 1).astype(np.uint8),
    )


# ---- one-block encoding and the decoding procedure M ----------------------


def logical_code_state(sets: CodewordSets, logical: np.ndarray) -> np.ndarray:
    """Encode a single-qubit state vector into the N-qubit code space."""
    n = sets.N
    out = np.zeros(1 << n, dtype=complex)
    weights = 1 << np.arange(n - 1, -1, -1)
    for v in (0, 1):
        words = sets.enumerate(v)
        idx = np.asarray(words, dtype=np.int64) @ weights
        out[idx] += logical[v] / np.sqrt(len(words))
    return out


def _apply_pads(t: np.ndarray, a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    # X^a Z^b as a single operator: Z first, then X
    for q, (ai, bi) in enumerate(zip(a, b)):
        if bi:
            t = np.moveaxis(np.tensordot(Z, t, axes=([1], [q])), 0, q)
        if ai:
            t = np.moveaxis(np.tensordot(X, t, axes=([1], [q])), 0, q)
    return t


def _permute_qubits(t: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Move qubit k to position perm[k]."""
    return np.transpose(t, axes=np.argsort(np.asarray(perm)))


LABEL_VECTORS = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
}


def encode_block(logical: np.ndarray, sets: CodewordSets, key: EncodingKey, block: int = 0) -> StateVector:
    """Pure-state encoding of one logical qubit: code, traps, permutation, pads."""
    n = sets.N
    if isinstance(logical, str):
        logical = LABEL_VECTORS[logical]
    code = logical_code_state(sets, np.asarray(logical, dtype=complex))
    trap = np.array([1.0 + 0j])
    for label in key.traps[block]:
        vec = np.array([1, 0], dtype=complex) if label == "0" else np.array([1, 1], dtype=complex) / np.sqrt(2)
        trap = np.kron(trap, vec)
    t = np.kron(code, trap).reshape((2,) * (2 * n))
    t = _permute_qubits(t, key.perm)
    lo, hi = block * 2 * n, (block + 1) * 2 * n
    t = _apply_pads(t, key.a[lo:hi], key.b[lo:hi])
    return StateVector(2 * n, t.reshape(-1))


def decode_M(state, N: int, perm: Sequence[int], a: Sequence[int], b: Sequence[int], has_traps: bool = True) -> np.ndarray:
    """Un-pad, un-permute, drop the trap half, then apply Xi_N.

    `state` is a StateVector (up to 14 qubits) or a density matrix (up to 12).
    """
    total = 2 * N if has_traps else N
    if isinstance(state, StateVector):
        if state.n != total:
            raise DimensionMismatch("state size does not match the block")
        if total > MAX_STATEVECTOR_QUBITS:
            raise TooManyQubits(f"{total} qubits")
        t = state.amplitudes.reshape((2,) * total)
        t = _apply_pads(t, a, b)
        t = _permute_qubits(t, np.argsort(np.asarray(perm)))
        mat = t.reshape(1 << N, -1)
        rho = mat @ mat.conj().T
    else:
        rho = np.asarray(state, dtype=complex)
        if rho.shape != (1 << total, 1 << total):
            raise DimensionMismatch("state size does not match the block")
        if total > MAX_QUBITS:
            raise TooManyQubits(f"{total} qubits")
        dim = (2,) * total
        t = rho.reshape(dim + dim)
        for side in (0, total):
            axes = list(range(2 * total))
            t = _apply_pads(np.moveaxis(t, axes[side:side + total], range(total)), a, b)
            t = np.moveaxis(t, range(total), axes[side:side + total])
        inv = np.argsort(np.asarray(perm))
        order = np.argsort(inv)
        t = np.transpose(t, axes=list(order) + [total + k for k in order])
        t = t.reshape(1 << N, 1 << (total - N), 1 << N, 1 << (total - N))
        rho = np.einsum("ikjk->ij", t)
    return xi_channel(rho)


# ---- soundness figure -----------------------------------------------------


def soundness_f(p_t: float, p_h: float) -> float:
    return 0.5 * (1 - p_t + (1 - p_h) * (p_h + np.sqrt(p_t)))


def soundness_bound_max() -> tuple[tuple[float, float], float]:
    """Numerically maximise f over the unit square (multi-start, bounded)."""
    best = None
    for x0 in ((0.5, 0.5), (0.05, 0.1), (0.9, 0.9), (0.2, 0.6)):
        res = optimize.minimize(
            lambda p: -soundness_f(p[0], p[1]),
            x0=np.array(x0),
            bounds=[(1e-12, 1.0), (0.0, 1.0)],
            method="L-BFGS-B",
            options={"ftol": 1e-15, "gtol": 1e-12},
        )
        if best is None or res.fun < best.fun:
            best = res
    res = optimize.minimize(
        lambda p: -soundness_f(p[0], p[1]), best.x, method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-15},
    )
    point = (float(res.x[0]), float(res.x[1]))
    return point, float(soundness_f(*point))
