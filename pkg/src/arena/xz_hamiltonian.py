"""2-local XZ Hamiltonian instances and the amplified term-sampling rules.

An instance is ``H = sum_s d_s P_s`` where every ``P_s`` is a tensor product of
at most two single-qubit X or Z Paulis, together with thresholds ``a < b``.
All arithmetic that feeds an accept/reject decision is exact (``Fraction``).

Instance text format::

    # comment
    n a b
    d q1 P1 [q2 P2]
    ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

R_BITS = 32
MAX_QUBITS = 12

Label = str  # one of "0", "1", "+", "-"


class InstanceError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class DuplicateQubit(InstanceError):
    pass


class EmptyTerm(InstanceError):
    pass


class ZeroWeight(InstanceError):
    pass


class GapNonPositive(InstanceError):
    pass


class IndexOutOfRange(InstanceError):
    pass


class LengthMismatch(InstanceError):
    pass


@dataclass(frozen=True)
class XZTerm:
    weight: Fraction
    supports: tuple[tuple[int, str], ...]

    @property
    def target(self) -> int:
        """The +-1 product of outcomes that counts as passing this term: -sign(d)."""
        return -1 if self.weight > 0 else 1

    def pauli_on(self, qubit: int) -> str | None:
        for q, p in self.supports:
            if q == qubit:
                return p
        return None


@dataclass(frozen=True)
class XZHamiltonianInstance:
    n: int
    terms: tuple[XZTerm, ...]
    a: Fraction
    b: Fraction
    weight_sum: Fraction

    @property
    def gap(self) -> Fraction:
        return self.b - self.a

    @property
    def alpha(self) -> Fraction:
        return self.a / (2 * self.weight_sum)

    @property
    def beta(self) -> Fraction:
        return self.b / (2 * self.weight_sum)


@dataclass(frozen=True)
class TermDistribution:
    cumulative: tuple[Fraction, ...]

    @property
    def probabilities(self) -> tuple[Fraction, ...]:
        prev = Fraction(0)
        out = []
        for c in self.cumulative:
            out.append(c - prev)
            prev = c
        return tuple(out)


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x).strip())


def parse_instance_text(text: str) -> dict:
    header = None
    terms = []
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if header is None:
            if len(fields) != 3:
                raise InstanceError("header must be 'n a b'", lineno)
            header = (int(fields[0]), fields[1], fields[2])
            continue
        if len(fields) not in (1, 3, 5):
            raise InstanceError("term must be 'd q1 P1 [q2 P2]'", lineno)
        supports = [(int(fields[k]), fields[k + 1].upper()) for k in range(1, len(fields), 2)]
        terms.append((fields[0], *supports))
        lines.append(lineno)
    if header is None:
        raise InstanceError("missing header line")
    n, a, b = header
    return {"n": n, "a": a, "b": b, "terms": terms, "_lines": lines}


def validate_instance(raw: dict | str, max_qubits: int = MAX_QUBITS) -> XZHamiltonianInstance:
    """Build a validated instance from a dict or from instance-format text.

    Dict terms are ``(d, (q1, P1), (q2, P2))`` with one or two supports.
    """
    if isinstance(raw, str):
        raw = parse_instance_text(raw)
    n = int(raw["n"])
    a, b = _frac(raw["a"]), _frac(raw["b"])
    lines = raw.get("_lines") or [None] * len(raw["terms"])
    if n < 1:
        raise IndexOutOfRange("n must be positive")
    if n > max_qubits:
        raise IndexOutOfRange(f"n={n} exceeds the simulation limit {max_qubits}")
    if a >= b:
        raise GapNonPositive(f"a={a} must be strictly below b={b}")
    terms = []
    for raw_term, lineno in zip(raw["terms"], lines):
        d = _frac(raw_term[0])
        supports = tuple((int(q), str(p).upper()) for q, p in raw_term[1:])
        if not supports:
            raise EmptyTerm("term has no Pauli factors", lineno)
        if len(supports) > 2:
            raise InstanceError("terms are at most 2-local", lineno)
        if d == 0:
            raise ZeroWeight("term weight must be nonzero", lineno)
        qubits = [q for q, _ in supports]
        if len(set(qubits)) != len(qubits):
            raise DuplicateQubit(f"qubit repeated in term: {qubits}", lineno)
        for q, p in supports:
            if not 0 <= q < n:
                raise IndexOutOfRange(f"qubit {q} outside [0, {n})", lineno)
            if p not in ("X", "Z"):
                raise InstanceError(f"Pauli must be X or Z, got {p!r}", lineno)
        terms.append(XZTerm(d, supports))
    if not terms:
        raise EmptyTerm("instance has no terms")
    weight_sum = sum((abs(t.weight) for t in terms), Fraction(0))
    return XZHamiltonianInstance(n, tuple(terms), a, b, weight_sum)


def instance_to_text(H: XZHamiltonianInstance) -> str:
    out = [f"{H.n} {H.a} {H.b}"]
    for t in H.terms:
        out.append(" ".join([str(t.weight)] + [f"{q} {p}" for q, p in t.supports]))
    return "\n".join(out) + "\n"


def term_distribution(H: XZHamiltonianInstance) -> TermDistribution:
    acc = Fraction(0)
    cum = []
    for t in H.terms:
        acc += abs(t.weight) / H.weight_sum
        cum.append(acc)
    return TermDistribution(tuple(cum))


def _thresholds(H: XZHamiltonianInstance, r_bits: int) -> np.ndarray:
    scale = 1 << r_bits
    # chunk c selects the first s with c < cum_s * 2^R; for integer c that is c < ceil(.)
    return np.array(
        [-((-c.numerator * scale) // c.denominator) for c in term_distribution(H).cumulative],
        dtype=np.uint64,
    )


def chunk_values(r: Sequence[int] | np.ndarray, m: int, r_bits: int = R_BITS) -> np.ndarray:
    r = np.asarray(r, dtype=np.uint64)
    if r.shape != (m * r_bits,):
        raise LengthMismatch(f"need {m * r_bits} coin bits, got {r.size}")
    weights = np.uint64(1) << np.arange(r_bits - 1, -1, -1, dtype=np.uint64)
    return (r.reshape(m, r_bits) * weights).sum(axis=1, dtype=np.uint64)


def sample_term_indices(r, H: XZHamiltonianInstance, m: int, r_bits: int = R_BITS) -> np.ndarray:
    """Map coin bits to m term indices by inverse CDF on MSB-first chunks."""
    chunks = chunk_values(r, m, r_bits)
    return np.searchsorted(_thresholds(H, r_bits), chunks, side="right").astype(np.int64)


def choose_m_for_gap(gap, eps: float, slack: float = 1e-12) -> int:
    gap = float(gap)
    if gap <= 0:
        raise GapNonPositive("beta - alpha must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")

    def ok(m: int) -> bool:
        return 2.0 * math.exp(-m * gap * gap / 8.0) <= eps * (1.0 + slack)

    m = max(1, math.ceil(8.0 * math.log(2.0 / eps) / (gap * gap)))
    while m > 1 and ok(m - 1):
        m -= 1
    while not ok(m):
        m += 1
    return m


def choose_m(a, b, weight_sum, eps: float) -> int:
    """Smallest m with 2 exp(-m (beta - alpha)^2 / 8) <= eps."""
    a, b, w = _frac(a), _frac(b), _frac(weight_sum)
    return choose_m_for_gap((b - a) / (2 * w), eps)


def accept_decision(count: int, m: int, a, b, weight_sum) -> bool:
    """Accept iff count/m is strictly closer to 1/2 - alpha than to 1/2 - beta."""
    if not 0 <= count <= m:
        raise ValueError("count must lie in [0, m]")
    w = _frac(weight_sum)
    alpha, beta = _frac(a) / (2 * w), _frac(b) / (2 * w)
    x = Fraction(count, m)
    half = Fraction(1, 2)
    return abs(x - (half - alpha)) < abs(x - (half - beta))


def accept_threshold(m: int, a, b, weight_sum) -> int:
    """Smallest count that accepts (m + 1 if none does)."""
    for c in range(m + 1):
        if accept_decision(c, m, a, b, weight_sum):
            return c
    return m + 1


def eigen_label(pauli: str, eigenvalue: int) -> Label:
    if pauli == "Z":
        return "0" if eigenvalue == 1 else "1"
    return "+" if eigenvalue == 1 else "-"


def build_rho_r(H: XZHamiltonianInstance, r, m: int, r_bits: int = R_BITS) -> list[Label]:
    """Product-state labels for m blocks that pass every selected term with certainty."""
    labels: list[Label] = ["0"] * (m * H.n)
    for j, s in enumerate(sample_term_indices(r, H, m, r_bits)):
        term = H.terms[int(s)]
        (q1, p1), *rest = term.supports
        if rest:
            (q2, p2), = rest
            labels[j * H.n + q1] = eigen_label(p1, 1)
            labels[j * H.n + q2] = eigen_label(p2, term.target)
        else:
            labels[j * H.n + q1] = eigen_label(p1, term.target)
    return labels


def term_passes(term: XZTerm, outcome_bits: Iterable[int]) -> bool:
    """Outcome bits are 0 for eigenvalue +1, 1 for eigenvalue -1."""
    parity = 0
    for bit in outcome_bits:
        parity ^= int(bit)
    return (-1) ** parity == term.target
