"""Classical stand-in for the honest quantum prover, plus cheating parties.

A real prover commits to its encoded state in superposition and learns nothing
about the verifier's basis choice. A classical emulator cannot do that, so the
harness hands it a :class:`TrapdoorOracle` that reveals the basis pattern h and
the verifier's trapdoors. With it the emulator samples exactly the outcome
distribution the quantum prover would induce:

1. logical outcomes of every Z-measured (I-gate) qubit are sampled first,
   jointly per witness copy, and the copy's state is collapsed on them;
2. each X-measured (H-gate) qubit gets two conditional samples from the
   collapsed state: its Z outcome, used if the round is a test round, and its
   X outcome, which the Hadamard round must reveal;
3. logical outcomes become physical outcomes of the encoded, trapped, permuted
   and padded blocks through ``steane.sample_encoded_measurement``.

In the Hadamard round the emulator reveals ``beta' = target xor d.(x0 xor x1)``
using both preimages from the oracle, so the verifier decodes exactly
``target``. This is emulation, not cryptography.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import commitment as cm
from . import etcff, npzk, predicates, qsim, steane
from . import rng as arena_rng
from . import xz_hamiltonian as xz
from .protocol import SessionPublic, Verifier, coin_result
from .wire import (
    Abort, CoinCommit, CommitStrings, EtcffKeys, HadamardReveal, Message, NpzkMsg, ProverCoins,
    ProverKeyCommit, RoundChoice, TestReveal, Verdict, VerifierOpen,
)

GROUND_STATE_MAX_QUBITS = 10
GROUND_STATE_MAX_LOGICAL = 24


class WitnessError(ValueError):
    pass


@dataclass(frozen=True)
class WitnessSpec:
    """How the emulator obtains the witness state.

    ``ground_state``: exact ground state of the instance (copies are independent).
    ``product_labels``: a product state, one label per instance qubit.
    ``rho_r_oracle``: the product state that passes the session's own term choice.
    """

    mode: str
    labels: tuple[str, ...] | None = None

    def check(self, H: xz.XZHamiltonianInstance, m: int) -> None:
        if self.mode == "ground_state":
            if H.n > GROUND_STATE_MAX_QUBITS or H.n * m > GROUND_STATE_MAX_LOGICAL:
                raise WitnessError("ground_state mode is capped at 10 qubits and 24 logical qubits")
        elif self.mode == "product_labels":
            if self.labels is None or len(self.labels) != H.n:
                raise WitnessError("product_labels needs one label per instance qubit")
            if any(lab not in steane.LOGICAL_LABELS for lab in self.labels):
                raise WitnessError(f"labels must be in {steane.LOGICAL_LABELS}")
        elif self.mode != "rho_r_oracle":
            raise WitnessError(f"unknown witness mode {self.mode!r}")


class TrapdoorOracle:
    """Read access to the verifier's basis choice and trapdoors (harness only)."""

    def __init__(self, verifier: Verifier):
        self._verifier = verifier

    def h(self) -> np.ndarray:
        return self._verifier.h.copy()

    def r(self) -> np.ndarray:
        return self._verifier.r.copy()

    def preimages(self, i: int, y: np.ndarray) -> dict[int, np.ndarray]:
        kp = self._verifier.keypairs[i]
        return {b: x for b, x in etcff.recover_preimages(kp.key, kp.R, y, self._verifier.pub.config.lwe)}


def block_gates_from_h(h: np.ndarray, n_logical: int, N: int) -> list[str]:
    return ["H" if h[2 * N * k] else "I" for k in range(n_logical)]


def sample_logical_outcomes(
    state, H: xz.XZHamiltonianInstance, m: int, gates: Sequence[str], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(Z outcomes for a test round, mixed-basis outcomes for a Hadamard round) per logical qubit.

    `state` is a StateVector of one witness copy, or a list of m * H.n product labels.
    On I-gate qubits both arrays agree.
    """
    n = H.n
    z_out = np.zeros(m * n, dtype=np.uint8)
    mixed = np.zeros(m * n, dtype=np.uint8)
    for j in range(m):
        g = gates[j * n:(j + 1) * n]
        I_q = [l for l in range(n) if g[l] == "I"]
        H_q = [l for l in range(n) if g[l] == "H"]
        if isinstance(state, qsim.StateVector):
            first = qsim.sample_measurements(state, ["Z"] * n, rng)
            post = qsim.collapse(state, I_q, ["Z"] * len(I_q), first[I_q]) if I_q else state
            zs = qsim.sample_measurements(post, ["Z"] * n, rng)
            xs = qsim.sample_measurements(post, ["X" if l in H_q else "Z" for l in range(n)], rng)
            zbits = np.where(np.isin(np.arange(n), I_q), first, zs)
            xbits = np.where(np.isin(np.arange(n), I_q), first, xs)
        else:
            labels = list(state[j * n:(j + 1) * n])
            zbits = qsim.sample_measurements(labels, ["Z"] * n, rng)
            xs = qsim.sample_measurements(labels, ["X"] * n, rng)
            xbits = np.where(np.array([gg == "H" for gg in g]), xs, zbits)
        z_out[j * n:(j + 1) * n] = zbits
        mixed[j * n:(j + 1) * n] = xbits
    return z_out, mixed


def physical_outcomes(
    z_logical: np.ndarray, mixed_logical: np.ndarray, gates: Sequence[str], key: steane.EncodingKey,
    rng: np.random.Generator, sets: steane.CodewordSets,
) -> tuple[np.ndarray, np.ndarray]:
    """Physical standard-basis outcomes (beta) and Hadamard-round targets of every physical qubit."""
    n = len(gates)
    z_labels = [xz.eigen_label("Z", 1 - 2 * int(v)) for v in z_logical]
    beta = steane.sample_encoded_measurement(z_labels, key, ["Z"] * n, rng, sets)
    mixed_labels = [xz.eigen_label("X" if g == "H" else "Z", 1 - 2 * int(v)) for g, v in zip(gates, mixed_logical)]
    bases = ["X" if g == "H" else "Z" for g in gates]
    target = steane.sample_encoded_measurement(mixed_labels, key, bases, rng, sets)
    is_h = predicates.physical_gates(gates, key.N).astype(bool)
    return beta, np.where(is_h, target, beta).astype(np.uint8)


class HonestProver:
    """Message handler for the honest prover; strategies override the hooks."""

    def __init__(self, pub: SessionPublic, witness: WitnessSpec, oracle: TrapdoorOracle, seed: int | bytes):
        c = pub.config
        witness.check(c.instance, c.m)
        self.pub = pub
        self.witness = witness
        self.oracle = oracle
        self.seed = seed
        self.sets = pub.sets()
        self.abort_reason: str | None = None
        self.key = steane.gen_encoding_key(c.n_logical, c.N, arena_rng.stream(seed, "encoding-key"),
                                           rand_bits=pub.scheme.params.rand_bits)
        self.z: np.ndarray | None = None
        self.coin_commit: np.ndarray | None = None
        self.r_p = arena_rng.bits(arena_rng.stream(seed, "r_p"), c.r_len)
        self.keys: list[etcff.EtcffKey] = []
        self.beta = self.target = self.x = self.y = None
        self.npzk_prover: npzk.Prover | None = None
        self.npzk_ctx: npzk.ProofContext | None = None
        self.finished = False

    # ---- hooks
    def _witness_state(self):
        c = self.pub.config
        if self.witness.mode == "ground_state":
            return qsim.ground_state(c.instance)[0]
        if self.witness.mode == "product_labels":
            return list(self.witness.labels) * c.m
        return xz.build_rho_r(c.instance, self.oracle.r(), c.m)

    def _commit_strings(self) -> CommitStrings:
        c = self.pub.config
        g = arena_rng.stream(self.seed, "outcomes")
        gates = block_gates_from_h(self.oracle.h(), c.n_logical, c.N)
        z_log, mixed_log = sample_logical_outcomes(self._witness_state(), c.instance, c.m, gates, g)
        self.beta, self.target = physical_outcomes(z_log, mixed_log, gates, self.key, g, self.sets)
        gx = arena_rng.stream(self.seed, "preimages")
        self.x = np.array([etcff.uniform_preimage(c.lwe, gx) for _ in range(c.n_physical)])
        self.y = np.array([etcff.eval_sample(k, int(b), x, c.lwe, gx) for k, b, x in zip(self.keys, self.beta, self.x)])
        return CommitStrings(self.y)

    def _test_reveal(self) -> Message:
        return TestReveal(self.beta.copy(), self.x.copy())

    def _hadamard_reveal(self) -> Message:
        c = self.pub.config
        g = arena_rng.stream(self.seed, "hadamard")
        h = self.oracle.h()
        d = g.integers(0, 2, size=(c.n_physical, c.lwe.w_pre), dtype=np.uint8)
        beta = g.integers(0, 2, size=c.n_physical, dtype=np.uint8)
        for i in np.flatnonzero(h):
            pre = self.oracle.preimages(int(i), self.y[i])
            if set(pre) == {0, 1}:
                beta[i] = (int(self.target[i]) + int(np.dot(d[i], pre[0] ^ pre[1]))) % 2
        return HadamardReveal(beta, d)

    # ---- protocol
    def _abort(self, reason: str) -> list[Message]:
        self.abort_reason = reason
        self.finished = True
        return [Abort(reason)]

    def start(self) -> list[Message]:
        msg = npzk.key_message_bits(self.key.perm, self.key.a, self.key.b)
        self.z = cm.commit(self.pub.scheme, self.pub.tag, msg, self.key.s_p)
        return [ProverKeyCommit(self.z)]

    def step(self, msg: Message) -> list[Message]:
        if self.finished or isinstance(msg, Verdict):
            self.finished = True
            return []
        if isinstance(msg, CoinCommit):
            self.coin_commit = msg.c
            return [ProverCoins(self.r_p.copy())]
        if isinstance(msg, EtcffKeys):
            self.keys = [etcff.EtcffKey(A, v) for A, v in zip(msg.A, msg.v)]
            if len(self.keys) != self.pub.config.n_physical:
                return self._abort("KeyCountMismatch")
            return [self._commit_strings()]
        if isinstance(msg, RoundChoice):
            return [self._hadamard_reveal() if msg.hadamard else self._test_reveal()]
        if isinstance(msg, VerifierOpen):
            return self._on_open(msg)
        if isinstance(msg, NpzkMsg) and msg.kind == NpzkMsg.CHALLENGE and self.npzk_prover is not None:
            try:
                e = npzk.challenges_from_bytes(msg.payload)
                resp = self.npzk_prover.respond(e)
            except ValueError:
                return self._abort("BadChallenge")
            return [NpzkMsg(NpzkMsg.RESPONSE, npzk.response_to_bytes(resp))]
        return self._abort(f"Unexpected {msg.name}")

    def _on_open(self, msg: VerifierOpen) -> list[Message]:
        c = self.pub.config
        if not cm.verify(self.pub.scheme, self.pub.tag, self.coin_commit, msg.r_v, msg.s_v):
            return self._abort("CoinOpenInvalid")
        if len(msg.trapdoors) != c.n_physical or not all(
            etcff.trapdoor_key_check(k, R, c.lwe) for k, R in zip(self.keys, msg.trapdoors)
        ):
            return self._abort("TrapdoorInvalid")
        if msg.outcomes.shape != (c.n_physical,):
            return self._abort("OutcomeLength")
        r = coin_result(msg.r_v, self.r_p)
        u = predicates.extract_u(msg.outcomes, c.instance, r, c.m, c.N)
        k = self.key
        if not predicates.predicate_Q(k.traps, k.perm, k.a, k.b, r, u, c.instance, c.m, self.sets):
            return self._abort("QFailed")
        ctx = self.pub.proof_context(r)
        shape = npzk.RelationShape(c.instance, c.m, c.t, r)
        w = npzk.encode_witness(shape, k.s_p, k.traps, k.perm, k.a, k.b)
        pb, pa = npzk.public_inputs(self.z, u)
        if c.backend == "debug":
            return [NpzkMsg(NpzkMsg.DEBUG, npzk.debug_prove(w))]
        self.npzk_ctx = ctx
        self.npzk_prover = npzk.Prover(ctx, w, pb, pa, c.reps, arena_rng.stream(self.seed, "npzk"))
        return [NpzkMsg(NpzkMsg.COMMIT, npzk.commit_to_bytes(ctx, self.npzk_prover.commit()))]


def honest_prover_emulator(pub: SessionPublic, witness: WitnessSpec, oracle: TrapdoorOracle, seed) -> HonestProver:
    return HonestProver(pub, witness, oracle, seed)


# ---- cheating provers ------------------------------------------------------


class GuessR(HonestProver):
    """Honest except the witness is the product state passing a guessed coin string.

    The guess equals the true r with probability `hit_probability` (the harness
    models a 1-of-S guess this way) and is uniform otherwise.
    """

    def __init__(self, pub, oracle, seed, hit_probability: float):
        super().__init__(pub, WitnessSpec("rho_r_oracle"), oracle, seed)
        g = arena_rng.stream(seed, "guess")
        self.hit = bool(g.random() < hit_probability)
        self._miss = arena_rng.bits(g, pub.config.r_len)

    def _witness_state(self):
        c = self.pub.config
        r_hat = self.oracle.r() if self.hit else self._miss
        return xz.build_rho_r(c.instance, r_hat, c.m)


class RandomOutcomes(HonestProver):
    """Publishes uniform images and uniform reveals."""

    def __init__(self, pub, oracle, seed):
        super().__init__(pub, WitnessSpec("rho_r_oracle"), oracle, seed)

    def _commit_strings(self) -> CommitStrings:
        c = self.pub.config
        g = arena_rng.stream(self.seed, "random-outcomes")
        self.y = g.integers(0, c.lwe.q, size=(c.n_physical, c.lwe.m_lwe), dtype=np.int64)
        return CommitStrings(self.y)

    def _test_reveal(self):
        c = self.pub.config
        g = arena_rng.stream(self.seed, "random-reveal")
        x = np.array([etcff.uniform_preimage(c.lwe, g) for _ in range(c.n_physical)])
        return TestReveal(g.integers(0, 2, size=c.n_physical, dtype=np.uint8), x)

    def _hadamard_reveal(self):
        c = self.pub.config
        g = arena_rng.stream(self.seed, "random-reveal")
        return HadamardReveal(g.integers(0, 2, size=c.n_physical, dtype=np.uint8),
                              g.integers(0, 2, size=(c.n_physical, c.lwe.w_pre), dtype=np.uint8))


class WrongPreimage(HonestProver):
    """Honest images, but one preimage bit is flipped in the test-round reveal."""

    def __init__(self, pub, witness, oracle, seed):
        super().__init__(pub, witness, oracle, seed)
        g = arena_rng.stream(seed, "wrong-preimage")
        self.corrupt_index = int(g.integers(0, pub.config.n_physical))
        self.corrupt_bit = int(g.integers(0, pub.config.lwe.w_pre))

    def _test_reveal(self):
        x = self.x.copy()
        x[self.corrupt_index, self.corrupt_bit] ^= 1
        return TestReveal(self.beta.copy(), x)


# ---- cheating verifiers ----------------------------------------------------


class BadTrapdoor(Verifier):
    """Honest keys, garbage trapdoors in the opening."""

    def _make_open(self) -> VerifierOpen:
        msg = super()._make_open()
        g = arena_rng.stream(self.seed, "bad-trapdoor")
        q = self.pub.config.lwe.q
        msg.trapdoors = [g.integers(-(q // 2), q // 2, size=R.shape) for R in msg.trapdoors]
        return msg


class MalformedKey(Verifier):
    """One key has offset error strictly between B_f and B_g."""

    def _make_keys(self):
        pairs = super()._make_keys()
        p = self.pub.config.lwe
        g = arena_rng.stream(self.seed, "malformed-key")
        i = int(g.integers(0, len(pairs)))
        kp = pairs[i]
        s = g.integers(0, p.domain_size, size=p.n_lwe)
        e = g.integers(-(p.B_f - 1), p.B_f, size=p.m_lwe)
        e[int(g.integers(0, p.m_lwe))] = int(g.integers(p.B_f + 1, p.B_g)) * (1 if g.random() < 0.5 else -1)
        v = (s @ kp.key.A + e) % p.q
        pairs[i] = etcff.EtcffKeyPair(kp.kind, etcff.EtcffKey(kp.key.A, v), kp.R, s, e)
        self.malformed_index = i
        return pairs


class TamperOutcomes(Verifier):
    """XORs a uniformly placed weight-W string into the reported outcomes."""

    def __init__(self, pub, seed, weight: int):
        super().__init__(pub, seed)
        self.weight = weight

    def _make_open(self) -> VerifierOpen:
        msg = super()._make_open()
        g = arena_rng.stream(self.seed, "tamper")
        pos = g.choice(msg.outcomes.size, size=self.weight, replace=False)
        msg.outcomes[pos] ^= 1
        return msg


class BiasCoins(Verifier):
    """Opens a different r_v than the one committed, steering r after seeing r_p."""

    def _make_open(self) -> VerifierOpen:
        msg = super()._make_open()
        # aim for r = 0...0, i.e. always the first term
        msg.r_v = self.r_p.copy()
        if np.array_equal(msg.r_v, self.r_v):
            msg.r_v[0] ^= 1
        return msg


CHEAT_VERIFIERS = {"BadTrapdoor": BadTrapdoor, "MalformedKey": MalformedKey, "BiasCoins": BiasCoins}


def make_verifier(strategy: str | None, pub: SessionPublic, seed, weight: int = 0) -> Verifier:
    if strategy in (None, "honest"):
        return Verifier(pub, seed)
    if strategy == "TamperOutcomes":
        return TamperOutcomes(pub, seed, weight)
    return CHEAT_VERIFIERS[strategy](pub, seed)
