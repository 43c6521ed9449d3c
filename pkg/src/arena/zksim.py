"""Witness-free simulator for the prover's side of a session.

The simulator never sees a witness. It replaces the witness with the product
state that passes the coin string's own term choice, commits to a fixed dummy
encoding key, and fixes up the Z-pad afterwards so the prover's predicate
holds on whatever the verifier reports. It needs two capabilities that a real
prover lacks, both obtained by rewinding a black-box copy of the verifier:

* the verifier's coin share, read from a dummy run up to its opening, so the
  joint coin string equals a string drawn from ``coins`` beforehand;
* the verifier's NP-ZK challenge, read by sending a throwaway commitment, so
  the proof transcript can be simulated with the challenge known in advance.

Only honest-verifier simulation of the NP-ZK stage is supported: a verifier
whose challenge depends on the commitment makes the simulator abort with
``SimulationFailed``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import commitment as cm
from . import etcff, npzk, predicates, steane
from . import rng as arena_rng
from . import xz_hamiltonian as xz
from .protocol import ProtocolViolation, SessionPublic, Verifier, coin_result
from .wire import (
    Abort, CoinCommit, CommitStrings, EtcffKeys, HadamardReveal, Message, NpzkMsg, ProverCoins,
    ProverKeyCommit, RoundChoice, TestReveal, Verdict, VerifierOpen,
)


def coins(length: int, rng: np.random.Generator) -> np.ndarray:
    return arena_rng.bits(rng, length)


@dataclass
class SimulatorTape:
    r: np.ndarray
    key: steane.EncodingKey
    z: np.ndarray
    beta: np.ndarray | None = None
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None  # (n_physical, w_pre + 1): first column is the revealed bit
    b_fixed: np.ndarray | None = None


def dummy_key_message(n: int, N: int) -> np.ndarray:
    """Commitment message for the identity permutation and all-zero pads."""
    return npzk.key_message_bits(tuple(range(2 * N)), np.zeros(2 * n * N, np.uint8), np.zeros(2 * n * N, np.uint8))


def simulate_key_commit(pub: SessionPublic, rng: np.random.Generator) -> SimulatorTape:
    """Draw the coin string and an honest-distributed key; commit to the dummy key instead.

    The commitment randomness is a local and is gone when this returns.
    """
    c = pub.config
    r = coins(c.r_len, rng)
    key = steane.gen_encoding_key(c.n_logical, c.N, rng, rand_bits=pub.scheme.params.rand_bits)
    s_p = cm.random_randomness(pub.scheme, rng)
    z = cm.commit(pub.scheme, pub.tag, dummy_key_message(c.n_logical, c.N), s_p)
    key = dataclasses.replace(key, s_p=np.zeros(0, np.uint8))
    return SimulatorTape(r, key, z)


def simulate_commit_strings(pub: SessionPublic, tape: SimulatorTape, keys: list[etcff.EtcffKey],
                            rng: np.random.Generator, sets: steane.CodewordSets) -> CommitStrings:
    c = pub.config
    labels = xz.build_rho_r(c.instance, tape.r, c.m)
    tape.beta = steane.sample_encoded_measurement(labels, tape.key, ["Z"] * c.n_logical, rng, sets)
    tape.x = np.array([etcff.uniform_preimage(c.lwe, rng) for _ in range(c.n_physical)])
    tape.y = np.array([etcff.eval_sample(k, int(b), x, c.lwe, rng) for k, b, x in zip(keys, tape.beta, tape.x)])
    return CommitStrings(tape.y)


def simulate_reveal(pub: SessionPublic, tape: SimulatorTape, hadamard: bool, rng: np.random.Generator) -> Message:
    c = pub.config
    if not hadamard:
        return TestReveal(tape.beta.copy(), tape.x.copy())
    tape.s = rng.integers(0, 2, size=(c.n_physical, c.lwe.w_pre + 1), dtype=np.uint8)
    return HadamardReveal(tape.s[:, 0].copy(), tape.s[:, 1:].copy())


def derive_h_from_trapdoors(key: etcff.EtcffKey, R: np.ndarray, params: etcff.LweParams) -> int:
    """1 for a claw-free key, 0 for an injective one; assumes trapdoor_key_check passed."""
    return 1 if etcff.key_kind_from_trapdoor(key, R, params) == "f" else 0


def fix_z_pad(pub: SessionPublic, tape: SimulatorTape, keys, trapdoors, rng: np.random.Generator,
              sets: steane.CodewordSets) -> np.ndarray:
    """Z-pad under which the verifier's decoded Hadamard-round bits look like honest X outcomes."""
    c = pub.config
    labels = xz.build_rho_r(c.instance, tape.r, c.m)
    unpadded = dataclasses.replace(tape.key, b=np.zeros_like(tape.key.b))
    raw_x = steane.sample_encoded_measurement(labels, unpadded, ["X"] * c.n_logical, rng, sets)
    b_fixed = tape.key.b.copy()
    for i, (k, R) in enumerate(zip(keys, trapdoors)):
        if not derive_h_from_trapdoors(k, R, c.lwe):
            continue
        pre = dict(etcff.recover_preimages(k, R, tape.y[i], c.lwe))
        mask = int(np.dot(tape.s[i, 1:], pre[0] ^ pre[1])) % 2 if set(pre) == {0, 1} else 0
        b_fixed[i] = raw_x[i] ^ tape.s[i, 0] ^ mask
    return b_fixed


class Simulator:
    """Plays the prover's role against `verifier`, which it may clone to rewind."""

    def __init__(self, pub: SessionPublic, verifier: Verifier, seed: int | bytes):
        self.pub = pub
        self._verifier = verifier
        self.seed = seed
        self.sets = pub.sets()
        self.tape = simulate_key_commit(pub, arena_rng.stream(seed, "sim-key"))
        self.abort_reason: str | None = None
        self.finished = False
        self.coin_commit: np.ndarray | None = None
        self.r_p: np.ndarray | None = None
        self.keys: list[etcff.EtcffKey] = []
        self.npzk_transcript: npzk.NpzkProofTranscript | None = None

    def _abort(self, reason: str) -> list[Message]:
        self.abort_reason = reason
        self.finished = True
        return [Abort(reason)]

    def _rewind_coin_share(self) -> np.ndarray | None:
        """The verifier's coin share as opened in a dummy continuation, if it opens validly."""
        c = self.pub.config
        g = arena_rng.stream(self.seed, "sim-rewind-coins")
        v = self._verifier.clone()
        try:
            keys_msg = v.step(ProverCoins(coins(c.r_len, g)))[0]
            keys = [etcff.EtcffKey(A, vv) for A, vv in zip(keys_msg.A, keys_msg.v)]
            y = np.array([etcff.eval_sample(k, 0, etcff.uniform_preimage(c.lwe, g), c.lwe, g) for k in keys])
            choice = v.step(CommitStrings(y))[0]
            if not isinstance(choice, RoundChoice) or not choice.hadamard:
                return None
            opened = v.step(HadamardReveal(g.integers(0, 2, size=c.n_physical, dtype=np.uint8),
                                           g.integers(0, 2, size=(c.n_physical, c.lwe.w_pre), dtype=np.uint8)))[0]
        except (ProtocolViolation, IndexError, AttributeError, ValueError):
            return None
        if not isinstance(opened, VerifierOpen):
            return None
        if not cm.verify(self.pub.scheme, self.pub.tag, self.coin_commit, opened.r_v, opened.s_v):
            return None
        return opened.r_v

    def _rewind_challenge(self, ctx: npzk.ProofContext, pb, pa) -> np.ndarray | None:
        c = self.pub.config
        g = arena_rng.stream(self.seed, "sim-rewind-challenge")
        probe = npzk.simulate_transcript(ctx, pb, pa, npzk.sample_challenges(c.reps, g), g)
        v = self._verifier.clone()
        try:
            reply = v.step(NpzkMsg(NpzkMsg.COMMIT, npzk.commit_to_bytes(ctx, probe.commit)))[0]
            if not isinstance(reply, NpzkMsg) or reply.kind != NpzkMsg.CHALLENGE:
                return None
            return npzk.challenges_from_bytes(reply.payload)
        except (ProtocolViolation, IndexError, ValueError):
            return None

    def start(self) -> list[Message]:
        return [ProverKeyCommit(self.tape.z)]

    def step(self, msg: Message) -> list[Message]:
        if self.finished or isinstance(msg, Verdict):
            self.finished = True
            return []
        c = self.pub.config
        if isinstance(msg, CoinCommit):
            self.coin_commit = msg.c
            r_v = self._rewind_coin_share()
            if r_v is None:
                self.r_p = coins(c.r_len, arena_rng.stream(self.seed, "sim-r_p"))
            else:
                self.r_p = coin_result(r_v, self.tape.r)
            return [ProverCoins(self.r_p.copy())]
        if isinstance(msg, EtcffKeys):
            self.keys = [etcff.EtcffKey(A, v) for A, v in zip(msg.A, msg.v)]
            if len(self.keys) != c.n_physical:
                return self._abort("KeyCountMismatch")
            return [simulate_commit_strings(self.pub, self.tape, self.keys,
                                            arena_rng.stream(self.seed, "sim-strings"), self.sets)]
        if isinstance(msg, RoundChoice):
            return [simulate_reveal(self.pub, self.tape, msg.hadamard, arena_rng.stream(self.seed, "sim-reveal"))]
        if isinstance(msg, VerifierOpen):
            return self._on_open(msg)
        if isinstance(msg, NpzkMsg) and msg.kind == NpzkMsg.CHALLENGE and self.npzk_transcript is not None:
            e = npzk.challenges_from_bytes(msg.payload)
            if not np.array_equal(e, self.npzk_transcript.challenges):
                return self._abort("SimulationFailed")
            return [NpzkMsg(NpzkMsg.RESPONSE, npzk.response_to_bytes(self.npzk_transcript.response))]
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
        if c.backend != "mpc":
            return self._abort("SimulationUnsupported")
        tape = self.tape
        tape.b_fixed = fix_z_pad(self.pub, tape, self.keys, msg.trapdoors,
                                 arena_rng.stream(self.seed, "sim-fix"), self.sets)
        r = coin_result(msg.r_v, self.r_p)
        u = predicates.extract_u(msg.outcomes, c.instance, r, c.m, c.N)
        k = tape.key
        if not predicates.predicate_Q(k.traps, k.perm, k.a, tape.b_fixed, r, u, c.instance, c.m, self.sets):
            return self._abort("QFailed")
        ctx = self.pub.proof_context(r)
        pb, pa = npzk.public_inputs(tape.z, u)
        e = self._rewind_challenge(ctx, pb, pa)
        if e is None:
            return self._abort("SimulationFailed")
        self.npzk_transcript = npzk.simulate_transcript(ctx, pb, pa, e, arena_rng.stream(self.seed, "sim-npzk"))
        return [NpzkMsg(NpzkMsg.COMMIT, npzk.commit_to_bytes(ctx, self.npzk_transcript.commit))]
