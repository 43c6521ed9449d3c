"""The verifier state machine, session setup, transports and the session driver.

A session is a strict alternation of framed messages::

    P: ProverKeyCommit      V: CoinCommit
    P: ProverCoins          V: EtcffKeys
    P: CommitStrings        V: RoundChoice
    P: TestReveal           V: Verdict                      (test round)
    P: HadamardReveal       V: VerifierOpen                 (Hadamard round)
    P: NpzkMsg(commit)      V: NpzkMsg(challenge)
    P: NpzkMsg(response)    V: Verdict

Either side may end the exchange early: the prover with Abort, the verifier
with Verdict(reject).
"""

from __future__ import annotations

import base64
import copy
import enum
import hashlib
import json
import socket
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import commitment as cm
from . import etcff, npzk, predicates, steane
from . import rng as arena_rng
from . import xz_hamiltonian as xz
from .wire import (
    Abort, CoinCommit, CommitStrings, EtcffKeys, HadamardReveal, Message, NpzkMsg, ProverCoins,
    ProverKeyCommit, RoundChoice, TestReveal, Verdict, VerifierOpen, frame_decode, frame_encode,
)


class ProtocolViolation(Exception):
    def __init__(self, expected: str, got: str):
        self.expected, self.got = expected, got
        super().__init__(f"expected {expected}, got {got}")


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    instance: xz.XZHamiltonianInstance
    m: int
    t: int = 2
    lwe: etcff.LweParams = etcff.DEMO
    commit: cm.CommitParams = cm.STANDARD
    reps: int = npzk.DEFAULT_REPS
    backend: str = "mpc"
    force_round: str | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        steane.gen_codeword_sets(self.t)
        if self.backend not in ("mpc", "debug"):
            raise ValueError("backend must be 'mpc' or 'debug'")
        if self.force_round not in (None, "test", "hadamard"):
            raise ValueError("force_round must be 'test', 'hadamard' or unset")
        if self.m * xz.R_BITS > self.commit.max_msg_bits:
            raise ValueError("coin string does not fit the commitment width")

    @property
    def N(self) -> int:
        return 7 ** self.t

    @property
    def n_logical(self) -> int:
        return self.m * self.instance.n

    @property
    def n_physical(self) -> int:
        return 2 * self.n_logical * self.N

    @property
    def r_len(self) -> int:
        return self.m * xz.R_BITS

    def digest(self) -> str:
        text = "|".join([
            xz.instance_to_text(self.instance), str(self.m), str(self.t), repr(self.lwe), repr(self.commit),
            str(self.reps), self.backend, str(self.force_round),
        ])
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class SessionPublic:
    """Parameters both parties hold before the first message."""

    config: SessionConfig
    session_id: bytes
    scheme: cm.CommitmentScheme
    tag: bytes

    def sets(self) -> steane.CodewordSets:
        return steane.gen_codeword_sets(self.config.t)

    def proof_context(self, r: np.ndarray) -> npzk.ProofContext:
        c = self.config
        shape = npzk.RelationShape(c.instance, c.m, c.t, np.asarray(r, dtype=np.uint8))
        return npzk.ProofContext(npzk.build_relation_circuit(shape, self.scheme, self.tag), self.scheme, self.tag)


def session_public(config: SessionConfig, session_seed: int | bytes) -> SessionPublic:
    scheme = cm.gen(config.commit, arena_rng.stream(session_seed, "commit-pk"))
    tag = cm.initiate(scheme, arena_rng.stream(session_seed, "commit-tag"))
    sid = arena_rng.derive_seed(session_seed, "session-id")[:16]
    return SessionPublic(config, sid, scheme, tag)


def coin_result(r_v: np.ndarray, r_p: np.ndarray) -> np.ndarray:
    r_v, r_p = np.asarray(r_v, dtype=np.uint8), np.asarray(r_p, dtype=np.uint8)
    if r_v.shape != r_p.shape:
        raise LengthMismatch("coin shares differ in length")
    return r_v ^ r_p


def verifier_choose_h(r, config: SessionConfig) -> np.ndarray:
    return predicates.verifier_choose_h(r, config.instance, config.m, config.N)


def decode_hadamard(
    keys: Sequence[etcff.EtcffKey],
    trapdoors: Sequence[np.ndarray],
    h: np.ndarray,
    y: np.ndarray,
    beta: np.ndarray,
    d: np.ndarray,
    params: etcff.LweParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Verifier-side outcome recovery. Returns (m, failed) per qubit.

    h = 0: m is the bit of the unique preimage of y. h = 1: m = beta xor d.(x0 xor x1)
    from both preimages. Where this is impossible m is a uniform bit and failed is set.
    """
    n = len(keys)
    out = np.zeros(n, dtype=np.uint8)
    failed = np.zeros(n, dtype=bool)
    fallback = rng.integers(0, 2, size=n, dtype=np.uint8)
    for i in range(n):
        pre = etcff.recover_preimages(keys[i], trapdoors[i], y[i], params)
        if h[i] == 0:
            if len(pre) == 1:
                out[i] = pre[0][0]
            else:
                out[i], failed[i] = fallback[i], True
        else:
            by_bit = {b: x for b, x in pre}
            if set(by_bit) == {0, 1}:
                out[i] = (int(beta[i]) + int(np.dot(d[i], by_bit[0] ^ by_bit[1]))) % 2
            else:
                out[i], failed[i] = fallback[i], True
    return out, failed


class Phase(enum.Enum):
    AWAIT_KEY_COMMIT = 0
    SEND_COIN_COMMIT = 1
    AWAIT_COINS = 2
    SEND_KEYS = 3
    AWAIT_Y = 4
    CHOOSE_ROUND = 5
    AWAIT_REVEAL = 6
    OPEN_AND_SEND = 7
    NPZK_VERIFY = 8
    DONE = 9


class Party(Protocol):
    def step(self, msg: Message) -> list[Message]: ...


class Verifier:
    """Honest verifier. Subclasses override the ``_make_*`` hooks to cheat."""

    def __init__(self, pub: SessionPublic, seed: int | bytes):
        self.pub = pub
        self.seed = seed
        c = pub.config
        self.phase = Phase.AWAIT_KEY_COMMIT
        self.history: list[Phase] = [self.phase]
        self.r_v = arena_rng.bits(arena_rng.stream(seed, "r_v"), c.r_len)
        self.s_v = cm.random_randomness(pub.scheme, arena_rng.stream(seed, "s_v"))
        self.z: np.ndarray | None = None
        self.r_p: np.ndarray | None = None
        self.h: np.ndarray | None = None
        self.keypairs: list[etcff.EtcffKeyPair] = []
        self.y: np.ndarray | None = None
        self.hadamard: bool | None = None
        self.outcomes: np.ndarray | None = None
        self.decode_failed: np.ndarray | None = None
        self.verdict: bool | None = None
        self.npzk_ctx: npzk.ProofContext | None = None
        self.npzk_commit: npzk.CommitMessage | None = None
        self.npzk_challenges: np.ndarray | None = None
        self.pub_inputs: tuple[np.ndarray, np.ndarray] | None = None
        self.prover_abort: str | None = None
        self.violation: str | None = None

    # ---- helpers
    def clone(self) -> "Verifier":
        """An independent copy for rewinding; the immutable public parameters are shared."""
        return copy.deepcopy(self, {id(self.pub): self.pub, id(self.npzk_ctx): self.npzk_ctx})

    def _goto(self, phase: Phase) -> None:
        if phase.value < self.phase.value:
            raise RuntimeError("phases only move forward")
        self.phase = phase
        self.history.append(phase)

    @property
    def r(self) -> np.ndarray:
        return coin_result(self.r_v, self.r_p)

    def _finish(self, accept: bool) -> list[Message]:
        self.verdict = accept
        self._goto(Phase.DONE)
        return [Verdict(accept)]

    def _expect(self, msg: Message, cls: type, expected: str) -> None:
        if not isinstance(msg, cls):
            raise ProtocolViolation(expected, msg.name)

    # ---- cheating hooks
    def _make_keys(self) -> list[etcff.EtcffKeyPair]:
        g = arena_rng.stream(self.seed, "etcff-keys")
        return [etcff.keygen("f" if hi else "g", self.pub.config.lwe, g) for hi in self.h]

    def _choose_round(self) -> bool:
        forced = self.pub.config.force_round
        if forced is not None:
            return forced == "hadamard"
        return bool(arena_rng.stream(self.seed, "round").random() < 0.5)

    def _make_open(self) -> VerifierOpen:
        return VerifierOpen(self.r_v.copy(), self.s_v.copy(), self.outcomes.copy(), [kp.R for kp in self.keypairs])

    # ---- transitions
    def step(self, msg: Message) -> list[Message]:
        if self.phase is Phase.DONE:
            raise ProtocolViolation("nothing (session over)", msg.name)
        if isinstance(msg, Abort):
            self.prover_abort = msg.reason
            return self._finish(False)
        c = self.pub.config
        if self.phase is Phase.AWAIT_KEY_COMMIT:
            self._expect(msg, ProverKeyCommit, "ProverKeyCommit")
            expected_rows = c.commit.extra_rows + (2 * c.N) ** 2 + 4 * c.n_logical * c.N
            if msg.z.shape != (expected_rows,):
                raise ProtocolViolation(f"key commitment of {expected_rows} entries", f"{msg.z.size}")
            self.z = msg.z
            self._goto(Phase.SEND_COIN_COMMIT)
            coin = cm.commit(self.pub.scheme, self.pub.tag, self.r_v, self.s_v)
            self._goto(Phase.AWAIT_COINS)
            return [CoinCommit(coin)]
        if self.phase is Phase.AWAIT_COINS:
            self._expect(msg, ProverCoins, "ProverCoins")
            if msg.r_p.shape != (c.r_len,):
                raise ProtocolViolation(f"{c.r_len} coin bits", f"{msg.r_p.size}")
            self.r_p = msg.r_p
            self._goto(Phase.SEND_KEYS)
            self.h = verifier_choose_h(self.r, c)
            self.keypairs = self._make_keys()
            self._goto(Phase.AWAIT_Y)
            return [EtcffKeys([kp.key.A for kp in self.keypairs], [kp.key.v for kp in self.keypairs])]
        if self.phase is Phase.AWAIT_Y:
            self._expect(msg, CommitStrings, "CommitStrings")
            if msg.y.shape != (c.n_physical, c.lwe.m_lwe):
                raise ProtocolViolation("one image per physical qubit", str(msg.y.shape))
            self.y = msg.y % c.lwe.q
            self._goto(Phase.CHOOSE_ROUND)
            self.hadamard = self._choose_round()
            self._goto(Phase.AWAIT_REVEAL)
            return [RoundChoice(self.hadamard)]
        if self.phase is Phase.AWAIT_REVEAL:
            if not self.hadamard:
                self._expect(msg, TestReveal, "TestReveal")
                ok = msg.beta.shape == (c.n_physical,) and msg.x.shape == (c.n_physical, c.lwe.w_pre)
                if ok:
                    for i, kp in enumerate(self.keypairs):
                        if not etcff.check_preimage(kp.key, int(msg.beta[i]), msg.x[i], self.y[i], c.lwe):
                            ok = False
                            break
                return self._finish(ok)
            self._expect(msg, HadamardReveal, "HadamardReveal")
            if msg.beta.shape != (c.n_physical,) or msg.d.shape != (c.n_physical, c.lwe.w_pre):
                raise ProtocolViolation("one (beta, d) per physical qubit", str(msg.d.shape))
            self.outcomes, self.decode_failed = decode_hadamard(
                [kp.key for kp in self.keypairs], [kp.R for kp in self.keypairs], self.h, self.y,
                msg.beta, msg.d, c.lwe, arena_rng.stream(self.seed, "decode"),
            )
            self._goto(Phase.OPEN_AND_SEND)
            opened = self._make_open()
            self._goto(Phase.NPZK_VERIFY)
            return [opened]
        if self.phase is Phase.NPZK_VERIFY:
            self._expect(msg, NpzkMsg, "NpzkMsg")
            return self._npzk_step(msg)
        raise ProtocolViolation(self.phase.name, msg.name)

    def _npzk_context(self) -> npzk.ProofContext:
        if self.npzk_ctx is None:
            c = self.pub.config
            self.npzk_ctx = self.pub.proof_context(self.r)
            u = predicates.extract_u(self.outcomes, c.instance, self.r, c.m, c.N)
            self.pub_inputs = npzk.public_inputs(self.z, u)
        return self.npzk_ctx

    def _npzk_step(self, msg: NpzkMsg) -> list[Message]:
        c = self.pub.config
        ctx = self._npzk_context()
        clean = not self.decode_failed.any()
        if c.backend == "debug":
            if msg.kind != NpzkMsg.DEBUG:
                raise ProtocolViolation("NpzkMsg(debug)", f"NpzkMsg({msg.kind})")
            return self._finish(clean and npzk.debug_verify(ctx, *self.pub_inputs, msg.payload))
        if self.npzk_commit is None:
            if msg.kind != NpzkMsg.COMMIT:
                raise ProtocolViolation("NpzkMsg(commit)", f"NpzkMsg({msg.kind})")
            try:
                self.npzk_commit = npzk.commit_from_bytes(ctx, msg.payload)
            except ValueError:
                return self._finish(False)
            if len(self.npzk_commit.view_commits) != c.reps:
                return self._finish(False)
            self.npzk_challenges = npzk.sample_challenges(c.reps, arena_rng.stream(self.seed, "npzk-challenge"))
            return [NpzkMsg(NpzkMsg.CHALLENGE, npzk.challenges_to_bytes(self.npzk_challenges))]
        if msg.kind != NpzkMsg.RESPONSE:
            raise ProtocolViolation("NpzkMsg(response)", f"NpzkMsg({msg.kind})")
        try:
            resp = npzk.response_from_bytes(msg.payload)
        except ValueError:
            return self._finish(False)
        tr = npzk.NpzkProofTranscript(self.npzk_commit, self.npzk_challenges, resp)
        return self._finish(clean and npzk.verify(ctx, *self.pub_inputs, tr))


# ---- transports ------------------------------------------------------------


class InProcessTransport:
    """Frames pass through an in-memory queue."""

    def __init__(self) -> None:
        self._q: deque[bytes] = deque()

    def send(self, frame: bytes) -> None:
        self._q.append(bytes(frame))

    def recv(self) -> bytes:
        return self._q.popleft()

    def close(self) -> None:
        self._q.clear()


class TcpTransport:
    """Frames cross a loopback TCP connection, one length-prefixed record each."""

    def __init__(self) -> None:
        server = socket.create_server(("127.0.0.1", 0))
        self._client = socket.create_connection(server.getsockname())
        self._conn, _ = server.accept()
        server.close()

    def send(self, frame: bytes) -> None:
        self._client.sendall(struct.pack("<I", len(frame)) + frame)

    def _read(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._conn.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("peer closed")
            buf.extend(chunk)
        return bytes(buf)

    def recv(self) -> bytes:
        (n,) = struct.unpack("<I", self._read(4))
        return self._read(n)

    def close(self) -> None:
        self._client.close()
        self._conn.close()


# ---- driver ------------------------------------------------------------------


@dataclass
class TranscriptEntry:
    sender: str
    seq: int
    tag: str
    frame: bytes

    def to_json(self) -> str:
        return json.dumps({"from": self.sender, "seq": self.seq, "tag": self.tag,
                           "frame": base64.b64encode(self.frame).decode()}, sort_keys=True)


@dataclass
class SessionResult:
    accept: bool
    round: str | None
    prover_abort: str | None
    decode_failures: int
    verifier_phases: list[str]
    transcript: list[TranscriptEntry] = field(repr=False)

    def transcript_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.transcript)

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for e in self.transcript:
            h.update(e.sender.encode())
            h.update(e.frame)
        return h.hexdigest()


def run_session(prover, verifier: Verifier, pub: SessionPublic, transport=None, max_messages: int = 64) -> SessionResult:
    """Drive one session to its verdict, passing every message through `transport` as a frame."""
    transport = transport or InProcessTransport()
    seq = {"P": 0, "V": 0}
    expect = {"P": 0, "V": 0}
    transcript: list[TranscriptEntry] = []
    queue: deque[tuple[str, Message]] = deque(("P", m) for m in prover.start())
    done = False
    while queue and not done:
        if len(transcript) >= max_messages:
            raise RuntimeError("session exceeded the message budget")
        sender, msg = queue.popleft()
        frame = frame_encode(msg, pub.session_id, seq[sender])
        seq[sender] += 1
        transcript.append(TranscriptEntry(sender, seq[sender] - 1, msg.name, frame))
        transport.send(frame)
        received = frame_decode(transport.recv(), expected_seq=expect[sender], session_id=pub.session_id).message
        expect[sender] += 1
        if sender == "P":
            try:
                replies = verifier.step(received)
            except ProtocolViolation as exc:
                verifier.violation = str(exc)
                replies = verifier._finish(False) if verifier.phase is not Phase.DONE else []
            queue.extend(("V", r) for r in replies)
        else:
            if isinstance(received, Verdict):
                done = True
            replies = prover.step(received)
            queue.extend(("P", r) for r in replies)
    round_name = None if verifier.hadamard is None else ("hadamard" if verifier.hadamard else "test")
    failures = 0 if verifier.decode_failed is None else int(verifier.decode_failed.sum())
    return SessionResult(
        accept=bool(verifier.verdict),
        round=round_name,
        prover_abort=getattr(prover, "abort_reason", None) or verifier.prover_abort,
        decode_failures=failures,
        verifier_phases=[p.name for p in verifier.history],
        transcript=transcript,
    )


def read_transcript_jsonl(text: str) -> list[TranscriptEntry]:
    out = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(TranscriptEntry(d["from"], d["seq"], d["tag"], base64.b64decode(d["frame"])))
    return out
