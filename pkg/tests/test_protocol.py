import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arena import etcff, predicates, steane
from arena import xz_hamiltonian as xz
from arena.emulation import HonestProver, TrapdoorOracle, WitnessSpec, make_verifier
from arena.protocol import (
    LengthMismatch, Phase, ProtocolViolation, SessionConfig, TcpTransport, Verifier, coin_result,
    decode_hadamard, read_transcript_jsonl, run_session, session_public, verifier_choose_h,
)
from arena.wire import (
    MESSAGE_TYPES, Abort, CoinCommit, CommitStrings, EtcffKeys, HadamardReveal, MalformedFrame, NpzkMsg,
    ProverCoins, ProverKeyCommit, RoundChoice, SequenceGap, Verdict, VerifierOpen,
    VersionMismatch, frame_decode, frame_encode,
)
from arena.wire import TestReveal as RevealPreimages

H = xz.validate_instance("2 -2.5 -0.5\n-1 0 Z 1 X\n-1 0 Z\n-1 1 X\n")
H_XZ = xz.validate_instance("2 -0.9 -0.1\n-1 0 X 1 Z\n")
H_ZZ = xz.validate_instance("2 -1.9 -0.1\n-1 0 Z\n-1 1 Z\n")
H_SINGLE = xz.validate_instance("2 -1.9 -0.5\n-1 0 Z\n-1 1 X\n")
SETS1 = steane.gen_codeword_sets(1)
SID = bytes(range(16))


def config(round_: str | None = None, m: int = 1, backend: str = "mpc") -> SessionConfig:
    return SessionConfig(H, m=m, t=1, reps=8, backend=backend, force_round=round_)


def honest_run(round_: str | None, seed: int = 5, m: int = 1, transport=None, prover_cls=HonestProver):
    pub = session_public(config(round_, m), seed)
    v = make_verifier(None, pub, seed + 1)
    p = prover_cls(pub, WitnessSpec("product_labels", ("0", "+")), TrapdoorOracle(v), seed + 2)
    return run_session(p, v, pub, transport), pub, v


# ---- coins and basis choice ----------------------------------------------------------


def test_coin_result_is_xor():
    assert coin_result([1, 0, 1, 1], [1, 1, 0, 1]).tolist() == [0, 1, 1, 0]
    with pytest.raises(LengthMismatch):
        coin_result([1, 0], [1])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64), st.integers(0, 2**32 - 1))
def test_coin_result_uniform_given_one_uniform_share(r_p, seed):
    # fixing one share, the map from the other share is a bijection
    r_p = np.array(r_p, dtype=np.uint8)
    r_v = np.random.default_rng(seed).integers(0, 2, size=r_p.size, dtype=np.uint8)
    assert np.array_equal(coin_result(coin_result(r_v, r_p), r_p), r_v)


def test_compute_U_r_single_term():
    r = np.zeros(64, dtype=np.uint8)
    assert predicates.compute_U_r(H_XZ, r[:32], 1) == ["H", "I"]
    assert predicates.compute_U_r(H_XZ, r, 2) == ["H", "I", "H", "I"]


def test_verifier_choose_h_layout():
    N = 7
    h = predicates.verifier_choose_h(np.zeros(32, np.uint8), H_XZ, 1, N)
    assert h.shape == (4 * N,)
    assert h[:2 * N].tolist() == [1] * (2 * N) and h[2 * N:].tolist() == [0] * (2 * N)
    h2 = predicates.verifier_choose_h(np.ones(64, np.uint8), H_XZ, 2, N)
    assert h2.tolist() == h.tolist() * 2
    assert not predicates.verifier_choose_h(np.ones(32, np.uint8), H_ZZ, 1, N).any()


@given(st.integers(0, 2**32 - 1))
def test_protocol_h_agrees_with_predicates(seed):
    cfg = config(m=2)
    r = np.random.default_rng(seed).integers(0, 2, size=cfg.r_len, dtype=np.uint8)
    h = verifier_choose_h(r, cfg)
    gates = predicates.compute_U_r(H, r, 2)
    assert h.shape == (cfg.n_physical,)
    for k, g in enumerate(gates):
        assert set(h[2 * cfg.N * k:2 * cfg.N * (k + 1)].tolist()) == {int(g == "H")}


def test_conjugate_pauli_keys_examples():
    a, b = np.array([1, 0, 1]), np.array([0, 0, 1])
    assert [x.tolist() for x in predicates.conjugate_pauli_keys(a, b, [0, 0, 0])] == [[1, 0, 1], [0, 0, 1]]
    assert [x.tolist() for x in predicates.conjugate_pauli_keys(a, b, [1, 1, 1])] == [[0, 0, 1], [1, 0, 1]]
    with pytest.raises(predicates.LengthMismatch):
        predicates.conjugate_pauli_keys(a, b, [1, 0])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_conjugate_pauli_keys_is_involution(rows):
    a, b, g = (np.array(c, dtype=np.uint8) for c in zip(*rows))
    a2, b2 = predicates.conjugate_pauli_keys(*predicates.conjugate_pauli_keys(a, b, g), g)
    assert np.array_equal(a2, a) and np.array_equal(b2, b)


# ---- predicates ------------------------------------------------------------------------


def honest_outcomes(Hm, r, m, key, g, labels=None):
    gates = predicates.compute_U_r(Hm, r, m)
    labels = labels if labels is not None else xz.build_rho_r(Hm, r, m)
    return steane.sample_encoded_measurement(labels, key, ["X" if x == "H" else "Z" for x in gates], g, SETS1)


def unpadded_key(n, g):
    key = steane.gen_encoding_key(n, 7, g, rand_bits=8)
    return key, np.zeros_like(key.a), np.zeros_like(key.b)


def test_R_r_accepts_honest_unpadded_outcomes():
    g = np.random.default_rng(3)
    r = g.integers(0, 2, size=64, dtype=np.uint8)
    key, a0, b0 = unpadded_key(4, g)
    key = dataclasses.replace(key, a=a0, b=b0)
    u = predicates.extract_u(honest_outcomes(H, r, 2, key, g), H, r, 2, 7)
    res = predicates.predicate_R_r(key.traps, key.perm, u, r, H, 2, SETS1)
    assert res.ok and res.count == 2


def test_R_r_rejects_non_codeword():
    g = np.random.default_rng(4)
    r = g.integers(0, 2, size=32, dtype=np.uint8)
    key, a0, b0 = unpadded_key(2, g)
    key = dataclasses.replace(key, a=a0, b=b0)
    u = predicates.extract_u(honest_outcomes(H, r, 1, key, g), H, r, 1, 7)
    # flip the first q-part position of the first measured block
    u[key.perm.index(0)] ^= 1
    assert predicates.predicate_R_r(key.traps, key.perm, u, r, H, 1, SETS1).reason == "codeword"


def test_R_r_rejects_zero_count():
    g = np.random.default_rng(5)
    r = g.integers(0, 2, size=32 * 4, dtype=np.uint8)
    key, a0, b0 = unpadded_key(8, g)
    key = dataclasses.replace(key, a=a0, b=b0)
    flip = {"0": "1", "1": "0", "+": "-", "-": "+"}
    bad = [flip[x] for x in xz.build_rho_r(H_SINGLE, r, 4)]
    u = predicates.extract_u(honest_outcomes(H_SINGLE, r, 4, key, g, bad), H_SINGLE, r, 4, 7)
    res = predicates.predicate_R_r(key.traps, key.perm, u, r, H_SINGLE, 4, SETS1)
    assert res.reason == "count" and res.count == 0


def test_R_r_length_mismatch():
    key = steane.gen_encoding_key(2, 7, np.random.default_rng(0), rand_bits=8)
    assert predicates.predicate_R_r(key.traps, key.perm, np.zeros(3, np.uint8), np.zeros(32, np.uint8),
                                    H, 1, SETS1).reason == "length"


@given(st.integers(0, 2**32 - 1))
def test_Q_with_zero_pads_equals_R_r(seed):
    g = np.random.default_rng(seed)
    r = g.integers(0, 2, size=32, dtype=np.uint8)
    key = steane.gen_encoding_key(2, 7, g, rand_bits=8)
    u = g.integers(0, 2, size=predicates.measured_positions(H, r, 1, 7).size, dtype=np.uint8)
    if g.random() < 0.5:
        u = predicates.extract_u(honest_outcomes(H, r, 1, dataclasses.replace(
            key, a=np.zeros_like(key.a), b=np.zeros_like(key.b)), g), H, r, 1, 7)
    z = np.zeros_like(key.a)
    q = predicates.predicate_Q(key.traps, key.perm, z, z, r, u, H, 1, SETS1)
    rr = predicates.predicate_R_r(key.traps, key.perm, u, r, H, 1, SETS1)
    assert (q.ok, q.reason, q.count) == (rr.ok, rr.reason, rr.count)


@given(st.integers(0, 2**32 - 1))
def test_Q_ignores_unused_pad_halves(seed):
    g = np.random.default_rng(seed)
    r = g.integers(0, 2, size=32, dtype=np.uint8)
    key = steane.gen_encoding_key(2, 7, g, rand_bits=8)
    u = honest_outcomes(H, r, 1, key, g)[predicates.measured_positions(H, r, 1, 7)]
    gates = predicates.verifier_choose_h(r, H, 1, 7)
    before = predicates.predicate_Q(key.traps, key.perm, key.a, key.b, r, u, H, 1, SETS1)
    assert before.ok
    delta = g.integers(0, 2, size=gates.size, dtype=np.uint8)
    # Z-pad on I blocks and X-pad on H blocks never reach the measured outcome
    a2 = key.a ^ (delta & gates)
    b2 = key.b ^ (delta & (1 - gates))
    after = predicates.predicate_Q(key.traps, key.perm, a2, b2, r, u, H, 1, SETS1)
    assert after.ok
    # moving the live pad and the outcome together is also invisible
    pos = predicates.measured_positions(H, r, 1, 7)
    live = delta & (1 - gates)
    moved = predicates.predicate_Q(key.traps, key.perm, key.a ^ live, key.b, r, u ^ live[pos], H, 1, SETS1)
    assert moved.ok


# ---- wire format -----------------------------------------------------------------------

bits = st.lists(st.integers(0, 1), max_size=70).map(lambda x: np.array(x, dtype=np.uint8))
u32s = st.lists(st.integers(0, 2**32 - 1), max_size=20).map(lambda x: np.array(x, dtype=np.int64))


@st.composite
def bit_matrix(draw):
    rows, cols = draw(st.integers(1, 6)), draw(st.integers(1, 9))
    flat = draw(st.lists(st.integers(0, 1), min_size=rows * cols, max_size=rows * cols))
    return np.array(flat, dtype=np.uint8).reshape(rows, cols)


@st.composite
def int_matrix(draw, lo=0, hi=2**32 - 1):
    rows, cols = draw(st.integers(1, 5)), draw(st.integers(1, 5))
    flat = draw(st.lists(st.integers(lo, hi), min_size=rows * cols, max_size=rows * cols))
    return np.array(flat, dtype=np.int64).reshape(rows, cols)


@st.composite
def reveal(draw, cls):
    d = draw(bit_matrix())
    beta = np.array(draw(st.lists(st.integers(0, 1), min_size=d.shape[0], max_size=d.shape[0])), dtype=np.uint8)
    return cls(beta, d)


messages = st.one_of(
    u32s.map(ProverKeyCommit),
    u32s.map(CoinCommit),
    bits.map(ProverCoins),
    st.lists(st.tuples(int_matrix(), u32s), max_size=3).map(lambda p: EtcffKeys([a for a, _ in p], [v for _, v in p])),
    int_matrix().map(CommitStrings),
    st.booleans().map(RoundChoice),
    reveal(RevealPreimages),
    reveal(HadamardReveal),
    st.tuples(bits, bits, bits, st.lists(int_matrix(-2**31, 2**31 - 1), max_size=3)).map(lambda t: VerifierOpen(*t)),
    st.tuples(st.integers(0, 3), st.binary(max_size=50)).map(lambda t: NpzkMsg(*t)),
    st.text(max_size=30).map(Abort),
    st.booleans().map(Verdict),
)


@given(messages, st.integers(0, 2**32 - 1))
def test_frame_round_trip(msg, seq):
    data = frame_encode(msg, SID, seq)
    fr = frame_decode(data, expected_seq=seq, session_id=SID)
    assert fr.message == msg and fr.seq == seq and fr.session_id == SID
    assert frame_encode(fr.message, SID, seq) == data


@given(messages, st.data())
def test_truncated_or_extended_frames_rejected(msg, data):
    raw = frame_encode(msg, SID, 0)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(MalformedFrame):
        frame_decode(raw[:cut])
    with pytest.raises(MalformedFrame):
        frame_decode(raw + b"\x00")


def test_every_tag_is_covered():
    assert sorted(MESSAGE_TYPES) == list(range(1, 13))


def test_header_errors():
    raw = bytearray(frame_encode(Verdict(True), SID, 3))
    with pytest.raises(SequenceGap) as exc:
        frame_decode(bytes(raw), expected_seq=2)
    assert (exc.value.expected, exc.value.got) == (2, 3)
    with pytest.raises(MalformedFrame):
        frame_decode(bytes(raw), session_id=bytes(16))
    bad_version = raw.copy()
    bad_version[4] = 2
    with pytest.raises(VersionMismatch):
        frame_decode(bytes(bad_version))
    bad_magic = raw.copy()
    bad_magic[0] = ord("X")
    with pytest.raises(MalformedFrame):
        frame_decode(bytes(bad_magic))
    bad_tag = raw.copy()
    bad_tag[25] = 99
    with pytest.raises(MalformedFrame):
        frame_decode(bytes(bad_tag))
    bad_body = raw.copy()
    bad_body[-1] = 7
    with pytest.raises(MalformedFrame):
        frame_decode(bytes(bad_body))


def test_golden_prover_coins_frame(fixtures_dir):
    data = (fixtures_dir / "prover_coins_a5.frame").read_bytes()
    fr = frame_decode(data, expected_seq=0, session_id=bytes(16))
    assert fr.message == ProverCoins(np.array([1, 0, 1, 0, 0, 1, 0, 1], dtype=np.uint8))
    assert data.hex() == "41524e41" "01" + "00" * 16 + "00000000" "03" "0500000008000000a5"


# ---- sessions ----------------------------------------------------------------------------


@pytest.mark.parametrize("round_", ["test", "hadamard"])
@pytest.mark.parametrize("backend", ["mpc", "debug"])
def test_honest_session_accepts(round_, backend):
    pub = session_public(config(round_, backend=backend), 9)
    v = Verifier(pub, 10)
    p = HonestProver(pub, WitnessSpec("product_labels", ("0", "+")), TrapdoorOracle(v), 11)
    res = run_session(p, v, pub)
    assert res.accept and res.round == round_ and res.decode_failures == 0 and res.prover_abort is None
    assert res.verifier_phases[-1] == "DONE"
    names = [p.name for p in Phase]
    assert [names.index(x) for x in res.verifier_phases] == sorted(names.index(x) for x in res.verifier_phases)


def test_session_is_deterministic_and_transcript_round_trips():
    a, _, _ = honest_run("hadamard", seed=21)
    b, _, _ = honest_run("hadamard", seed=21)
    assert a.transcript_jsonl() == b.transcript_jsonl()
    back = read_transcript_jsonl(a.transcript_jsonl())
    assert [e.frame for e in back] == [e.frame for e in a.transcript]
    assert [(e.sender, e.seq) for e in back][:3] == [("P", 0), ("V", 0), ("P", 1)]


def test_tcp_transport_matches_in_process():
    tcp = TcpTransport()
    try:
        over_tcp, _, _ = honest_run("hadamard", seed=31, transport=tcp)
    finally:
        tcp.close()
    local, _, _ = honest_run("hadamard", seed=31)
    assert over_tcp.accept and over_tcp.transcript_digest() == local.transcript_digest()


def test_coin_string_stays_hidden_until_opening():
    res, pub, v = honest_run("hadamard", seed=41, m=2)
    secrets = [np.packbits(x, bitorder="little").tobytes() for x in (v.r_v, v.r)]
    for e in res.transcript:
        if e.tag == "VerifierOpen":
            assert secrets[0] in e.frame
            break
        for s in secrets:
            assert s not in e.frame, e.tag
    else:
        pytest.fail("no opening in a Hadamard-round transcript")


def prover_messages(res):
    return [frame_decode(e.frame).message for e in res.transcript if e.sender == "P"]


@given(st.permutations(range(6)))
def test_out_of_order_prover_messages_are_violations(order):
    msgs = prover_messages(HADAMARD_RUN[0])
    assert len(msgs) == 6
    v = Verifier(HADAMARD_RUN[1], 6)
    if list(order) == list(range(6)):
        for m_ in msgs:
            v.step(m_)
        assert v.verdict is True
        return
    with pytest.raises(ProtocolViolation):
        for k in order:
            v.step(msgs[k])


HADAMARD_RUN = honest_run("hadamard", seed=5)


def test_honest_run_fixture_is_clean():
    assert HADAMARD_RUN[0].accept


def test_messages_after_verdict_are_violations():
    res, pub, v = HADAMARD_RUN
    with pytest.raises(ProtocolViolation):
        v.step(Verdict(True))


class ScriptedProver:
    """Replays fixed messages in order regardless of the verifier."""

    def __init__(self, msgs):
        self.msgs = list(msgs)

    def start(self):
        return [self.msgs.pop(0)]

    def step(self, msg):
        return [self.msgs.pop(0)] if self.msgs and not isinstance(msg, Verdict) else []


def test_run_session_turns_violation_into_reject():
    msgs = prover_messages(HADAMARD_RUN[0])
    pub = HADAMARD_RUN[1]
    v = Verifier(pub, 6)
    res = run_session(ScriptedProver([msgs[0], msgs[2]]), v, pub)
    assert not res.accept and "ProverCoins" in v.violation


class BadPreimageProver(HonestProver):
    def _test_reveal(self):
        msg = super()._test_reveal()
        msg.x = msg.x.copy()
        msg.x[0] ^= 1
        return msg


def test_test_round_rejects_non_preimage():
    res, _, _ = honest_run("test", seed=51, prover_cls=BadPreimageProver)
    assert res.round == "test" and not res.accept


class GarbageImageProver(HonestProver):
    def _commit_strings(self):
        msg = super()._commit_strings()
        g = np.random.default_rng(0)
        msg.y = msg.y.copy()
        msg.y[:3] = g.integers(0, self.pub.config.lwe.q, size=msg.y[:3].shape)
        return msg


def test_decode_failure_forces_reject():
    res, _, v = honest_run("hadamard", seed=61, prover_cls=GarbageImageProver)
    assert res.decode_failures >= 1 and v.decode_failed[:3].any() and not res.accept


def test_decode_hadamard_recovers_committed_bits():
    p = etcff.DEMO
    g = np.random.default_rng(8)
    kps = [etcff.keygen(k, p, g) for k in ("g", "g", "f", "f")]
    h = np.array([0, 0, 1, 1], dtype=np.uint8)
    bits_ = np.array([1, 0, 1, 0], dtype=np.uint8)
    xs = [etcff.uniform_preimage(p, g) for _ in kps]
    y = np.array([etcff.eval_sample(kp.key, int(b), x, p, g, e0=0) for kp, b, x in zip(kps, bits_, xs)])
    d = g.integers(0, 2, size=(4, p.w_pre), dtype=np.uint8)
    beta = g.integers(0, 2, size=4, dtype=np.uint8)
    out, failed = decode_hadamard([kp.key for kp in kps], [kp.R for kp in kps], h, y, beta, d, p, g)
    assert not failed.any()
    assert out[:2].tolist() == [1, 0]
    for i in (2, 3):
        pre = dict(etcff.recover_preimages(kps[i].key, kps[i].R, y[i], p))
        assert out[i] == (beta[i] + d[i] @ (pre[0] ^ pre[1])) % 2
