import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arena import commitment as cm
from arena import npzk, predicates, steane
from arena import xz_hamiltonian as xz
from arena.harness import battery, proof_fields
from arena.protocol import SessionConfig, session_public

H = xz.validate_instance("2 -2.5 -0.5\n-1 0 Z 1 X\n-1 0 Z\n-1 1 X\n")


@dataclasses.dataclass
class Statement:
    pub: object
    ctx: npzk.ProofContext
    key: steane.EncodingKey
    r: np.ndarray
    z: np.ndarray
    u: np.ndarray
    witness: np.ndarray


def honest_statement(seed: int, m: int = 2) -> Statement:
    cfg = SessionConfig(H, m=m, t=1)
    pub = session_public(cfg, seed)
    g = np.random.default_rng(seed)
    r = g.integers(0, 2, size=cfg.r_len, dtype=np.uint8)
    key = steane.gen_encoding_key(cfg.n_logical, cfg.N, g, rand_bits=pub.scheme.params.rand_bits)
    gates = predicates.compute_U_r(H, r, m)
    out = steane.sample_encoded_measurement(xz.build_rho_r(H, r, m), key, ["X" if x == "H" else "Z" for x in gates],
                                            g, pub.sets())
    u = predicates.extract_u(out, H, r, m, cfg.N)
    z = cm.commit(pub.scheme, pub.tag, npzk.key_message_bits(key.perm, key.a, key.b), key.s_p)
    shape = npzk.RelationShape(H, m, 1, r)
    w = npzk.encode_witness(shape, key.s_p, key.traps, key.perm, key.a, key.b)
    return Statement(pub, pub.proof_context(r), key, r, z, u, w)


ST = honest_statement(1)


def holds(st_: Statement, u=None, w=None) -> bool:
    pb, pa = npzk.public_inputs(st_.z, st_.u if u is None else u)
    return npzk.relation_holds(st_.ctx.circuit, st_.witness if w is None else w, pb, pa)


def q_oracle(st_: Statement, u) -> bool:
    k = st_.key
    return bool(predicates.predicate_Q(k.traps, k.perm, k.a, k.b, st_.r, u, H, 2, st_.pub.sets()))


# ---- clear evaluation --------------------------------------------------------------


def test_honest_witness_satisfies():
    assert q_oracle(ST, ST.u)
    assert holds(ST)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_circuit_agrees_with_predicate(seed, flips):
    # the clear circuit and predicate_Q are independent implementations of the same Q
    rng = np.random.default_rng(seed)
    u = ST.u.copy()
    u[rng.choice(u.size, size=flips, replace=False)] ^= 1
    assert holds(ST, u=u) == q_oracle(ST, u)


def test_flip_at_constrained_trap_fails():
    k, N = ST.key, 7
    mts = predicates.measured_terms(H, ST.r, 2)
    blk, gate = mts[0].blocks[0], mts[0].gates[0]
    constrained = "0" if gate == "I" else "+"
    pos = next(i for i, lab in enumerate(k.traps[blk]) if lab == constrained)
    u = ST.u.copy()
    u[k.perm[N + pos]] ^= 1  # first measured block occupies u[0:2N]
    assert not q_oracle(ST, u)
    assert not holds(ST, u=u)


def test_non_permutation_rejected():
    P = np.eye(14, dtype=np.uint8)[list(ST.key.perm)]
    P[[0, 1]] = P[[1, 1]]  # duplicate row: not a permutation
    shape = npzk.RelationShape(H, 2, 1, ST.r)
    key_bits = np.concatenate([P.reshape(-1), ST.key.a, ST.key.b])
    w = np.concatenate([ST.key.s_p, ST.key.trap_bits().reshape(-1), key_bits])
    assert w.size == ST.witness.size
    assert not holds(ST, w=w)
    assert npzk.encode_witness(shape, ST.key.s_p, ST.key.traps, ST.key.perm, ST.key.a, ST.key.b).tolist() == \
        ST.witness.tolist()


def test_wrong_opening_rejected():
    w = ST.witness.copy()
    w[0] ^= 1  # one bit of the commitment randomness
    assert not holds(ST, w=w)


# ---- MPC-in-the-head ----------------------------------------------------------------


def pub_inputs(st_=ST):
    return npzk.public_inputs(st_.z, st_.u)


def test_honest_proofs_verify():
    pb, pa = pub_inputs()
    for seed in range(20):
        tr = npzk.prove(ST.ctx, ST.witness, pb, pa, 6, np.random.default_rng(seed))
        assert npzk.verify(ST.ctx, pb, pa, tr)


def test_share_reconstruction():
    pb, pa = pub_inputs()
    p = npzk.Prover(ST.ctx, ST.witness, pb, pa, 5, np.random.default_rng(0))
    assert (p.final_shares.sum(axis=1) % 2 == 1).all()
    assert not (p.zero_shares.sum(axis=1) % ST.ctx.circuit.q).any()
    assert p.explicit.shape == (5, ST.ctx.circuit.n_witness)


def test_witness_invalid():
    pb, pa = pub_inputs()
    bad = ST.witness.copy()
    bad[0] ^= 1
    with pytest.raises(npzk.WitnessInvalid):
        npzk.prove(ST.ctx, bad, pb, pa, 2, np.random.default_rng(0))
    with pytest.raises(npzk.WitnessInvalid):
        npzk.prove(ST.ctx, bad[:-1], pb, pa, 2, np.random.default_rng(0))


@pytest.mark.parametrize("what", ["and_out", "mul_out", "seed", "commit_rand", "final"])
def test_mutations_rejected(what):
    pb, pa = pub_inputs()
    tr = npzk.prove(ST.ctx, ST.witness, pb, pa, 3, np.random.default_rng(5))
    view = tr.response.opened[1][0]
    if what == "and_out":
        view.and_out[0] ^= 1
    elif what == "mul_out":
        view.mul_out[0] = (view.mul_out[0] + 1) % ST.ctx.circuit.q
    elif what == "seed":
        tr.response.opened[1] = (dataclasses.replace(view, seed=bytes(16)), tr.response.opened[1][1])
    elif what == "commit_rand":
        view.commit_rand[0] ^= 1
    else:
        tr.commit.final_shares[1] ^= 1
    ok = npzk.verify_repetitions(ST.ctx, pb, pa, tr)
    assert ok.tolist() == [True, False, True]


def test_cheating_bounded():
    H_false = ST.u.copy()
    rng = np.random.default_rng(6)
    while holds(ST, u=H_false):
        H_false[int(rng.integers(0, H_false.size))] ^= 1
    pb, pa = npzk.public_inputs(ST.z, H_false)
    tr, corrupt = npzk.cheat_prove(ST.ctx, ST.witness, pb, pa, 600, rng)
    ok = npzk.verify_repetitions(ST.ctx, pb, pa, tr)
    # a repetition is caught exactly when the corrupted party's outputs are recomputed,
    # i.e. when it is the first of the two opened views
    assert (ok == (corrupt != tr.challenges)).all()
    assert ok.mean() <= 2 / 3 + 0.05


def test_simulated_transcripts_verify():
    pb, pa = pub_inputs()
    rng = np.random.default_rng(7)
    e = npzk.sample_challenges(30, rng)
    assert npzk.verify(ST.ctx, pb, pa, npzk.simulate_transcript(ST.ctx, pb, pa, e, rng))
    # a false statement simulates just as well
    bad_u = 1 - ST.u
    pb2, _ = npzk.public_inputs(ST.z, bad_u)
    assert not holds(ST, u=bad_u)
    assert npzk.verify(ST.ctx, pb2, pa, npzk.simulate_transcript(ST.ctx, pb2, pa, e, rng))


def test_simulated_marginals_match():
    pb, pa = pub_inputs()
    rng = np.random.default_rng(8)
    q = ST.ctx.circuit.q
    real, sim = {}, {}
    for _ in range(40):
        e = npzk.sample_challenges(25, rng)
        for out, tr in ((real, npzk.prove(ST.ctx, ST.witness, pb, pa, 25, rng, challenges=e)),
                        (sim, npzk.simulate_transcript(ST.ctx, pb, pa, e, rng))):
            for k, v in proof_fields(tr, q).items():
                out.setdefault(k, []).extend(v)
    assert battery({k: (real[k], sim[k]) for k in real})["combined_p"] > 0.01


def test_wire_round_trips():
    pb, pa = pub_inputs()
    tr = npzk.prove(ST.ctx, ST.witness, pb, pa, 4, np.random.default_rng(9))
    c2 = npzk.commit_from_bytes(ST.ctx, npzk.commit_to_bytes(ST.ctx, tr.commit))
    e2 = npzk.challenges_from_bytes(npzk.challenges_to_bytes(tr.challenges))
    r2 = npzk.response_from_bytes(npzk.response_to_bytes(tr.response))
    assert npzk.verify(ST.ctx, pb, pa, npzk.NpzkProofTranscript(c2, e2, r2))


def test_debug_backend():
    pb, pa = pub_inputs()
    assert npzk.debug_verify(ST.ctx, pb, pa, npzk.debug_prove(ST.witness))
    assert not npzk.debug_verify(ST.ctx, 1 - pb, pa, npzk.debug_prove(ST.witness))
    assert not npzk.debug_verify(ST.ctx, pb, pa, b"\x00garbage")
