import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from arena import commitment as cm


def micro_scheme(seed=0):
    return cm.gen(cm.MICRO, np.random.default_rng(seed))


def bits(idx, width):
    return np.array([(idx >> k) & 1 for k in range(width)], dtype=np.uint8)


def test_gen_deterministic_and_distinct():
    a, b = micro_scheme(1), micro_scheme(1)
    assert a.seed == b.seed and (a.A == b.A).all()
    seen = {cm.gen(cm.STANDARD, np.random.default_rng(s)).A[:8].tobytes() for s in range(1000)}
    assert len(seen) == 1000


def test_tag_width():
    scheme = micro_scheme()
    assert len(cm.initiate(scheme, np.random.default_rng(0))) == cm.MICRO.tag_bytes
    with pytest.raises(cm.LengthError):
        cm.commit(scheme, b"x", b"", np.zeros(cm.MICRO.rand_bits, dtype=np.uint8))


def test_exhaustive_injectivity_micro():
    scheme = micro_scheme(2)
    tag = cm.initiate(scheme, np.random.default_rng(3))
    p = cm.MICRO
    seen = {}
    for width in range(p.max_msg_bits + 1):
        for mi in range(1 << width):
            m = bits(mi, width)
            for si in range(1 << p.rand_bits):
                z = cm.commit(scheme, tag, m, bits(si, p.rand_bits)).tobytes() + bytes([width])
                assert z not in seen, f"collision {(width, mi, si)} vs {seen[z]}"
                seen[z] = (width, mi, si)


@given(st.binary(max_size=64), st.integers(0, 2**32 - 1))
def test_round_trip(msg, seed):
    rng = np.random.default_rng(seed)
    scheme = cm.gen(cm.STANDARD, rng)
    tag = cm.initiate(scheme, rng)
    s = cm.random_randomness(scheme, rng)
    z = cm.commit(scheme, tag, msg, s)
    assert (z == cm.commit(scheme, tag, msg, s)).all()
    assert cm.verify(scheme, tag, z, msg, s)
    wrong_s = s.copy()
    wrong_s[int(rng.integers(0, s.size))] ^= 1
    assert not cm.verify(scheme, tag, z, msg, wrong_s)
    if msg:
        wrong_m = bytearray(msg)
        wrong_m[0] ^= 1
        assert not cm.verify(scheme, tag, z, bytes(wrong_m), s)
    assert not cm.verify(scheme, tag, z, msg + b"\0", s)
    assert (cm.z_from_bytes(scheme, cm.z_to_bytes(scheme, z)) == z).all()


def test_session_tag_separates():
    rng = np.random.default_rng(4)
    scheme = cm.gen(cm.STANDARD, rng)
    s = cm.random_randomness(scheme, rng)
    z = cm.commit(scheme, b"a" * 16, b"hello", s)
    assert not cm.verify(scheme, b"b" * 16, z, b"hello", s)


def test_length_errors():
    scheme = micro_scheme()
    tag = bytes(cm.MICRO.tag_bytes)
    with pytest.raises(cm.LengthError):
        cm.commit(scheme, tag, np.zeros(9, dtype=np.uint8), np.zeros(cm.MICRO.rand_bits, dtype=np.uint8))
    with pytest.raises(cm.LengthError):
        cm.commit(scheme, tag, b"", np.zeros(3, dtype=np.uint8))
    assert not cm.verify(scheme, tag, np.zeros(4), b"", np.zeros(3, dtype=np.uint8))


@pytest.mark.parametrize("msg", [b"\x00" * 8, b"\xff" * 8])
def test_output_bytes_look_uniform(msg):
    rng = np.random.default_rng(5)
    scheme = cm.gen(cm.STANDARD, rng)
    tag = cm.initiate(scheme, rng)
    out = np.concatenate([cm.commit(scheme, tag, msg, cm.random_randomness(scheme, rng)) for _ in range(300)])
    counts = np.bincount((out & 0xFF).astype(np.int64), minlength=256)
    assert stats.chisquare(counts).pvalue > 0.01
