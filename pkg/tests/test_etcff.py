import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from arena import etcff

MICRO, DEMO = etcff.MICRO, etcff.DEMO


def bits_of(idx, width):
    return np.array([(idx >> k) & 1 for k in range(width)], dtype=np.uint8)


def oracle_preimages(key, y, params):
    """Independent support test: enumerate every (b, x) and compare centred residues to the box."""
    out = set()
    for b in (0, 1):
        for idx in range(1 << params.w_pre):
            x = bits_of(idx, params.w_pre)
            base = (etcff.embed(x, params) @ key.A + b * key.v) % params.q
            diff = (np.asarray(y) - base) % params.q
            diff = np.minimum(diff, params.q - diff)
            if diff.max() <= params.e0_max:
                out.add((b, tuple(int(v) for v in x)))
    return out


def oracle_decode(A, c, params):
    """All s in Z_q^n with ||c - A^T s|| <= B_invert."""
    hits = []
    for s in itertools.product(range(params.q), repeat=params.n_lwe):
        r = (c - np.array(s) @ A) % params.q
        if np.minimum(r, params.q - r).max() <= params.B_invert:
            hits.append(np.array(s))
    return hits


# ---- parameters ----------------------------------------------------------------------


def test_presets_valid():
    assert DEMO.q == 12289 and DEMO.n_lwe == 8 and DEMO.m_lwe == 118
    assert DEMO.e0_max >= 16 * DEMO.B_f
    assert MICRO.q == 97 and MICRO.m_lwe == 9 and MICRO.w_pre == 4


def test_params_validation():
    with pytest.raises(etcff.ParamsInvalid):
        etcff.with_ratio(DEMO, B_f=4)  # 4 * 16 > 32
    with pytest.raises(etcff.ParamsInvalid):
        etcff.with_ratio(DEMO, B_g=30)


# ---- trapdoors --------------------------------------------------------------------------


def test_gen_trap_valid_and_shaped():
    rng = np.random.default_rng(0)
    for params in (MICRO, DEMO):
        for _ in range(50):
            A, R = etcff.gen_trap(params, rng)
            assert A.shape == (params.n_lwe, params.m_lwe)
            assert etcff.trapdoor_valid(A, R, params)


def test_abar_uniform():
    rng = np.random.default_rng(1)
    vals = np.concatenate([etcff.gen_trap(MICRO, rng)[0][:, :MICRO.m_bar].ravel() for _ in range(10_000)])
    counts = np.bincount(vals, minlength=MICRO.q)
    assert stats.chisquare(counts).pvalue > 0.01


def test_trapdoor_valid_negatives():
    A, R = etcff.gen_trap(DEMO, np.random.default_rng(2))
    big = R.copy()
    big[0, 0] = DEMO.q // 2
    assert not etcff.trapdoor_valid(A, big, DEMO)
    bent = A.copy()
    bent[:, -1] = (bent[:, -1] + 1) % DEMO.q
    assert not etcff.trapdoor_valid(bent, R, DEMO)


# ---- inversion ---------------------------------------------------------------------------


def test_invert_exact_image():
    rng = np.random.default_rng(3)
    A, R = etcff.gen_trap(DEMO, rng)
    s = rng.integers(0, DEMO.q, size=DEMO.n_lwe)
    inv = etcff.invert(A, R, (s @ A) % DEMO.q, DEMO)
    assert (inv.s == s).all() and (inv.e == 0).all()


def test_invert_with_error_demo():
    rng = np.random.default_rng(4)
    A, R = etcff.gen_trap(DEMO, rng)
    for _ in range(200):
        s = rng.integers(0, DEMO.q, size=DEMO.n_lwe)
        e = rng.integers(-DEMO.B_invert, DEMO.B_invert + 1, size=DEMO.m_lwe)
        inv = etcff.invert(A, R, (s @ A + e) % DEMO.q, DEMO)
        assert (inv.s == s).all() and (inv.e == e).all()


def test_invert_matches_exhaustive_micro():
    rng = np.random.default_rng(5)
    for trial in range(300):
        A, R = etcff.gen_trap(MICRO, rng)
        if trial % 2:
            s = rng.integers(0, MICRO.q, size=1)
            c = (s @ A + rng.integers(-MICRO.B_invert, MICRO.B_invert + 1, size=MICRO.m_lwe)) % MICRO.q
        else:
            c = rng.integers(0, MICRO.q, size=MICRO.m_lwe)
        hits = oracle_decode(A, c, MICRO)
        inv = etcff.invert(A, R, c, MICRO)
        assert len(hits) <= 1
        if hits:
            assert inv is not None and (inv.s == hits[0]).all()
        else:
            assert inv is None


# ---- keys ---------------------------------------------------------------------------------


@pytest.mark.parametrize("params", [MICRO, DEMO], ids=["micro", "demo"])
def test_honest_keys_pass_check(params):
    rng = np.random.default_rng(6)
    for kind in ("f", "g"):
        for _ in range(30):
            kp = etcff.keygen(kind, params, rng)
            assert etcff.trapdoor_key_check(kp.key, kp.R, params)
            assert etcff.key_kind_from_trapdoor(kp.key, kp.R, params) == kind


@pytest.mark.parametrize("params", [MICRO, DEMO], ids=["micro", "demo"])
def test_forbidden_band_rejected(params):
    rng = np.random.default_rng(7)
    for mag in range(params.B_f + 1, params.B_g):
        A, R = etcff.gen_trap(params, rng)
        s = rng.integers(0, params.q, size=params.n_lwe)
        e = np.zeros(params.m_lwe, dtype=np.int64)
        e[int(rng.integers(0, params.m_lwe))] = mag * int(rng.choice([-1, 1]))
        assert not etcff.trapdoor_key_check(etcff.EtcffKey(A, (s @ A + e) % params.q), R, params)


def test_midpoint_forged_key_rejected():
    rng = np.random.default_rng(8)
    A, R = etcff.gen_trap(DEMO, rng)
    s = rng.integers(0, DEMO.q, size=DEMO.n_lwe)
    e = np.full(DEMO.m_lwe, (DEMO.B_f + DEMO.B_g) // 2)
    assert not etcff.trapdoor_key_check(etcff.EtcffKey(A, (s @ A + e) % DEMO.q), R, DEMO)


def test_bad_trapdoor_rejected():
    rng = np.random.default_rng(9)
    kp = etcff.keygen("f", DEMO, rng)
    assert not etcff.trapdoor_key_check(kp.key, etcff.gen_trap(DEMO, rng)[1], DEMO)


# ---- truncated Gaussian ----------------------------------------------------------------------


def test_truncation_bound():
    e0 = etcff.sample_truncated_gaussian(DEMO, np.random.default_rng(10), size=100_000 // DEMO.m_lwe + 1)
    assert np.abs(e0).max() <= DEMO.e0_max


def test_gaussian_mean():
    x = etcff.sample_truncated_gaussian(DEMO, np.random.default_rng(11), size=1000).ravel()
    support, pmf = etcff.truncated_gaussian_pmf(DEMO)
    sd = np.sqrt((support ** 2 * pmf).sum())
    assert abs(x.mean()) <= 4 * sd / np.sqrt(x.size)


def test_gaussian_pmf_ratio():
    params = MICRO
    x = etcff.sample_truncated_gaussian(params, np.random.default_rng(12), size=1_000_000 // params.m_lwe).ravel()
    p0 = np.mean(x == 0)
    pmax = np.mean(np.abs(x) == params.e0_max) / 2
    expected = np.exp(np.pi * params.e0_max ** 2 / params.gauss_s ** 2)
    assert p0 / pmax == pytest.approx(expected, rel=0.05)


# ---- evaluation and preimages --------------------------------------------------------------


def test_eval_without_noise():
    rng = np.random.default_rng(13)
    kp = etcff.keygen("g", DEMO, rng)
    x = etcff.uniform_preimage(DEMO, rng)
    y = etcff.eval_sample(kp.key, 0, x, DEMO, rng, e0=np.zeros(DEMO.m_lwe, dtype=np.int64))
    assert (y == (etcff.embed(x, DEMO) @ kp.key.A) % DEMO.q).all()


@given(st.integers(0, 2**32 - 1), st.integers(0, 1), st.sampled_from(["f", "g"]))
def test_honest_sample_is_in_support(seed, b, kind):
    rng = np.random.default_rng(seed)
    kp = etcff.keygen(kind, DEMO, rng)
    x = etcff.uniform_preimage(DEMO, rng)
    y = etcff.eval_sample(kp.key, b, x, DEMO, rng)
    assert etcff.check_preimage(kp.key, b, x, y, DEMO)
    shifted = y.copy()
    shifted[0] = (shifted[0] + DEMO.e0_max + 1) % DEMO.q
    z = etcff.eval_sample(kp.key, b, x, DEMO, rng, e0=np.zeros(DEMO.m_lwe, dtype=np.int64))
    z[0] = (z[0] + DEMO.e0_max + 1) % DEMO.q
    assert not etcff.check_preimage(kp.key, b, x, z, DEMO)


def test_check_preimage_against_enumerated_support():
    rng = np.random.default_rng(14)
    kp = etcff.keygen("g", MICRO, rng)
    for b, idx in ((0, 3), (1, 9)):
        x = bits_of(idx, MICRO.w_pre)
        base = (etcff.embed(x, MICRO) @ kp.key.A + b * kp.key.v) % MICRO.q
        box = itertools.product(range(-MICRO.e0_max, MICRO.e0_max + 1), repeat=MICRO.m_lwe)
        support = {tuple(int(v) for v in (base + np.array(e0)) % MICRO.q) for e0 in box}
        for _ in range(500):
            y = (base + rng.integers(-2, 3, size=MICRO.m_lwe)) % MICRO.q
            assert etcff.check_preimage(kp.key, b, x, y, MICRO) == (tuple(int(v) for v in y) in support)


def test_recover_matches_oracle_micro():
    rng = np.random.default_rng(15)
    for trial in range(400):
        kp = etcff.keygen("fg"[trial % 2], MICRO, rng)
        if trial % 5 == 4:
            y = rng.integers(0, MICRO.q, size=MICRO.m_lwe)
        else:
            y = etcff.eval_sample(kp.key, int(rng.integers(0, 2)), etcff.uniform_preimage(MICRO, rng), MICRO, rng)
        got = {(b, tuple(int(v) for v in x)) for b, x in etcff.recover_preimages(kp.key, kp.R, y, MICRO)}
        assert got == oracle_preimages(kp.key, y, MICRO)


def test_g_keys_have_one_preimage():
    rng = np.random.default_rng(16)
    for _ in range(1000):
        kp = etcff.keygen("g", MICRO, rng)
        b = int(rng.integers(0, 2))
        x = etcff.uniform_preimage(MICRO, rng)
        pre = etcff.recover_preimages(kp.key, kp.R, etcff.eval_sample(kp.key, b, x, MICRO, rng), MICRO)
        assert len(pre) == 1 and pre[0][0] == b and (pre[0][1] == x).all()


def test_g_keys_injective_exhaustive():
    # supports of (b, x) and (b', x') meet iff their centres are within 2 e0_max
    rng = np.random.default_rng(17)
    for _ in range(20):
        kp = etcff.keygen("g", MICRO, rng)
        centres = [(etcff.embed(bits_of(i, 4), MICRO) @ kp.key.A + b * kp.key.v) % MICRO.q
                   for b in (0, 1) for i in range(16)]
        for c1, c2 in itertools.combinations(centres, 2):
            d = (c1 - c2) % MICRO.q
            assert np.minimum(d, MICRO.q - d).max() > 2 * MICRO.e0_max


def test_f_keys_two_preimages():
    rng = np.random.default_rng(18)
    for params in (MICRO, DEMO):
        for _ in range(100):
            kp = etcff.keygen("f", params, rng)
            xs = rng.integers(0, params.domain_size, size=params.n_lwe)
            # choose x' so that x' + s stays in the domain, then y = f(1, x') = f(0, x' + s)
            xs = xs % (params.domain_size - kp.s)
            x1 = etcff.unembed(xs, params)
            e0 = etcff.sample_truncated_gaussian(params, rng)
            e0 = np.clip(e0, -(params.e0_max - np.abs(kp.e).max()), params.e0_max - np.abs(kp.e).max())
            y = etcff.eval_sample(kp.key, 1, x1, params, rng, e0=e0)
            pre = dict(etcff.recover_preimages(kp.key, kp.R, y, params))
            assert set(pre) == {0, 1}
            assert (etcff.embed(pre[1], params) == xs).all()
            assert (etcff.embed(pre[0], params) == xs + kp.s).all()


def test_serialisation_round_trip():
    rng = np.random.default_rng(19)
    kp = etcff.keygen("g", DEMO, rng)
    key, q = etcff.key_from_bytes(etcff.key_to_bytes(kp.key, DEMO))
    assert q == DEMO.q and (key.A == kp.key.A).all() and (key.v == kp.key.v).all()
    assert (etcff.trapdoor_from_bytes(etcff.trapdoor_to_bytes(kp.R)) == kp.R).all()
