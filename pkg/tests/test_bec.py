import itertools

import numpy as np
import pytest

from conftest import codebook
from polarosd.bec import (
    DEFAULT_POLICY,
    ErasureWord,
    OutcomeKind,
    PolicyKind,
    ReferencePolicy,
    back_substitute,
    brute_force_ml_bec,
    ml_decode_bec,
    peel_bp,
    solve_reference,
    transmit_bec,
    triangulate,
    triangulate_parallel_variant,
)
from polarosd.gf2 import DenseBitMatrix, SolveKind, SparseBinaryMatrix
from polarosd.pcm import PrunedPcm, pruned_pcm_for
from polarosd.polar import make_code, sc_decode_with_guesses


def toy_pcm(rows, N, K):
    """A PCM whose columns are all codeword columns."""
    m = SparseBinaryMatrix(len(rows), N, rows)
    return PrunedPcm(m, tuple(range(N)), tuple((c,) for c in range(N)), N, K)


def random_instance(code, eps, rng):
    c = code.encode(rng.integers(0, 2, code.m))
    return c, transmit_bec(c, eps, rng)


@pytest.fixture(scope="module")
def p64():
    code = make_code(6, 26)
    return code, pruned_pcm_for(code)


@pytest.fixture(scope="module")
def p64_plain():
    code = make_code(6, 32, None)
    return code, pruned_pcm_for(code)


def test_transmit_bec_extremes(rng):
    c = rng.integers(0, 2, 32).astype(np.uint8)
    w0 = transmit_bec(c, 0.0, rng)
    assert w0.n_erased == 0 and np.array_equal(w0.values, c)
    w1 = transmit_bec(c, 1.0, rng)
    assert w1.n_erased == 32


def test_transmit_bec_seeded():
    c = np.ones(64, dtype=np.uint8)
    a = transmit_bec(c, 0.4, 7)
    b = transmit_bec(c, 0.4, 7)
    assert np.array_equal(a.erased, b.erased)
    assert np.array_equal(a.values[~a.erased], c[~a.erased])


def test_transmit_bec_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        transmit_bec(np.zeros(4, dtype=np.uint8), 1.5)


def test_policy_validation():
    with pytest.raises(ValueError):
        ReferencePolicy(PolicyKind.RANDOM_UNKNOWN, 0)
    assert DEFAULT_POLICY.kind is PolicyKind.MIN_UNKNOWN_CHECK and DEFAULT_POLICY.batch == 1


def test_clean_channel_exits_at_stage_one(p64, rng):
    code, p = p64
    c, w = random_instance(code, 0.0, rng)
    s = peel_bp(p, w)
    assert s.complete and s.n_u == 0
    out = ml_decode_bec(p, w)
    assert out.decoded and np.array_equal(out.codeword, c)
    assert out.stats.n_r == out.stats.n_e == 0 and out.stats.bp_success


def test_single_erasure_recovered_by_peeling():
    code = make_code(3, 4, None)
    p = pruned_pcm_for(code)
    c = code.encode([1, 0, 1, 1])
    for j in range(8):
        erased = np.zeros(8, bool)
        erased[j] = True
        w = ErasureWord(np.where(erased, 0, c).astype(np.uint8), erased, 0.1)
        s = peel_bp(p, w)
        assert s.complete
        out = ml_decode_bec(p, w)
        assert out.decoded and out.stats.n_r == 0
        assert np.array_equal(out.codeword, c)


def test_peel_contradiction_raises(p64):
    code, p = p64
    c = code.encode(np.zeros(code.m, dtype=np.uint8))
    values = c.copy()
    values[0] ^= 1
    with pytest.raises(ValueError):
        peel_bp(p, ErasureWord(values, np.zeros(code.N, bool), 0.0))


def _find_stopping_set(p, code, rng):
    for _ in range(2000):
        c, w = random_instance(code, 0.45, rng)
        s = peel_bp(p, w)
        if not s.complete:
            return c, w, s
    raise AssertionError("no stopping set found")


def test_stopping_set_on_p16(rng):
    code = make_code(4, 8, None)
    p = pruned_pcm_for(code)
    _, w, s = _find_stopping_set(p, code, rng)
    assert s.n_u > 0 or s.open_mask
    for r in s.residual_rows:
        assert (s.rows[r] & s.open_mask).bit_count() >= 2
    # Fig. 2 layout: decoded checks touch no unknown column
    for r in s.decoded_rows:
        assert not s.rows[r] & s.open_mask
    assert s.n_d + len(s.open_cols) == p.n_prime


def test_triangulate_noop_on_decoded_state(p64, rng):
    code, p = p64
    _, w = random_instance(code, 0.0, rng)
    s = triangulate(peel_bp(p, w))
    assert s.n_r == 0 and s.n_u == 0


def test_three_cycle_needs_one_reference():
    p = toy_pcm([[0, 1], [1, 2], [0, 2]], 3, 1)
    w = ErasureWord(np.zeros(3, np.uint8), np.ones(3, bool), 1.0)
    s = peel_bp(p, w)
    assert not s.complete
    t = triangulate(s)
    assert t.n_r == 1 and t.n_u == 2 and t.n_e == 1
    t.check_shape()


def test_repetition_chain_is_ambiguous():
    p = toy_pcm([[0, 1], [1, 2]], 3, 1)
    w = ErasureWord(np.zeros(3, np.uint8), np.ones(3, bool), 1.0)
    out = ml_decode_bec(p, w)
    assert out.kind is OutcomeKind.AMBIGUOUS and out.codeword is None
    assert out.stats.n_r == 1
    assert not out.fallback_word.any()


@pytest.mark.parametrize("parallel", [False, True])
def test_shape_and_counts(p64, rng, parallel):
    code, p = p64
    seen = 0
    for _ in range(300):
        _, w = random_instance(code, 0.45, rng)
        s = peel_bp(p, w)
        if s.complete:
            continue
        seen += 1
        t = (triangulate_parallel_variant if parallel else triangulate)(s)
        t.check_shape()
        assert t.n_d + t.n_r + t.n_u == p.n_prime
        assert t.n_c + t.n_u + t.n_e == p.matrix.n_rows
        H13 = t.block(1, 3).to_array()
        assert np.array_equal(np.diag(H13), np.ones(t.n_u, np.uint8))
        assert not np.triu(H13, 1).any()
        if parallel:
            assert np.array_equal(H13, np.eye(t.n_u, dtype=np.uint8))
            assert not t.block(2, 3).to_array().any()
        else:
            # permutation only: row contents are those of the pruned PCM
            assert t.rows == list(p.row_bits)
            assert t.permuted() == t.perms.apply(p.matrix.to_dense())
    assert seen > 20


def test_back_substitution_exhaustive(p64, rng):
    code, p = p64
    checked = 0
    for _ in range(400):
        _, w = random_instance(code, 0.45, rng)
        s = peel_bp(p, w)
        if s.complete:
            continue
        t = triangulate(s)
        if t.n_r > 8:
            continue
        e = back_substitute(t)
        assert e.A.shape == (t.n_u, t.n_r)
        H12 = t.block(1, 2)
        H13 = t.block(1, 3)
        s1 = t.block(1, 1).mul_vec([(t.decoded_value >> c) & 1 for c in t.decoded_cols])
        for bits in itertools.product((0, 1), repeat=t.n_r):
            r = np.array(bits, dtype=np.uint8)
            u = e.evaluate(r)
            assert np.array_equal(H13.mul_vec(u), H12.mul_vec(r) ^ s1)
        checked += 1
    assert checked > 20


def test_back_substitution_decoupled_diagonal():
    # x0 + x3 = 0, x1 + x3 = 0 ... with x3 known: H12 = 0 and H13 = I
    p = toy_pcm([[0, 3], [1, 3], [2, 3]], 4, 1)
    w = ErasureWord(np.array([0, 0, 0, 1], np.uint8), np.array([1, 1, 1, 0], bool), 0.5)
    s = triangulate(peel_bp(p, w))
    e = back_substitute(s)
    assert s.n_r == 0
    assert not e.A.to_array().any()


def test_solve_reference_vacuous(p64, rng):
    code, p = p64
    _, w = random_instance(code, 0.0, rng)
    s = triangulate(peel_bp(p, w))
    out = solve_reference(s, back_substitute(s))
    assert out.kind is SolveKind.UNIQUE and out.solution.size == 0


def test_all_erased_p16_is_ambiguous():
    code = make_code(4, 8, None)
    p = pruned_pcm_for(code)
    w = ErasureWord(np.zeros(16, np.uint8), np.ones(16, bool), 1.0)
    out = ml_decode_bec(p, w)
    assert out.kind is OutcomeKind.AMBIGUOUS
    assert brute_force_ml_bec(code.standard_pcm(), w).kind is OutcomeKind.AMBIGUOUS


@pytest.mark.parametrize("eps", [0.3, 0.5, 0.6])
def test_brute_force_matches_codebook_n16(eps, rng):
    code = make_code(4, 8, None)
    words = codebook(code.generator)
    H = code.standard_pcm()
    for _ in range(100):
        c, w = random_instance(code, eps, rng)
        consistent = words[(words[:, ~w.erased] == w.values[~w.erased]).all(axis=1)]
        out = brute_force_ml_bec(H, w)
        assert out.decoded == (len(consistent) == 1)
        if out.decoded:
            assert np.array_equal(out.codeword, c)
        mine = ml_decode_bec(pruned_pcm_for(code), w)
        assert mine.decoded == out.decoded


def test_brute_force_trivial_cases(rng):
    code = make_code(4, 8, None)
    c = code.encode(rng.integers(0, 2, 8))
    H = code.standard_pcm()
    assert brute_force_ml_bec(H, ErasureWord(c, np.zeros(16, bool), 0)).decoded
    assert not brute_force_ml_bec(H, ErasureWord(np.zeros(16, np.uint8), np.ones(16, bool), 1)).decoded


POLICIES = [
    ReferencePolicy(PolicyKind.MIN_UNKNOWN_CHECK, 1),
    ReferencePolicy(PolicyKind.RANDOM_UNKNOWN, 1),
    ReferencePolicy(PolicyKind.MIN_UNKNOWN_CHECK, 4),
]


@pytest.mark.parametrize("policy", POLICIES, ids=["min-check", "random", "min-check-x4"])
@pytest.mark.parametrize("parallel", [False, True])
@pytest.mark.parametrize("fixture", ["p64", "p64_plain"])
def test_ml_matches_brute_force(policy, parallel, fixture, request):
    code, p = request.getfixturevalue(fixture)
    rng = np.random.default_rng(99)
    H = code.standard_pcm()
    for eps in (0.3, 0.45, 0.55):
        for _ in range(150):
            c, w = random_instance(code, eps, rng)
            out = ml_decode_bec(p, w, policy, rng, parallel)
            ref = brute_force_ml_bec(H, w)
            assert out.kind is ref.kind
            if out.decoded:
                assert np.array_equal(out.codeword, c)
                assert np.array_equal(ref.codeword, c)
            st = out.stats
            assert st.stage3_xors <= st.stage3_bound
            if not st.bp_success:
                assert st.elim_dims == (st.n_e, st.n_r + 1)
            # the fallback word is still a codeword consistent with the channel
            word = out.best_guess()
            assert np.array_equal(word[~w.erased], w.values[~w.erased])
            assert code.is_codeword(word)


def test_batched_references_may_use_more(p64):
    code, p = p64
    rng = np.random.default_rng(5)
    single = batched = 0
    for _ in range(300):
        _, w = random_instance(code, 0.45, rng)
        a = ml_decode_bec(p, w, ReferencePolicy(PolicyKind.MIN_UNKNOWN_CHECK, 1))
        b = ml_decode_bec(p, w, ReferencePolicy(PolicyKind.MIN_UNKNOWN_CHECK, 4), parallel=True)
        assert a.kind is b.kind
        single += a.stats.n_r
        batched += b.stats.n_r
    assert batched >= single


def test_ml_never_worse_than_sc(p64_plain):
    code, p = p64_plain
    rng = np.random.default_rng(3)
    ml_err = sc_err = 0
    for _ in range(500):
        c, w = random_instance(code, 0.4, rng)
        llr = np.where(w.erased, 0.0, np.where(w.values == 1, -np.inf, np.inf))
        dec, guesses = sc_decode_with_guesses(code.polar, llr)
        sc_ok = guesses == 0 and np.array_equal(dec, c)
        ml_ok = ml_decode_bec(p, w).decoded
        assert ml_ok or not sc_ok
        ml_err += not ml_ok
        sc_err += not sc_ok
    assert ml_err <= sc_err


def test_length_mismatch(p64):
    _, p = p64
    with pytest.raises(ValueError):
        peel_bp(p, ErasureWord(np.zeros(8, np.uint8), np.ones(8, bool), 1))


def test_dense_pcm_type_guard():
    with pytest.raises(ValueError):
        brute_force_ml_bec(DenseBitMatrix.identity(4), ErasureWord(np.zeros(8, np.uint8), np.ones(8, bool), 1))
