import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksparse_ldp.core import (
    MASK40,
    MASK64,
    ClientReport,
    ClientSeeds,
    CounterStream,
    MechanismParams,
    ParameterError,
    PrivacyBudget,
    Purpose,
    SparseRows,
    SparseVector,
    counter_uniforms,
    derive_client_seed,
    derive_client_seeds,
    laplace_from_uniform,
    laplace_sample,
    mix64,
    stream_words,
    words_to_unit,
)


def splitmix64_reference(state, count):
    """Plain-integer SplitMix64, written independently of the numpy path."""
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def test_stream_matches_published_splitmix_vector():
    words = stream_words(np.uint64(1234567), np.arange(3, dtype=np.uint64))
    assert [int(w) for w in words] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


@given(st.integers(0, MASK64), st.integers(0, 50))
def test_stream_matches_reference(key, ctr):
    ref = splitmix64_reference(key, ctr + 1)[-1]
    assert int(stream_words(np.uint64(key), np.uint64(ctr))) == ref


def test_mix64_no_overflow_warning():
    with np.errstate(all="raise"):
        mix64(np.array([MASK64, 0, 12345], dtype=np.uint64))


def test_words_to_unit_open_interval():
    u = words_to_unit(np.array([0, MASK64], dtype=np.uint64))
    assert 0.0 < u[0] < 1e-15
    assert 1.0 - 1e-15 < u[1] < 1.0


def test_laplace_inverse_cdf_points():
    assert laplace_from_uniform(0.5, 1.0) == 0.0
    assert laplace_from_uniform(0.75, 1.0) == pytest.approx(math.log(2))
    assert laplace_from_uniform(0.25, 1.0) == pytest.approx(-math.log(2))


def test_laplace_moments():
    u = counter_uniforms(np.array([2024], dtype=np.uint64), 10**6)[0]
    x = laplace_from_uniform(u, 2.0)
    # sd of the mean is sqrt(2*4/1e6) ~ 0.0028; of mean |x| is 2/1e3 = 0.002
    assert abs(x.mean()) < 0.02
    assert abs(np.abs(x).mean() - 2.0) < 0.02


def test_laplace_rejects_bad_scale():
    with pytest.raises(ParameterError):
        laplace_from_uniform(0.3, 0.0)
    with pytest.raises(ParameterError):
        laplace_sample(-1.0, np.random.default_rng(0))


def test_laplace_sample_skips_zero_uniform():
    class Fixed:
        def __init__(self):
            self.vals = [0.0, 0.75]

        def random(self):
            return self.vals.pop(0)

    assert laplace_sample(1.0, Fixed()) == pytest.approx(math.log(2))


def test_seed_derivation_examples():
    m = 0xC0FFEE
    assert derive_client_seed(m, 0, Purpose.BIN_HASH) == derive_client_seed(m, 0, Purpose.BIN_HASH)
    assert derive_client_seed(m, 0, Purpose.BIN_HASH) != derive_client_seed(m, 0, Purpose.SIGN_HASH)
    assert derive_client_seed(m, 7, Purpose.NOISE) != derive_client_seed(m + 1, 7, Purpose.NOISE)


def test_seed_derivation_rejects_negative_index():
    with pytest.raises(ParameterError):
        derive_client_seed(1, -1, Purpose.NOISE)


def test_seeds_distinct_across_clients_and_purposes():
    idx = np.arange(20_000)
    seen = np.concatenate([derive_client_seeds(5, idx, p) for p in Purpose])
    assert np.unique(seen).size == seen.size


@given(st.integers(0, MASK64), st.integers(0, 10**9), st.sampled_from(list(Purpose)))
def test_seed_derivation_pure(master, idx, purpose):
    a = derive_client_seed(master, idx, purpose)
    vec = derive_client_seeds(master, np.array([0, idx]), purpose)
    assert a == int(vec[1])
    assert 0 <= a <= MASK64


def test_client_seeds_are_40_bit():
    s = ClientSeeds.derive(99, 3)
    assert s.bin <= MASK40 and s.sign <= MASK40
    assert s.noise == derive_client_seed(99, 3, Purpose.NOISE)
    with pytest.raises(ParameterError):
        ClientSeeds(1 << 41, 0, 0)


def test_counter_stream_cursor_matches_pure_view():
    cs = CounterStream(77)
    seq = [cs.random() for _ in range(5)]
    assert np.array_equal(seq, CounterStream(77).uniforms(5))
    assert np.array_equal(CounterStream(77).uniforms(3, offset=2), seq[2:])


def test_sparse_vector_canonical_form():
    v = SparseVector(10, 3, {7: 0.5, 2: -1.0})
    assert list(v.entries) == [2, 7]
    assert v == SparseVector(10, 3, {2: -1.0, 7: 0.5})
    assert np.array_equal(v.indices, [2, 7])
    assert v.to_dense()[7] == 0.5


@pytest.mark.parametrize(
    "entries, k",
    [({0: 0.0}, 2), ({10: 0.5}, 2), ({0: 1.5}, 2), ({0: 1, 1: 1, 2: 1}, 2), ({-1: 0.5}, 2)],
)
def test_sparse_vector_rejects(entries, k):
    with pytest.raises(ParameterError):
        SparseVector(10, k, entries)


@st.composite
def sparse_vectors(draw, dim=30, k=6):
    idx = draw(st.lists(st.integers(0, dim - 1), max_size=k, unique=True))
    vals = draw(st.lists(
        st.floats(-1, 1, allow_nan=False).filter(lambda x: x != 0), min_size=len(idx), max_size=len(idx)
    ))
    return SparseVector.from_arrays(dim, k, idx, vals)


@given(sparse_vectors(), st.randoms())
def test_sparse_vector_order_independent(v, rnd):
    pairs = list(v.entries.items())
    rnd.shuffle(pairs)
    w = SparseVector.from_arrays(v.dim, v.k, [p[0] for p in pairs], [p[1] for p in pairs])
    assert w == v
    assert list(w.indices) == sorted(w.indices)


def test_l1_distance():
    a = SparseVector(5, 2, {0: 1.0, 1: 0.5})
    b = SparseVector(5, 2, {1: -0.5, 3: 1.0})
    assert a.l1_distance(b) == 3.0


def test_privacy_budget_validation():
    assert PrivacyBudget.event_level(1.0).L == 2.0
    assert PrivacyBudget.user_level(1.0, 8).L == 16.0
    for bad in [dict(epsilon=0), dict(epsilon=1, delta=1.0), dict(epsilon=1, L=0)]:
        with pytest.raises(ParameterError):
            PrivacyBudget(**bad)
    with pytest.raises(ParameterError):
        PrivacyBudget(1.0, 0.0, 20.0).check_sparsity(4)


def test_mechanism_params_validation():
    bud = PrivacyBudget(1.0)
    p = MechanismParams(4, math.inf, 2.0, bud, 16, 100, 10)
    assert not p.clipped and p.noise_scale == 2.0
    with pytest.raises(ParameterError):
        MechanismParams(0, math.inf, 2.0, bud, 16, 100, 10)
    with pytest.raises(ParameterError):
        MechanismParams(17, math.inf, 2.0, bud, 16, 100, 10)
    with pytest.raises(ParameterError):
        MechanismParams(1, math.inf, 0.0, bud, 16, 100, 10)


def test_client_report_immutable_and_comparable():
    r = ClientReport(1, 2, [0.5, -1.0])
    with pytest.raises(ValueError):
        r.bin_values[0] = 3.0
    assert r == ClientReport(1, 2, np.array([0.5, -1.0]))
    assert r != ClientReport(1, 2, [0.5, -1.0], discretized=True)
    with pytest.raises(ParameterError):
        ClientReport(1 << 40, 0, [1.0])
    with pytest.raises(ParameterError):
        ClientReport(0, 0, [])


def test_sparse_rows_round_trip_and_truth():
    rng = np.random.default_rng(3)
    vecs = []
    for _ in range(50):
        idx = rng.choice(20, size=rng.integers(0, 5), replace=False)
        vecs.append(SparseVector.from_arrays(20, 4, idx, rng.uniform(0.1, 1, idx.size)))
    rows = SparseRows.from_vectors(vecs)
    assert rows.n == 50 and list(rows) == vecs
    brute = np.mean([v.to_dense() for v in vecs], axis=0)
    assert np.allclose(rows.column_means(), brute, rtol=0, atol=1e-15)
    freq = np.mean([v.to_dense() != 0 for v in vecs], axis=0)
    assert np.array_equal(rows.column_frequencies(), freq)


def test_sparse_rows_rejects_overfull_row():
    with pytest.raises(ParameterError):
        SparseRows(10, 1, [0, 2], [0, 1], [1.0, 1.0])
