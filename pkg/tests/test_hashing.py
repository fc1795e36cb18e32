import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ksparse_ldp import hashing
from ksparse_ldp.core import MASK40, MASK64, ParameterError
from ksparse_ldp.hashing import BinHash, SignHash, bin_of, sign_of


def test_single_bin_is_always_zero():
    h = BinHash(123, 1000, 1)
    assert set(h.many(np.arange(1000)).tolist()) == {0}


def test_deterministic():
    assert bin_of(BinHash(9, 10, 16), 0) == bin_of(BinHash(9, 10, 16), 0)
    assert sign_of(SignHash(9, 10), 4) == sign_of(SignHash(9, 10), 4)


@given(st.integers(0, MASK64), st.integers(1, (1 << 31) - 1))
def test_mulhi_matches_bigint(word, b):
    got = hashing.mulhi_reduce(np.array([word], dtype=np.uint64), b)[0]
    assert got == (word * b) >> 64


def test_bins_chi_square_uniform():
    rng = np.random.default_rng(11)
    seeds = rng.integers(0, MASK40 + 1, size=100, dtype=np.uint64)
    xs = np.arange(10_000)
    passed = 0
    for s in seeds:
        counts = np.bincount(hashing.bins(s, xs, 16), minlength=16)
        passed += stats.chisquare(counts).pvalue > 0.001
    assert passed >= 95


def test_sign_self_product_is_one():
    rng = np.random.default_rng(1)
    seeds = rng.integers(0, MASK40 + 1, size=(50, 1), dtype=np.uint64)
    s = hashing.signs(seeds, np.arange(500)[None, :]).astype(np.int64)
    assert np.all(s * s == 1)


def test_sign_mean_near_zero():
    rng = np.random.default_rng(2)
    seeds = rng.integers(0, MASK40 + 1, size=100_000, dtype=np.uint64)
    # 3 sigma of a mean of 1e5 fair signs is 0.0095
    assert abs(hashing.signs(seeds, 17).mean()) < 0.02


def test_families_are_not_identical():
    seeds = np.arange(1000, dtype=np.uint64)
    top_bin = hashing.bins(seeds, 5, 2)
    sign_bit = (hashing.signs(seeds, 5) > 0).astype(np.int64)
    assert not np.array_equal(top_bin, sign_bit)


def test_only_40_seed_bits_matter():
    assert hashing.bins(5 | (1 << 45), 3, 64) == hashing.bins(5, 3, 64)


def test_keyed_helpers_agree():
    seeds = np.arange(200, dtype=np.uint64)
    xs = np.arange(30)[:, None]
    assert np.array_equal(hashing.bins(seeds, xs, 7), hashing.bins_keyed(hashing.bin_keys(seeds), xs, 7))
    assert np.array_equal(hashing.signs(seeds, xs), hashing.signs_keyed(hashing.sign_keys(seeds), xs))
    assert np.array_equal(hashing.bits(seeds, xs), hashing.bits_keyed(hashing.bit_keys(seeds), xs))


def test_domain_and_seed_checks():
    with pytest.raises(ParameterError):
        BinHash(1 << 40, 10, 2)
    with pytest.raises(ParameterError):
        BinHash(1, 10, 2).many([10])
    with pytest.raises(ParameterError):
        SignHash(1, 10).many([-1])
    with pytest.raises(ParameterError):
        hashing.bins(1, 0, 0)


@given(st.integers(0, MASK40))
def test_seed_bytes_round_trip(seed):
    raw = hashing.seed_to_bytes(seed)
    assert len(raw) == 5
    assert hashing.seed_from_bytes(raw) == seed


def test_seed_bytes_errors():
    with pytest.raises(ParameterError):
        hashing.seed_to_bytes(1 << 40)
    with pytest.raises(ParameterError):
        hashing.seed_from_bytes(b"1234")
