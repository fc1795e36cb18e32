"""Seeded hash families evaluated identically by clients and the server.

A 40-bit wire seed is expanded to a 64-bit key and the hash of coordinate
``x`` is word ``x`` of the SplitMix64 stream started at that key. Bins use a
multiply-shift reduction of the full 64-bit word (exact 128-bit high half),
so there is no modulo bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MASK40, ParameterError, mix64, stream_words

_TAG_BIN = np.uint64(0x243F6A8885A308D3)
_TAG_SIGN = np.uint64(0x13198A2E03707344)
_TAG_BIT = np.uint64(0xA4093822299F31D0)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S63 = np.uint64(63)


def _key(seeds, tag):
    seeds = np.asarray(seeds, dtype=np.uint64) & np.uint64(MASK40)
    return mix64(seeds ^ tag)


def _words(seeds, xs, tag):
    return stream_words(_key(seeds, tag), np.asarray(xs, dtype=np.uint64))


# Server loops evaluate one seed against many coordinates; expanding the
# seed to its key once per client halves the mixing work.

def bin_keys(seeds) -> np.ndarray:
    return _key(seeds, _TAG_BIN)


def sign_keys(seeds) -> np.ndarray:
    return _key(seeds, _TAG_SIGN)


def bit_keys(seeds) -> np.ndarray:
    return _key(seeds, _TAG_BIT)


def bins_keyed(keys, xs, b: int) -> np.ndarray:
    return mulhi_reduce(stream_words(keys, np.asarray(xs, dtype=np.uint64)), b)


def signs_keyed(keys, xs) -> np.ndarray:
    top = (stream_words(keys, np.asarray(xs, dtype=np.uint64)) >> _S63).astype(np.int8)
    return (2 * top - 1).astype(np.int8)


def bits_keyed(keys, xs) -> np.ndarray:
    return (stream_words(keys, np.asarray(xs, dtype=np.uint64)) >> _S63).astype(np.int8)


def mulhi_reduce(words, b: int):
    """``floor(words * b / 2**64)`` for uint64 words and ``b < 2**31``."""
    bb = np.uint64(b)
    hi = words >> _S32
    lo = words & _LO32
    # hi*b < 2**63 and (lo*b >> 32) < 2**31, so the sum cannot wrap
    return ((hi * bb + ((lo * bb) >> _S32)) >> _S32).astype(np.int64)


def bins(seeds, xs, b: int) -> np.ndarray:
    """Vectorised bin index in ``[0, b)``; ``seeds`` and ``xs`` broadcast."""
    if b < 1 or b >= 1 << 31:
        raise ParameterError(f"bin count {b} out of range")
    return mulhi_reduce(_words(seeds, xs, _TAG_BIN), b)


def signs(seeds, xs) -> np.ndarray:
    """Vectorised sign in ``{-1, +1}`` as int8."""
    top = (_words(seeds, xs, _TAG_SIGN) >> _S63).astype(np.int8)
    return (2 * top - 1).astype(np.int8)


def bits(seeds, xs) -> np.ndarray:
    """Vectorised ``{0, 1}`` hash used by binary local hashing."""
    return (_words(seeds, xs, _TAG_BIT) >> _S63).astype(np.int8)


def _check_seed(seed: int) -> None:
    if not 0 <= seed <= MASK40:
        raise ParameterError("hash seed must fit in 40 bits")


def _check_domain(xs, d: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.int64)
    if xs.size and (int(xs.min()) < 0 or int(xs.max()) >= d):
        raise ParameterError(f"coordinate outside domain [0, {d})")
    return xs


@dataclass(frozen=True)
class BinHash:
    """h: [d] -> [b]."""

    seed: int
    d: int
    b: int

    def __post_init__(self):
        _check_seed(self.seed)
        if self.d < 1 or self.b < 1:
            raise ParameterError("d and b must be positive")

    def __call__(self, x) -> int:
        return bin_of(self, x)

    def many(self, xs) -> np.ndarray:
        return bins(self.seed, _check_domain(xs, self.d), self.b)


@dataclass(frozen=True)
class SignHash:
    """s: [d] -> {-1, +1}."""

    seed: int
    d: int

    def __post_init__(self):
        _check_seed(self.seed)
        if self.d < 1:
            raise ParameterError("d must be positive")

    def __call__(self, x) -> int:
        return sign_of(self, x)

    def many(self, xs) -> np.ndarray:
        return signs(self.seed, _check_domain(xs, self.d))


def bin_of(h: BinHash, x: int) -> int:
    return int(h.many(np.array([x]))[0])


def sign_of(s: SignHash, x: int) -> int:
    return int(s.many(np.array([x]))[0])


def seed_to_bytes(seed: int) -> bytes:
    """5-byte little-endian wire form of a 40-bit seed."""
    _check_seed(seed)
    return int(seed).to_bytes(5, "little")


def seed_from_bytes(raw: bytes) -> int:
    if len(raw) != 5:
        raise ParameterError("a wire seed is exactly 5 bytes")
    return int.from_bytes(raw, "little")
