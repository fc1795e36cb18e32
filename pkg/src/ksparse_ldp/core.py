"""Domain types, Laplace sampling and seed derivation shared by every mechanism.

All pseudo-randomness used by the mechanisms is counter based: a client's
noise for slot ``j`` is a pure function of ``(noise_seed, j)``. This keeps
encodings identical no matter how clients are batched or threaded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

MASK40 = (1 << 40) - 1
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(GOLDEN)


class ParameterError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class Purpose(enum.IntEnum):
    BIN_HASH = 1
    SIGN_HASH = 2
    NOISE = 3
    BLH_HASH = 4
    DATASET = 5
    RUN = 6


# ---------------------------------------------------------------------------
# 64-bit mixing (SplitMix64 finalizer), vectorised over uint64 arrays.
# ---------------------------------------------------------------------------

def mix64(z):
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_words(keys, counters):
    """Word number ``counter`` of the SplitMix64 stream whose state starts at ``key``."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = keys + (counters + np.uint64(1)) * _GAMMA
    return mix64(state)


def words_to_unit(words):
    """Map uint64 words to floats strictly inside (0, 1)."""
    # 52 bits so that top + 0.5 is still exact and the result never rounds to 1
    top = (np.asarray(words, dtype=np.uint64) >> np.uint64(12)).astype(np.float64)
    return (top + 0.5) * (1.0 / 4503599627370496.0)


_STREAM_TAG = np.uint64(0x6A09E667F3BCC909)


def counter_uniforms(seeds, count: int, offset: int = 0):
    """Uniforms of shape ``(len(seeds), count)`` from per-seed counter streams."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    ctr = np.arange(offset, offset + count, dtype=np.uint64)
    return counter_uniforms_at(seeds[:, None], ctr[None, :])


def counter_uniforms_at(seeds, counters):
    """Uniform number ``counters`` of each seed's stream (broadcasting)."""
    keys = mix64(np.asarray(seeds, dtype=np.uint64) ^ _STREAM_TAG)
    return words_to_unit(stream_words(keys, counters))


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------

def derive_client_seeds(master_seed: int, client_indices, purpose: Purpose):
    """Vectorised :func:`derive_client_seed`; returns a uint64 array."""
    idx = np.asarray(client_indices)
    if idx.size and int(idx.min()) < 0:
        raise ParameterError("client_index must be non-negative")
    m = np.uint64(int(master_seed) & MASK64)
    tag = mix64(np.uint64(int(purpose)) ^ np.uint64(0xD1B54A32D192ED03))
    base = mix64(m ^ tag)
    return mix64(stream_words(base, idx.astype(np.uint64)) ^ tag)


def derive_client_seed(master_seed: int, client_index: int, purpose: Purpose) -> int:
    """Deterministic 64-bit seed for one ``(master, client, purpose)`` triple."""
    if client_index < 0:
        raise ParameterError("client_index must be non-negative")
    return int(derive_client_seeds(master_seed, np.array([client_index]), purpose)[0])


def wire_seed(seed: int) -> int:
    """Truncate a 64-bit seed to the 40 bits that travel in a report."""
    return int(seed) & MASK40


@dataclass(frozen=True)
class ClientSeeds:
    """The three seeds one client needs: two 40-bit hash seeds and a noise seed."""

    bin: int
    sign: int
    noise: int

    def __post_init__(self):
        if not (0 <= self.bin <= MASK40 and 0 <= self.sign <= MASK40):
            raise ParameterError("hash seeds must fit in 40 bits")

    @classmethod
    def derive(cls, master_seed: int, client_index: int) -> "ClientSeeds":
        return cls(
            bin=wire_seed(derive_client_seed(master_seed, client_index, Purpose.BIN_HASH)),
            sign=wire_seed(derive_client_seed(master_seed, client_index, Purpose.SIGN_HASH)),
            noise=derive_client_seed(master_seed, client_index, Purpose.NOISE),
        )


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class CounterStream:
    """Stateful view of a counter-based stream, for scalar call sites.

    ``uniforms(count, offset)`` is pure; ``random()`` advances a cursor.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._cursor = 0

    def uniforms(self, count: int, offset: int = 0) -> np.ndarray:
        return counter_uniforms(np.array([self.seed], dtype=np.uint64), count, offset)[0]

    def random(self) -> float:
        u = float(self.uniforms(1, self._cursor)[0])
        self._cursor += 1
        return u


class _NoiseOff:
    """Sentinel: pass as ``rng`` to disable randomisation (tests only)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOISE_OFF"


NOISE_OFF = _NoiseOff()


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF Laplace transform of uniforms in (0, 1)."""
    if not scale > 0:
        raise ParameterError(f"Laplace scale must be positive, got {scale}")
    c = np.asarray(u, dtype=np.float64) - 0.5
    return -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def laplace_sample(scale: float, rng) -> float:
    """One zero-mean Laplace draw of the given scale.

    ``rng`` is anything with a ``random()`` method returning uniforms in
    [0, 1) (``numpy.random.Generator``, ``random.Random``, :class:`CounterStream`).
    A zero draw is rejected so the transform stays finite.
    """
    if not scale > 0:
        raise ParameterError(f"Laplace scale must be positive, got {scale}")
    u = rng.random()
    while u <= 0.0:
        u = rng.random()
    return float(laplace_from_uniform(u, scale))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseVector:
    """A d-dimensional vector with at most ``k`` non-zero entries in [-1, 1].

    Entries are kept sorted by coordinate; explicit zeros are rejected.
    """

    dim: int
    k: int
    entries: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or self.k < 1:
            raise ParameterError("dim and k must be positive")
        if self.k > self.dim:
            raise ParameterError(f"sparsity k={self.k} exceeds dim={self.dim}")
        if len(self.entries) > self.k:
            raise ParameterError(f"{len(self.entries)} entries exceed sparsity k={self.k}")
        clean = {}
        for idx, val in sorted(self.entries.items()):
            idx, val = int(idx), float(val)
            if not 0 <= idx < self.dim:
                raise ParameterError(f"coordinate {idx} outside [0, {self.dim})")
            if not -1.0 <= val <= 1.0:
                raise ParameterError(f"value {val} at coordinate {idx} outside [-1, 1]")
            if val == 0.0:
                raise ParameterError(f"explicit zero at coordinate {idx}")
            clean[idx] = val
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_arrays(cls, dim: int, k: int, indices, values) -> "SparseVector":
        return cls(dim, k, dict(zip((int(i) for i in indices), (float(v) for v in values))))

    @classmethod
    def binary(cls, dim: int, k: int, items) -> "SparseVector":
        return cls(dim, k, {int(i): 1.0 for i in items})

    @property
    def indices(self) -> np.ndarray:
        return np.fromiter(self.entries.keys(), dtype=np.int64, count=len(self.entries))

    @property
    def values(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), dtype=np.float64, count=len(self.entries))

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def is_binary(self) -> bool:
        return all(v == 1.0 for v in self.entries.values())

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def l1_distance(self, other: "SparseVector") -> float:
        keys = set(self.entries) | set(other.entries)
        return math.fsum(abs(self.entries.get(i, 0.0) - other.entries.get(i, 0.0)) for i in keys)


@dataclass(frozen=True)
class PrivacyBudget:
    """Privacy target under L-neighbouring LDP.

    ``L = 2`` is event level and ``L = 2k`` is user level for real vectors.
    """

    epsilon: float
    delta: float = 0.0
    L: float = 2.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ParameterError("delta must lie in [0, 1)")
        if not self.L > 0:
            raise ParameterError("neighbour distance L must be positive")

    @classmethod
    def event_level(cls, epsilon: float, delta: float = 0.0) -> "PrivacyBudget":
        return cls(epsilon, delta, 2.0)

    @classmethod
    def user_level(cls, epsilon: float, k: int) -> "PrivacyBudget":
        return cls(epsilon, 0.0, 2.0 * k)

    def check_sparsity(self, k: int) -> None:
        if self.L > 2 * k:
            raise ParameterError(f"L={self.L} exceeds the maximal distance 2k={2 * k}")


@dataclass(frozen=True)
class MechanismParams:
    """Resolved knobs for the binning mechanism.

    ``eta`` is infinite unless the regime clips (pure user-level LDP).
    """

    b: int
    eta: float
    Delta: float
    budget: PrivacyBudget
    k: int
    d: int
    n: int
    beta: float = 0.05
    regime: str = "custom"

    def __post_init__(self):
        if not 1 <= self.b <= self.k:
            raise ParameterError(f"bin count b={self.b} must lie in [1, k={self.k}]")
        if not self.Delta > 0:
            raise ParameterError("Delta must be positive")
        if not self.eta > 0:
            raise ParameterError("clip range eta must be positive")
        if self.k > self.d or self.n < 1:
            raise ParameterError("need 1 <= k <= d and n >= 1")
        if not 0 < self.beta < 1:
            raise ParameterError("beta must lie in (0, 1)")

    @property
    def clipped(self) -> bool:
        return math.isfinite(self.eta)

    @property
    def noise_scale(self) -> float:
        return self.Delta / self.budget.epsilon


@dataclass(frozen=True)
class ClientReport:
    """What the server receives from one client."""

    hash_seed_h: int
    hash_seed_s: int
    bin_values: np.ndarray
    discretized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.bin_values)
        vals = vals.astype(np.int64 if self.discretized else np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "bin_values", vals)
        if vals.ndim != 1 or vals.size < 1:
            raise ParameterError("bin_values must be a non-empty 1-d array")
        if not (0 <= self.hash_seed_h <= MASK40 and 0 <= self.hash_seed_s <= MASK40):
            raise ParameterError("hash seeds must fit in 40 bits")

    @property
    def b(self) -> int:
        return int(self.bin_values.size)

    def __eq__(self, other):
        if not isinstance(other, ClientReport):
            return NotImplemented
        return (
            self.hash_seed_h == other.hash_seed_h
            and self.hash_seed_s == other.hash_seed_s
            and self.discretized == other.discretized
            and np.array_equal(self.bin_values, other.bin_values)
        )

    __hash__ = None


class SparseRows:
    """n sparse vectors stored row-wise (CSR) for vectorised encoding.

    Row ``i`` holds ``indices[indptr[i]:indptr[i+1]]`` with matching values.
    """

    def __init__(self, d: int, k: int, indptr, indices, values):
        self.d = int(d)
        self.k = int(k)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.indptr.ndim != 1 or self.indptr.size < 1 or self.indptr[0] != 0:
            raise ParameterError("indptr must start at 0")
        if self.indptr[-1] != self.indices.size or self.indices.size != self.values.size:
            raise ParameterError("indptr, indices and values disagree in length")
        counts = np.diff(self.indptr)
        if counts.size and (counts.min() < 0 or counts.max() > self.k):
            raise ParameterError(f"a row has more than k={self.k} entries")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.d:
                raise ParameterError(f"coordinate outside [0, {self.d})")
            if np.abs(self.values).max() > 1.0 or np.any(self.values == 0.0):
                raise ParameterError("values must be non-zero and inside [-1, 1]")

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    @property
    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def row(self, i: int) -> SparseVector:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVector.from_arrays(self.d, self.k, self.indices[lo:hi], self.values[lo:hi])

    def __iter__(self):
        return (self.row(i) for i in range(self.n))

    def __len__(self):
        return self.n

    def is_binary(self) -> bool:
        return bool(np.all(self.values == 1.0))

    def binarized(self) -> "SparseRows":
        return SparseRows(self.d, self.k, self.indptr, self.indices, np.ones_like(self.values))

    def column_means(self) -> np.ndarray:
        """Exact mean vector (dense) of the stored rows."""
        return np.bincount(self.indices, weights=self.values, minlength=self.d) / self.n

    def column_frequencies(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.d) / self.n

    @classmethod
    def from_vectors(cls, vectors, d: int | None = None, k: int | None = None) -> "SparseRows":
        vectors = list(vectors)
        if not vectors and (d is None or k is None):
            raise ParameterError("empty input needs explicit d and k")
        d = vectors[0].dim if d is None else d
        k = max(v.k for v in vectors) if k is None else k
        counts = [v.nnz for v in vectors]
        indptr = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
        idx = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0)
        val = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0)
        return cls(d, k, indptr, idx, val)
