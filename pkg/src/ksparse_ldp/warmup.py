"""Binary-vector warmup: binary local hashing and the bucket-splitting scheme.

Binary local hashing (BLH) is the one-item frequency oracle: a client hashes
its item to one bit with a private {0,1} hash over ``[d+1]`` and flips that
bit with probability ``1/(1+e^eps)``. The bucketed scheme splits a client's
``k`` items into ``k`` buckets with a private hash and runs BLH once per
bucket, replacing empty or crowded buckets by the dummy item ``d``.

``epsilon = math.inf`` disables the flip (and the debiasing factor) for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hashing
from .core import (
    MASK40,
    CounterStream,
    ParameterError,
    Purpose,
    SparseRows,
    counter_uniforms,
    derive_client_seeds,
    mix64,
    stream_words,
)


def flip_probability(epsilon: float) -> float:
    if math.isinf(epsilon):
        return 0.0
    return 1.0 / (1.0 + math.exp(epsilon))


def debias_factor(epsilon: float) -> float:
    """``(e^eps + 1) / (e^eps - 1)``; 1 when randomisation is disabled."""
    if math.isinf(epsilon):
        return 1.0
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive to debias")
    return (math.exp(epsilon) + 1.0) / math.expm1(epsilon)


def survival_probability(k: int) -> float:
    """Chance that an item shares its bucket with none of the other k-1 items."""
    return (1.0 - 1.0 / k) ** (k - 1)


@dataclass(frozen=True)
class BlhReport:
    seed: int
    bit: int

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise ParameterError("bit must be 0 or 1")
        if not 0 <= self.seed <= MASK40:
            raise ParameterError("seed must fit in 40 bits")


def _uniform(rng) -> float:
    if isinstance(rng, CounterStream):
        return rng.random()
    return float(rng.random())


def blh_encode(x: int, epsilon: float, seed: int, rng, d: int | None = None) -> BlhReport:
    """Hash ``x`` to a bit with ``seed`` and flip it with probability 1/(1+e^eps)."""
    if x < 0 or (d is not None and x > d):
        raise ParameterError(f"item {x} outside [0, {d}]")
    if epsilon < 0:
        raise ParameterError("epsilon must be non-negative")
    bit = int(hashing.bits(seed, x))
    q = flip_probability(epsilon)
    if q > 0 and _uniform(rng) < q:
        bit ^= 1
    return BlhReport(seed, bit)


def blh_matches(seeds, report_bits, probes) -> np.ndarray:
    """Per-probe count of reports whose bit equals the probe's hash bit."""
    probes = np.asarray(probes, dtype=np.int64)
    seeds = np.asarray(seeds, dtype=np.uint64)
    report_bits = np.asarray(report_bits, dtype=np.int8)
    out = np.empty(probes.size, dtype=np.int64)
    keys = hashing.bit_keys(seeds)[None, :]
    step = max(1, (1 << 21) // max(seeds.size, 1))
    for lo in range(0, probes.size, step):
        hb = hashing.bits_keyed(keys, probes[lo:lo + step, None])
        out[lo:lo + step] = (hb == report_bits[None, :]).sum(axis=1)
    return out


def blh_encode_batch(items, epsilon: float, master_seed: int):
    """BLH reports of clients holding ``items[i]``: (40-bit seeds, bits).

    Client ``i`` uses the first uniform of its noise stream, so it matches
    ``blh_encode(items[i], epsilon, seeds[i], CounterStream(noise_i))``.
    """
    items = np.asarray(items, dtype=np.int64)
    idx = np.arange(items.size)
    seeds = derive_client_seeds(master_seed, idx, Purpose.BLH_HASH) & np.uint64(MASK40)
    u = counter_uniforms(derive_client_seeds(master_seed, idx, Purpose.NOISE), 1)[:, 0]
    bits_ = hashing.bits(seeds, items) ^ (u < flip_probability(epsilon)).astype(np.int8)
    return seeds, bits_.astype(np.int8)


def blh_estimate_from_counts(t, n: int, epsilon: float):
    return (2.0 * np.asarray(t) / n - 1.0) * debias_factor(epsilon)


def blh_aggregate(reports, x: int, epsilon: float) -> float:
    """Debiased frequency of ``x`` among the reporters."""
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    seeds = np.array([r.seed for r in reports], dtype=np.uint64)
    bits_ = np.array([r.bit for r in reports], dtype=np.int8)
    t = int(blh_matches(seeds, bits_, [x])[0])
    return float(blh_estimate_from_counts(t, len(reports), epsilon))


# ---------------------------------------------------------------------------
# Bucketed multi-item scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BucketedReport:
    bucket_seed: int
    buckets: tuple

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(self.buckets))
        if not self.buckets:
            raise ParameterError("a bucketed report needs at least one bucket")

    @property
    def k(self) -> int:
        return len(self.buckets)


@dataclass(frozen=True)
class WarmupSeeds:
    """Bucket-hash seed (40-bit), base seed for per-bucket BLH seeds, noise seed."""

    bucket: int
    blh: int
    noise: int


def bucket_blh_seeds(base_seeds, k: int) -> np.ndarray:
    """40-bit BLH seed of each bucket, shape ``(len(base_seeds), k)``."""
    base = np.atleast_1d(np.asarray(base_seeds, dtype=np.uint64))
    words = stream_words(mix64(base)[:, None], np.arange(k, dtype=np.uint64)[None, :])
    return words & np.uint64(MASK40)


def bucket_assignment(items, k: int, d: int, bucket_seed: int) -> np.ndarray:
    """Item encoded by each of the ``k`` buckets (``d`` marks a zeroed-out bucket)."""
    items = np.asarray(sorted(set(int(i) for i in items)), dtype=np.int64)
    if items.size > k:
        raise ParameterError(f"{items.size} items exceed k={k}")
    if items.size and (items.min() < 0 or items.max() >= d):
        raise ParameterError(f"item outside [0, {d})")
    enc = np.full(k, d, dtype=np.int64)
    if items.size:
        hb = hashing.bins(bucket_seed, items, k)
        counts = np.bincount(hb, minlength=k)
        alone = counts[hb] == 1
        enc[hb[alone]] = items[alone]
    return enc


def bucketed_encode(items, k: int, epsilon: float, seeds: WarmupSeeds, rng=None, d: int | None = None) -> BucketedReport:
    """Split ``items`` into ``k`` buckets and run BLH in each bucket.

    ``rng`` defaults to the counter stream of ``seeds.noise``; bucket ``j``
    consumes uniform number ``j``.
    """
    if d is None:
        raise ParameterError("the item domain size d is required")
    enc = bucket_assignment(items, k, d, seeds.bucket)
    blh_seeds = bucket_blh_seeds([seeds.blh], k)[0]
    stream = CounterStream(seeds.noise) if rng is None else rng
    if isinstance(stream, CounterStream):
        u = stream.uniforms(k)
    else:
        u = np.array([stream.random() for _ in range(k)])
    hb = hashing.bits(blh_seeds, enc)
    flips = (u < flip_probability(epsilon)).astype(np.int8)
    out = hb ^ flips
    return BucketedReport(
        seeds.bucket, tuple(BlhReport(int(s), int(bit)) for s, bit in zip(blh_seeds, out))
    )


def bucketed_aggregate(reports, x: int, k: int, epsilon: float) -> float:
    """BLH estimate over each client's bucket ``h_i(x)``, scaled by 1/p."""
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    if any(r.k != k for r in reports):
        raise ParameterError("reports disagree on the bucket count")
    chosen = [r.buckets[int(hashing.bins(r.bucket_seed, x, k))] for r in reports]
    return blh_aggregate(chosen, x, epsilon) / survival_probability(k)


@dataclass
class BucketedBatch:
    bucket_seeds: np.ndarray  # (n,)
    blh_seeds: np.ndarray  # (n, k)
    bits: np.ndarray  # (n, k) int8
    k: int

    @property
    def n(self) -> int:
        return int(self.bucket_seeds.size)

    def reports(self) -> list[BucketedReport]:
        return [
            BucketedReport(int(bs), tuple(BlhReport(int(s), int(b)) for s, b in zip(srow, brow)))
            for bs, srow, brow in zip(self.bucket_seeds, self.blh_seeds, self.bits)
        ]


def warmup_batch_seeds(master_seed: int, n: int):
    idx = np.arange(n)
    return (
        derive_client_seeds(master_seed, idx, Purpose.BIN_HASH) & np.uint64(MASK40),
        derive_client_seeds(master_seed, idx, Purpose.BLH_HASH),
        derive_client_seeds(master_seed, idx, Purpose.NOISE),
    )


def warmup_client_seeds(master_seed: int, i: int) -> WarmupSeeds:
    bs, blh, noise = (int(a[i]) for a in warmup_batch_seeds(master_seed, i + 1))
    return WarmupSeeds(bs, blh, noise)


def bucket_assignment_batch(rows: SparseRows, bucket_seeds) -> np.ndarray:
    """:func:`bucket_assignment` for every row at once, shape ``(n, k)``."""
    n, k, d = rows.n, rows.k, rows.d
    row_ids = rows.row_ids
    hb = hashing.bins(np.asarray(bucket_seeds, dtype=np.uint64)[row_ids], rows.indices, k)
    slot = row_ids * k + hb
    counts = np.bincount(slot, minlength=n * k)
    alone = counts[slot] == 1
    enc = np.full(n * k, d, dtype=np.int64)
    enc[slot[alone]] = rows.indices[alone]
    return enc.reshape(n, k)


def bucketed_encode_batch(rows: SparseRows, epsilon: float, master_seed: int) -> BucketedBatch:
    """Bucketed encoding of every row's support; client ``i`` matches ``bucketed_encode``."""
    n, k = rows.n, rows.k
    bucket_seeds, blh_base, noise = warmup_batch_seeds(master_seed, n)
    enc = bucket_assignment_batch(rows, bucket_seeds)
    blh_seeds = bucket_blh_seeds(blh_base, k)
    u = counter_uniforms(noise, k)
    bits_ = hashing.bits(blh_seeds, enc) ^ (u < flip_probability(epsilon)).astype(np.int8)
    return BucketedBatch(bucket_seeds, blh_seeds, bits_.astype(np.int8), k)


def bucketed_estimate_batch(batch: BucketedBatch, probes, epsilon: float) -> np.ndarray:
    probes = np.asarray(probes, dtype=np.int64)
    n, k = batch.n, batch.k
    out = np.empty(probes.size)
    rows = np.arange(n)[None, :]
    bk = hashing.bin_keys(batch.bucket_seeds)[None, :]
    blh_keys = hashing.bit_keys(batch.blh_seeds)
    step = max(1, (1 << 21) // n)
    for lo in range(0, probes.size, step):
        chunk = probes[lo:lo + step, None]
        j = hashing.bins_keyed(bk, chunk, k)
        hb = hashing.bits_keyed(blh_keys[rows, j], chunk)
        t = (hb == batch.bits[rows, j]).sum(axis=1)
        out[lo:lo + step] = blh_estimate_from_counts(t, n, epsilon)
    return out / survival_probability(k)
