"""Strawman mechanisms built from binary local hashing and plain Laplace noise.

* k-fold repetition: every client acts as k virtual one-item clients, one BLH
  report per (real or dummy) item at the full budget (event-level accounting).
* sampling: every client pads to k slots, samples one slot and sends a single
  BLH report; estimates are scaled by k (user-level accounting).
* naive perturbation: Laplace(L/eps) added to all d coordinates.

Real-valued inputs ride along with the item report as a randomised sign: the
value ``v`` is rounded to +1 with probability ``(1+v)/2`` (else -1) and that
sign goes through randomised response. ``value_share`` is the fraction of the
budget spent on the value; ``value_share = 0`` is binary mode, where every
held item counts as 1 and no value is sent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hashing
from .core import (
    MASK40,
    NOISE_OFF,
    CounterStream,
    ParameterError,
    PrivacyBudget,
    Purpose,
    SparseRows,
    SparseVector,
    counter_uniforms,
    counter_uniforms_at,
    derive_client_seeds,
    laplace_from_uniform,
    mix64,
    stream_words,
)
from .warmup import BlhReport, debias_factor, flip_probability

DEFAULT_VALUE_SHARE = 0.5


@dataclass(frozen=True)
class SlotReport:
    """One BLH item report plus the (randomised) value that rides with it."""

    blh: BlhReport
    value: float


def split_budget(epsilon: float, value_share: float) -> tuple[float, float]:
    """(item budget, value budget)."""
    if not 0.0 <= value_share < 1.0:
        raise ParameterError("value_share must lie in [0, 1)")
    if math.isinf(epsilon):
        return math.inf, math.inf
    return epsilon * (1.0 - value_share), epsilon * value_share


def _randomize_values(values, u_round, u_flip, eps_value: float):
    """Unbiased +-1 rounding of values in [-1, 1] followed by randomised response."""
    if math.isinf(eps_value):
        return np.asarray(values, dtype=np.float64)
    z = np.where(np.asarray(u_round) < (1.0 + np.asarray(values)) / 2.0, 1.0, -1.0)
    return np.where(np.asarray(u_flip) < flip_probability(eps_value), -z, z)


def _value_debias(eps_value: float, value_share: float) -> float:
    if value_share == 0.0 or math.isinf(eps_value):
        return 1.0
    return debias_factor(eps_value)


def _slot_seeds(base_seeds, count: int) -> np.ndarray:
    base = np.atleast_1d(np.asarray(base_seeds, dtype=np.uint64))
    words = stream_words(mix64(base)[:, None], np.arange(count, dtype=np.uint64)[None, :])
    return words & np.uint64(MASK40)


def _check_binary(v: SparseVector, value_share: float) -> None:
    if value_share == 0.0 and not v.is_binary():
        raise ParameterError("binary mode (value_share=0) needs a 0/1 vector")


def _stream(rng, seed):
    if rng is None:
        return CounterStream(seed)
    if not isinstance(rng, CounterStream):
        raise ParameterError("baselines draw from a CounterStream")
    return rng


@dataclass(frozen=True)
class BaselineSeeds:
    blh: int  # base seed from which per-report 40-bit BLH seeds are derived
    noise: int


def baseline_batch_seeds(master_seed: int, n: int):
    idx = np.arange(n)
    return (
        derive_client_seeds(master_seed, idx, Purpose.BLH_HASH),
        derive_client_seeds(master_seed, idx, Purpose.NOISE),
    )


def baseline_client_seeds(master_seed: int, i: int) -> BaselineSeeds:
    blh, noise = (int(a[i]) for a in baseline_batch_seeds(master_seed, i + 1))
    return BaselineSeeds(blh, noise)


def _pad_items(v: SparseVector, k: int):
    """Items and values padded with the dummy item ``d`` (value 0) up to ``k``."""
    if v.nnz > k:
        raise ParameterError(f"{v.nnz} items exceed k={k}")
    items = np.full(k, v.dim, dtype=np.int64)
    vals = np.zeros(k)
    items[: v.nnz] = v.indices
    vals[: v.nnz] = v.values
    return items, vals


# ---------------------------------------------------------------------------
# k-fold repetition
# ---------------------------------------------------------------------------

def kfold_encode(
    v: SparseVector,
    epsilon: float,
    seeds: BaselineSeeds,
    rng=None,
    k: int | None = None,
    value_share: float = 0.0,
) -> list[SlotReport]:
    """One report per item, padded with dummy reports up to ``k``."""
    k = v.k if k is None else k
    _check_binary(v, value_share)
    eps_item, eps_value = split_budget(epsilon, value_share)
    stream = _stream(rng, seeds.noise)
    items, vals = _pad_items(v, k)
    slot_seeds = _slot_seeds([seeds.blh], k)[0]
    u = stream.uniforms(3 * k)
    bits_ = hashing.bits(slot_seeds, items) ^ (u[:k] < flip_probability(eps_item)).astype(np.int8)
    if value_share == 0.0:
        z = np.ones(k)
    else:
        z = _randomize_values(vals, u[k:2 * k], u[2 * k:], eps_value)
    return [SlotReport(BlhReport(int(s), int(b)), float(val)) for s, b, val in zip(slot_seeds, bits_, z)]


def _slot_estimate(seeds, bits_, values, probes, eps_item, value_scale):
    """``sum_r I_r(x) * Z_r`` over all slot reports for each probe."""
    probes = np.asarray(probes, dtype=np.int64)
    seeds = np.asarray(seeds, dtype=np.uint64).ravel()
    bits_ = np.asarray(bits_, dtype=np.int8).ravel()
    values = np.asarray(values, dtype=np.float64).ravel() * value_scale
    c = debias_factor(eps_item)
    keys = hashing.bit_keys(seeds)[None, :]
    unit = bool(np.all(values == 1.0))
    out = np.empty(probes.size)
    step = max(1, (1 << 21) // max(seeds.size, 1))
    for lo in range(0, probes.size, step):
        match = hashing.bits_keyed(keys, probes[lo:lo + step, None]) == bits_[None, :]
        if unit:
            # integer count keeps binary mode exact
            out[lo:lo + step] = (2.0 * match.sum(axis=1) - seeds.size) * c
        else:
            out[lo:lo + step] = np.where(match, values, -values).sum(axis=1) * c
    return out


def kfold_aggregate(reports, x: int, k: int, epsilon: float, n: int | None = None, value_share: float = 0.0) -> float:
    """k times the BLH estimate over all ``k n`` reports (values folded in).

    ``reports`` is a list with one list of slot reports per client.
    """
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    n = len(reports) if n is None else n
    flat = [r for client in reports for r in client]
    if len(flat) != k * n:
        raise ParameterError(f"expected {k * n} slot reports, got {len(flat)}")
    eps_item, eps_value = split_budget(epsilon, value_share)
    if value_share == 0.0:
        vals = np.ones(len(flat))
    else:
        vals = np.array([r.value for r in flat])
    total = _slot_estimate(
        [r.blh.seed for r in flat], [r.blh.bit for r in flat], vals, [x],
        eps_item, _value_debias(eps_value, value_share),
    )
    return float(total[0] / n)


# ---------------------------------------------------------------------------
# sampling + one-item oracle
# ---------------------------------------------------------------------------

def sampling_encode(
    v: SparseVector,
    k: int,
    epsilon: float,
    seeds: BaselineSeeds,
    rng=None,
    value_share: float = 0.0,
) -> tuple[BlhReport, float]:
    """Pick one of ``k`` slots uniformly (fillers included) and report it."""
    _check_binary(v, value_share)
    eps_item, eps_value = split_budget(epsilon, value_share)
    stream = _stream(rng, seeds.noise)
    items, vals = _pad_items(v, k)
    u = stream.uniforms(4)
    j = min(int(u[0] * k), k - 1)
    seed = int(_slot_seeds([seeds.blh], 1)[0, 0])
    bit = int(hashing.bits(seed, items[j])) ^ int(u[1] < flip_probability(eps_item))
    if value_share == 0.0:
        value = 1.0
    else:
        value = float(_randomize_values(vals[j], u[2], u[3], eps_value))
    return BlhReport(seed, bit), value


def sampling_aggregate(reports, x: int, k: int, epsilon: float, n: int | None = None, value_share: float = 0.0) -> float:
    """k times the one-item estimate (value-weighted in real mode)."""
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    n = len(reports) if n is None else n
    eps_item, eps_value = split_budget(epsilon, value_share)
    vals = np.array([val for _, val in reports], dtype=np.float64)
    total = _slot_estimate(
        [r.seed for r, _ in reports], [r.bit for r, _ in reports], vals, [x],
        eps_item, _value_debias(eps_value, value_share),
    )
    return float(k * total[0] / n)


# ---------------------------------------------------------------------------
# batched paths for the experiment runner
# ---------------------------------------------------------------------------

def _padded_rows(rows: SparseRows, k: int):
    n = rows.n
    items = np.full((n, k), rows.d, dtype=np.int64)
    vals = np.zeros((n, k))
    pos = np.arange(rows.indices.size) - np.repeat(rows.indptr[:-1], np.diff(rows.indptr))
    items[rows.row_ids, pos] = rows.indices
    vals[rows.row_ids, pos] = rows.values
    return items, vals


def kfold_estimate_batch(rows: SparseRows, epsilon: float, master_seed: int, probes, value_share: float = 0.0) -> np.ndarray:
    """Encode every row with :func:`kfold_encode` and estimate the probes."""
    if value_share == 0.0 and not rows.is_binary():
        raise ParameterError("binary mode (value_share=0) needs 0/1 rows")
    n, k = rows.n, rows.k
    eps_item, eps_value = split_budget(epsilon, value_share)
    blh, noise = baseline_batch_seeds(master_seed, n)
    items, vals = _padded_rows(rows, k)
    seeds = _slot_seeds(blh, k)
    u = counter_uniforms(noise, 3 * k)
    bits_ = hashing.bits(seeds, items) ^ (u[:, :k] < flip_probability(eps_item)).astype(np.int8)
    if value_share == 0.0:
        z = np.ones((n, k))
    else:
        z = _randomize_values(vals, u[:, k:2 * k], u[:, 2 * k:], eps_value)
    total = _slot_estimate(seeds, bits_, z, probes, eps_item, _value_debias(eps_value, value_share))
    return total / n


def sampling_estimate_batch(rows: SparseRows, epsilon: float, master_seed: int, probes, value_share: float = 0.0) -> np.ndarray:
    if value_share == 0.0 and not rows.is_binary():
        raise ParameterError("binary mode (value_share=0) needs 0/1 rows")
    n, k = rows.n, rows.k
    eps_item, eps_value = split_budget(epsilon, value_share)
    blh, noise = baseline_batch_seeds(master_seed, n)
    items, vals = _padded_rows(rows, k)
    u = counter_uniforms(noise, 4)
    j = np.minimum((u[:, 0] * k).astype(np.int64), k - 1)
    picked = items[np.arange(n), j]
    seeds = _slot_seeds(blh, 1)[:, 0]
    bits_ = hashing.bits(seeds, picked) ^ (u[:, 1] < flip_probability(eps_item)).astype(np.int8)
    if value_share == 0.0:
        z = np.ones(n)
    else:
        z = _randomize_values(vals[np.arange(n), j], u[:, 2], u[:, 3], eps_value)
    total = _slot_estimate(seeds, bits_, z, probes, eps_item, _value_debias(eps_value, value_share))
    return k * total / n


# ---------------------------------------------------------------------------
# naive perturbation
# ---------------------------------------------------------------------------

def naive_encode(v: SparseVector, budget: PrivacyBudget, rng) -> np.ndarray:
    """Dense copy of ``v`` with Laplace(L/eps) noise on every coordinate.

    ``rng`` is a :class:`CounterStream` (coordinate ``j`` uses uniform ``j``)
    or ``NOISE_OFF``.
    """
    dense = v.to_dense()
    if rng is NOISE_OFF:
        return dense
    if not isinstance(rng, CounterStream):
        raise ParameterError("naive_encode draws from a CounterStream")
    return dense + laplace_from_uniform(rng.uniforms(v.dim), budget.L / budget.epsilon)


def naive_aggregate(reports) -> np.ndarray:
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    return np.stack(reports).mean(axis=0)


def naive_estimate_batch(rows: SparseRows, budget: PrivacyBudget, master_seed: int, probes, noise: bool = True) -> np.ndarray:
    """Mean of the naive reports restricted to ``probes``.

    Coordinate ``j`` of client ``i`` carries uniform ``j`` of the client's
    stream, so only the probed columns of the dense reports are generated.
    """
    probes = np.asarray(probes, dtype=np.int64)
    n = rows.n
    _, noise_seeds = baseline_batch_seeds(master_seed, n)
    truth = rows.column_means()[probes]
    if not noise:
        return truth
    scale = budget.L / budget.epsilon
    out = np.empty(probes.size)
    step = max(1, (1 << 21) // n)
    for lo in range(0, probes.size, step):
        chunk = probes[lo:lo + step]
        u = counter_uniforms_at(noise_seeds[None, :], chunk[:, None].astype(np.uint64))
        out[lo:lo + step] = laplace_from_uniform(u, scale).sum(axis=1) / n
    return truth + out
