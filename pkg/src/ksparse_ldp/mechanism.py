"""Random binning + sign folding + Laplace noise for k-sparse mean estimation.

Each client hashes its coordinates into ``b`` bins with a private bin hash,
multiplies each value by a private random sign, sums per bin, optionally
clips, and adds Laplace noise of scale ``Delta / epsilon`` to every bin. The
server recovers coordinate ``x`` as the average of ``s_i(x) * B_i[h_i(x)]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import hashing
from .core import (
    NOISE_OFF,
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
    derive_client_seeds,
    laplace_from_uniform,
    MASK40,
)

REGIMES = ("event", "small_l", "squeeze", "clipped")

# Upper bound on the number of (client, probe) cells evaluated per block.
_BLOCK_CELLS = 1 << 21


class UnsatisfiableRegimeError(ParameterError):
    """No parameter regime can meet the requested privacy budget."""


class UtilityConditionWarning(UserWarning):
    """The utility guarantee's ``n k / b >= ln(5 d / beta)`` condition fails."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp_bins(raw: float, k: int) -> int:
    return min(max(_round_half_up(raw), 1), k)


def predicted_error(k: int, b: int, Delta: float, epsilon: float) -> float:
    """Leading factor ``sqrt(k/b) + Delta/epsilon`` of the L-inf error bound."""
    return math.sqrt(k / b) + Delta / epsilon


def squeeze_bound(b: int, L: float, delta: float) -> float:
    """High-probability L1 bound ``3 sqrt(b L ln(2b/delta))`` on binned differences."""
    if delta <= 0:
        return math.inf
    return 3.0 * math.sqrt(b * L * math.log(2 * b / delta))


def clip_range(k: int, n: int, beta: float) -> float:
    return math.sqrt(2 * k * math.log(4 * n / beta))


def _event(k, d, n, budget, beta):
    b = _clamp_bins(budget.epsilon ** 2 * k / 4.0, k)
    return MechanismParams(b, math.inf, 2.0, budget, k, d, n, beta, "event")


def _small_l(k, d, n, budget, beta):
    b = _clamp_bins(budget.epsilon ** 2 * k / budget.L ** 2, k)
    return MechanismParams(b, math.inf, budget.L, budget, k, d, n, beta, "small_l")


def _squeeze(k, d, n, budget, beta):
    eps, delta, L = budget.epsilon, budget.delta, budget.L
    if delta <= 0:
        raise UnsatisfiableRegimeError(
            f"L={L} exceeds k^(1/3) for k={k} with delta=0: supply delta > 0 "
            "or use user-level (L = 2k) parameters"
        )
    b = _clamp_bins(math.sqrt(eps ** 2 * k / (L * math.log(1 / delta))), k)
    # the squeeze bound is only valid while L/b >= ln(2b/delta)
    while squeeze_bound(b, L, delta) < L and L / b < math.log(2 * b / delta):
        if b == 1:
            raise UnsatisfiableRegimeError(
                f"L/b >= ln(2b/delta) cannot hold for L={L}, delta={delta}"
            )
        b -= 1
    Delta = min(L, squeeze_bound(b, L, delta))
    return MechanismParams(b, math.inf, Delta, budget, k, d, n, beta, "squeeze")


def _clipped(k, d, n, budget, beta):
    eta = clip_range(k, n, beta)
    pure = PrivacyBudget(budget.epsilon, 0.0, budget.L)
    name = "user" if budget.L >= 2 * k else "clipped"
    return MechanismParams(1, eta, 2.0 * eta, pure, k, d, n, beta, name)


_BUILDERS = {"event": _event, "small_l": _small_l, "squeeze": _squeeze, "clipped": _clipped}


def select_params(
    k: int,
    d: int,
    n: int,
    budget: PrivacyBudget,
    beta: float = 0.05,
    regime: str | None = None,
) -> MechanismParams:
    """Pick bin count, clip range and noise magnitude for ``budget``.

    User-level budgets (``L = 2k``) get the clipped single-bin regime, except
    at ``k = 1`` where ``L = 2`` is also the event level. ``L = 2`` uses the
    event-level row. Otherwise the unclipped regime that
    matches ``L`` (``L^3 <= k`` gives ``Delta = L``; larger ``L`` needs
    ``delta > 0``) competes with the clipped regime on
    :func:`predicted_error`. ``regime`` forces one of :data:`REGIMES`.
    """
    if not 1 <= k <= d or n < 1:
        raise ParameterError("need 1 <= k <= d and n >= 1")
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    budget.check_sparsity(k)

    if regime is not None:
        if regime not in _BUILDERS:
            raise ParameterError(f"unknown regime {regime!r}; choose from {REGIMES}")
        params = _BUILDERS[regime](k, d, n, budget, beta)
    elif budget.L >= 2 * k and budget.L != 2.0:
        params = _clipped(k, d, n, budget, beta)
    else:
        if budget.L == 2.0:
            unclipped = _event(k, d, n, budget, beta)
        elif budget.L ** 3 <= k:
            unclipped = _small_l(k, d, n, budget, beta)
        else:
            unclipped = _squeeze(k, d, n, budget, beta)
        clipped = _clipped(k, d, n, budget, beta)
        eps = budget.epsilon
        if predicted_error(k, clipped.b, clipped.Delta, eps) < predicted_error(
            k, unclipped.b, unclipped.Delta, eps
        ):
            params = clipped
        else:
            params = unclipped

    if n * k / params.b < math.log(5 * d / beta):
        warnings.warn(
            f"n*k/b = {n * k / params.b:.3g} < ln(5d/beta); the error bound does not apply",
            UtilityConditionWarning,
            stacklevel=2,
        )
    return params


# ---------------------------------------------------------------------------
# Client side
# ---------------------------------------------------------------------------

@dataclass
class EncodedBatch:
    """Reports of n clients in columnar form.

    ``values`` has shape ``(n, b)``; seeds are 40-bit values in uint64 arrays.
    """

    seeds_h: np.ndarray
    seeds_s: np.ndarray
    values: np.ndarray
    discretized: bool = False

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def b(self) -> int:
        return int(self.values.shape[1])

    def reports(self) -> list[ClientReport]:
        return [
            ClientReport(int(h), int(s), row, self.discretized)
            for h, s, row in zip(self.seeds_h, self.seeds_s, self.values)
        ]

    @classmethod
    def from_reports(cls, reports) -> "EncodedBatch":
        reports = list(reports)
        if not reports:
            raise ParameterError("no reports")
        b = reports[0].b
        if any(r.b != b for r in reports):
            raise ParameterError("reports disagree on the bin count")
        disc = reports[0].discretized
        return cls(
            np.array([r.hash_seed_h for r in reports], dtype=np.uint64),
            np.array([r.hash_seed_s for r in reports], dtype=np.uint64),
            np.stack([r.bin_values for r in reports]),
            disc,
        )


def raw_bins(indices, values, row_ids, seeds_h, seeds_s, n: int, b: int) -> np.ndarray:
    """Signed per-bin sums ``B[i, j]`` before clipping and noise."""
    hb = hashing.bins(seeds_h[row_ids], indices, b)
    sg = hashing.signs(seeds_s[row_ids], indices)
    flat = np.bincount(row_ids * b + hb, weights=sg * values, minlength=n * b)
    return flat.reshape(n, b)


def _noisy(raw: np.ndarray, params: MechanismParams, noise_seeds, rng) -> np.ndarray:
    out = np.clip(raw, -params.eta, params.eta) if params.clipped else raw.copy()
    if rng is NOISE_OFF:
        return out
    u = counter_uniforms(noise_seeds, params.b)
    return out + laplace_from_uniform(u, params.noise_scale)


def client_encode(
    v: SparseVector,
    params: MechanismParams,
    seeds: ClientSeeds,
    rng=None,
) -> ClientReport:
    """Encode one client's vector.

    ``rng`` defaults to the counter stream of ``seeds.noise``; pass a
    :class:`CounterStream` to use another stream or ``NOISE_OFF`` to return
    the clipped bins without noise.
    """
    if v.dim != params.d:
        raise ParameterError(f"vector dim {v.dim} != params.d {params.d}")
    if v.nnz > params.k:
        raise ParameterError(f"vector has {v.nnz} entries, more than k={params.k}")
    sh = np.array([seeds.bin], dtype=np.uint64)
    ss = np.array([seeds.sign], dtype=np.uint64)
    raw = raw_bins(v.indices, v.values, np.zeros(v.nnz, dtype=np.int64), sh, ss, 1, params.b)
    if rng is None:
        rng = CounterStream(seeds.noise)
    if rng is NOISE_OFF:
        vals = _noisy(raw, params, None, NOISE_OFF)
    elif isinstance(rng, CounterStream):
        vals = _noisy(raw, params, np.array([rng.seed], dtype=np.uint64), rng)
    else:
        vals = np.clip(raw, -params.eta, params.eta) if params.clipped else raw
        vals = vals + laplace_from_uniform(_generator_uniforms(rng, params.b), params.noise_scale)
    return ClientReport(seeds.bin, seeds.sign, vals[0])


def _generator_uniforms(rng, count):
    u = np.array([rng.random() for _ in range(count)])
    while np.any(u <= 0.0):
        u[u <= 0.0] = [rng.random() for _ in range(int(np.sum(u <= 0.0)))]
    return u


def batch_seeds(master_seed: int, n: int):
    """Per-client (bin, sign, noise) seeds for clients ``0..n-1``."""
    idx = np.arange(n)
    mask = np.uint64(MASK40)
    return (
        derive_client_seeds(master_seed, idx, Purpose.BIN_HASH) & mask,
        derive_client_seeds(master_seed, idx, Purpose.SIGN_HASH) & mask,
        derive_client_seeds(master_seed, idx, Purpose.NOISE),
    )


def encode_batch(
    rows: SparseRows,
    params: MechanismParams,
    master_seed: int,
    rng=None,
    return_raw: bool = False,
):
    """Encode every row of ``rows``; client ``i`` uses ``ClientSeeds.derive(master_seed, i)``.

    Produces exactly the reports :func:`client_encode` would, client by client.
    """
    if rows.d != params.d:
        raise ParameterError(f"rows have d={rows.d}, params expect d={params.d}")
    if rows.n and np.diff(rows.indptr).max() > params.k:
        raise ParameterError(f"a row exceeds sparsity k={params.k}")
    sh, ss, sn = batch_seeds(master_seed, rows.n)
    raw = raw_bins(rows.indices, rows.values, rows.row_ids, sh, ss, rows.n, params.b)
    batch = EncodedBatch(sh, ss, _noisy(raw, params, sn, rng))
    if return_raw:
        return batch, raw
    return batch


# ---------------------------------------------------------------------------
# Server side
# ---------------------------------------------------------------------------

def estimate_batch(batch: EncodedBatch, probes, params: MechanismParams | None = None) -> np.ndarray:
    """Estimated mean at every probe coordinate.

    Per-probe sums run over a contiguous client axis, so each estimate is the
    same regardless of which other probes are requested.
    """
    probes = np.asarray(probes, dtype=np.int64)
    if batch.n == 0:
        raise ParameterError("no reports to aggregate")
    if params is not None:
        if batch.b != params.b:
            raise ParameterError(f"reports carry {batch.b} bins, params say {params.b}")
        if probes.size and (probes.min() < 0 or probes.max() >= params.d):
            raise ParameterError(f"probe outside [0, {params.d})")
    n, b = batch.n, batch.b
    vals = batch.values.astype(np.float64, copy=False)
    out = np.empty(probes.size)
    step = max(1, _BLOCK_CELLS // n)
    rows = np.arange(n)[None, :]
    kh = hashing.bin_keys(batch.seeds_h)[None, :]
    ks = hashing.sign_keys(batch.seeds_s)[None, :]
    for lo in range(0, probes.size, step):
        chunk = probes[lo:lo + step, None]
        hb = hashing.bins_keyed(kh, chunk, b)
        sg = hashing.signs_keyed(ks, chunk)
        contrib = sg * vals[rows, hb]
        out[lo:lo + step] = contrib.sum(axis=1) / n
    return out


def server_estimate(reports, x: int, params: MechanismParams) -> float:
    """Average of ``s_i(x) * B_i[h_i(x)]`` over the reports."""
    reports = list(reports)
    if not reports:
        raise ParameterError("no reports to aggregate")
    return float(estimate_batch(EncodedBatch.from_reports(reports), [x], params)[0])


# ---------------------------------------------------------------------------
# Privacy audits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditRecord:
    max_l1: float
    tail_rate: float
    threshold: float
    trials: int


def binned_l1_differences(
    v: SparseVector,
    v_prime: SparseVector,
    params: MechanismParams,
    seeds_h,
    seeds_s,
) -> np.ndarray:
    """``sum_j |clip(B_j) - clip(B'_j)|`` for each pair of hash seeds."""
    coords = np.array(sorted(set(v.entries) | set(v_prime.entries)), dtype=np.int64)
    seeds_h = np.asarray(seeds_h, dtype=np.uint64)
    seeds_s = np.asarray(seeds_s, dtype=np.uint64)
    t, b = seeds_h.size, params.b
    if coords.size == 0:
        return np.zeros(t)
    a = np.array([v.entries.get(int(c), 0.0) for c in coords])
    a2 = np.array([v_prime.entries.get(int(c), 0.0) for c in coords])
    hb = hashing.bins(seeds_h[:, None], coords[None, :], b)
    sg = hashing.signs(seeds_s[:, None], coords[None, :]).astype(np.float64)
    slot = (np.arange(t)[:, None] * b + hb).ravel()
    B = np.bincount(slot, weights=(sg * a).ravel(), minlength=t * b).reshape(t, b)
    B2 = np.bincount(slot, weights=(sg * a2).ravel(), minlength=t * b).reshape(t, b)
    if params.clipped:
        B = np.clip(B, -params.eta, params.eta)
        B2 = np.clip(B2, -params.eta, params.eta)
    return np.abs(B - B2).sum(axis=1)


def sensitivity_audit(
    v: SparseVector,
    v_prime: SparseVector,
    params: MechanismParams,
    trials: int,
    rng: np.random.Generator,
) -> AuditRecord:
    """Monte-Carlo audit of the binned L1 difference over fresh hash seeds."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    L = params.budget.L
    if v.l1_distance(v_prime) > L * (1 + 1e-12):
        raise ParameterError(f"||v - v'||_1 = {v.l1_distance(v_prime)} exceeds L = {L}")
    seeds = rng.integers(0, MASK40 + 1, size=(2, trials), dtype=np.uint64)
    diffs = binned_l1_differences(v, v_prime, params, seeds[0], seeds[1])
    thr = squeeze_bound(params.b, L, params.budget.delta)
    return AuditRecord(
        max_l1=float(diffs.max()),
        tail_rate=float(np.mean(diffs > thr)),
        threshold=thr,
        trials=trials,
    )


def density_ratio_check(raw_bins_v, raw_bins_vprime, Delta: float, epsilon: float, probe_points) -> float:
    """Largest |log p(y | B) - log p(y | B')| over the probes.

    ``p`` is the product density of independent Laplace(Delta/epsilon) noise
    per bin. ``probe_points`` has shape ``(m, b)``; a flat list is accepted
    when ``b = 1``.
    """
    B = np.asarray(raw_bins_v, dtype=np.float64).ravel()
    B2 = np.asarray(raw_bins_vprime, dtype=np.float64).ravel()
    if B.shape != B2.shape:
        raise ParameterError("bin arrays differ in length")
    if not Delta > 0:
        raise ParameterError("Delta must be positive")
    y = np.asarray(probe_points, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None] if B.size == 1 else y[None, :]
    if y.shape[1] != B.size:
        raise ParameterError("probe points must have one coordinate per bin")
    scale = Delta / epsilon
    log_p = (-np.log(2 * scale) - np.abs(y - B) / scale).sum(axis=1)
    log_q = (-np.log(2 * scale) - np.abs(y - B2) / scale).sum(axis=1)
    return float(np.max(np.abs(log_p - log_q)))
