import math

import numpy as np
import pytest

from ksparse_ldp import baselines, hashing
from ksparse_ldp.baselines import (
    baseline_client_seeds,
    kfold_aggregate,
    kfold_encode,
    kfold_estimate_batch,
    naive_aggregate,
    naive_encode,
    naive_estimate_batch,
    sampling_aggregate,
    sampling_encode,
    sampling_estimate_batch,
    split_budget,
)
from ksparse_ldp.bench import Config, run_experiment
from ksparse_ldp.core import NOISE_OFF, CounterStream, ParameterError, PrivacyBudget, SparseRows, SparseVector
from ksparse_ldp.transport import Accounting, baseline_cost, comm_cost
from ksparse_ldp.warmup import blh_aggregate, blh_encode


def binary_rows(rng, n, d, k, hold=None, frac=0.5):
    """Binary rows; the first ``frac`` of clients also hold item ``hold``."""
    parts = []
    pool = np.arange(d) if hold is None else np.setdiff1d(np.arange(d), [hold])
    for i in range(n):
        m = int(rng.integers(0, k + 1))
        items = rng.choice(pool, m, replace=False)
        if hold is not None and i < frac * n:
            items = np.r_[items[: k - 1], hold]
        parts.append(np.sort(items))
    counts = [p.size for p in parts]
    return SparseRows(d, k, np.r_[0, np.cumsum(counts)], np.concatenate(parts), np.ones(sum(counts)))


def test_split_budget():
    assert split_budget(1.0, 0.5) == (0.5, 0.5)
    assert split_budget(2.0, 0.0) == (2.0, 0.0)
    with pytest.raises(ParameterError):
        split_budget(1.0, 1.0)


def test_kfold_k1_is_blh():
    seeds = baseline_client_seeds(3, 0)
    v = SparseVector.binary(20, 1, [6])
    (rep,) = kfold_encode(v, 1.0, seeds)
    direct = blh_encode(6, 1.0, rep.blh.seed, CounterStream(seeds.noise))
    assert rep.blh == direct and rep.value == 1.0


def test_kfold_pads_with_dummies():
    v = SparseVector(20, 3)
    reps = kfold_encode(v, math.inf, baseline_client_seeds(1, 0))
    assert len(reps) == 3
    assert [r.blh.bit for r in reps] == [int(hashing.bits(r.blh.seed, 20)) for r in reps]


def test_kfold_binary_mode_rejects_real_values():
    with pytest.raises(ParameterError):
        kfold_encode(SparseVector(10, 2, {1: 0.5}), 1.0, baseline_client_seeds(1, 0))


def test_kfold_k1_aggregate_identity():
    reports = [kfold_encode(SparseVector.binary(10, 1, [i % 4]), 1.0, baseline_client_seeds(2, i))
               for i in range(200)]
    flat = [c[0].blh for c in reports]
    assert kfold_aggregate(reports, 2, 1, 1.0) == pytest.approx(blh_aggregate(flat, 2, 1.0), abs=1e-12)


def test_kfold_batch_matches_scalar():
    rng = np.random.default_rng(0)
    rows = binary_rows(rng, 60, 30, 4)
    for share in (0.0, 0.5):
        if share:
            rows = SparseRows(rows.d, rows.k, rows.indptr, rows.indices, rng.uniform(0.1, 1, rows.indices.size))
        reports = [kfold_encode(v, 1.0, baseline_client_seeds(4, i), k=4, value_share=share)
                   for i, v in enumerate(rows)]
        batch = kfold_estimate_batch(rows, 1.0, 4, [0, 7], share)
        scalar = [kfold_aggregate(reports, x, 4, 1.0, value_share=share) for x in (0, 7)]
        assert batch == pytest.approx(scalar, abs=1e-12)


def test_kfold_absent_and_half():
    rng = np.random.default_rng(1)
    n, d, k = 10_000, 100, 4
    rows = binary_rows(rng, n, d, k, hold=0, frac=0.5)
    absent = np.array([kfold_estimate_batch(rows, 1.0, r, [99])[0] for r in range(30)])
    half = np.array([kfold_estimate_batch(rows, 1.0, r, [0])[0] for r in range(30)])
    freq = rows.column_frequencies()
    for est, truth in ((absent, freq[99]), (half, freq[0])):
        assert abs(est.mean() - truth) <= 3 * est.std(ddof=1) / math.sqrt(est.size)
    assert freq[0] == pytest.approx(0.5, abs=0.01)


def test_sampling_single_slot():
    seeds = baseline_client_seeds(5, 0)
    rep, val = sampling_encode(SparseVector.binary(10, 1, [3]), 1, math.inf, seeds)
    assert rep.bit == hashing.bits(rep.seed, 3) and val == 1.0
    rep, _ = sampling_encode(SparseVector(10, 4), 4, math.inf, seeds)
    assert rep.bit == hashing.bits(rep.seed, 10)


def test_sampling_batch_matches_scalar():
    rng = np.random.default_rng(2)
    rows = binary_rows(rng, 80, 30, 4)
    reports = [sampling_encode(v, 4, 1.0, baseline_client_seeds(8, i)) for i, v in enumerate(rows)]
    assert sampling_estimate_batch(rows, 1.0, 8, [5])[0] == pytest.approx(
        sampling_aggregate(reports, 5, 4, 1.0), abs=1e-12)


def test_sampling_k1_identity():
    reports = [sampling_encode(SparseVector.binary(10, 1, [i % 3]), 1, 1.0, baseline_client_seeds(2, i))
               for i in range(100)]
    assert sampling_aggregate(reports, 1, 1, 1.0) == pytest.approx(
        blh_aggregate([r for r, _ in reports], 1, 1.0), abs=1e-12)


def test_sampling_recovers_frequency():
    rng = np.random.default_rng(3)
    rows = binary_rows(rng, 10_000, 100, 4, hold=0, frac=0.5)
    ests = np.array([sampling_estimate_batch(rows, 1.0, r, [0, 99]) for r in range(30)])
    truth = rows.column_frequencies()[[0, 99]]
    se = ests.std(axis=0, ddof=1) / math.sqrt(30)
    assert np.all(np.abs(ests.mean(axis=0) - truth) <= 3 * se)
    # a single run is within 3 sigma as well
    assert np.all(np.abs(ests[0] - truth) <= 3 * ests.std(axis=0, ddof=1))


def test_real_valued_baselines_unbiased():
    rng = np.random.default_rng(4)
    n, d, k = 3000, 20, 4
    parts = [rng.choice(d, k, replace=False) for _ in range(n)]
    vals = rng.uniform(-1, 1, n * k)
    rows = SparseRows(d, k, np.arange(0, n * k + 1, k), np.concatenate(parts), vals)
    truth = rows.column_means()[[0, 5]]
    for fn in (kfold_estimate_batch, sampling_estimate_batch):
        ests = np.array([fn(rows, 1.0, r, [0, 5], 0.5) for r in range(100)])
        se = ests.std(axis=0, ddof=1) / 10
        assert np.all(np.abs(ests.mean(axis=0) - truth) <= 3 * se)


def test_naive_noise_off_copy():
    v = SparseVector(6, 2, {1: 0.5, 4: -1.0})
    assert np.array_equal(naive_encode(v, PrivacyBudget(1.0), NOISE_OFF), v.to_dense())
    assert np.array_equal(naive_aggregate([naive_encode(v, PrivacyBudget(1.0), NOISE_OFF)]), v.to_dense())


def test_naive_noise_std():
    v = SparseVector(100_000, 1)
    budget = PrivacyBudget(0.5, 0.0, 4.0)
    noise = naive_encode(v, budget, CounterStream(12))
    target = math.sqrt(2) * 4.0 / 0.5
    assert abs(noise.std() / target - 1) <= 0.02


def test_naive_zero_inputs_and_batch_path():
    rows = SparseRows(50, 2, np.zeros(201, dtype=np.int64), [], [])
    est = naive_estimate_batch(rows, PrivacyBudget(1.0), 3, np.arange(50))
    # sd per coordinate sqrt(2)*2/sqrt(200) = 0.2
    assert np.all(np.abs(est) <= 5 * 0.2)
    dense = np.mean([naive_encode(SparseVector(50, 2), PrivacyBudget(1.0),
                                  CounterStream(int(s))) for s in baselines.baseline_batch_seeds(3, 200)[1]], axis=0)
    assert est == pytest.approx(dense, abs=1e-12)


def test_comm_cost_ordering():
    k, d = 64, 10_000
    ours_event = comm_cost(16, Accounting.PAPER)
    ours_user = comm_cost(1, Accounting.PAPER)
    naive = baseline_cost("naive", d=d, accounting=Accounting.PAPER)
    kfold = baseline_cost("kfold", k=k, accounting=Accounting.PAPER)
    sampling = baseline_cost("sampling", k=k, accounting=Accounting.PAPER)
    assert naive > 10 * kfold and kfold > ours_event > sampling
    assert abs(sampling - ours_user) <= 1


def _cells(**kw):
    cfg = Config(timing=False, n=[10_000], d=[256], reps=10, probes="all", threads=4, **kw)
    return {(r.mechanism, r.regime, r.k): r.linf for r in run_experiment(cfg)}


def test_kfold_vs_main_gap():
    rows = _cells(mechanisms=["main", "kfold"], levels=["event"], k=[16], target="frequency")
    ratio = rows[("kfold", "event", 16)] / rows[("main", "event", 16)]
    assert 2.0 <= ratio <= 8.0


def test_naive_close_to_main_event_level():
    rows = _cells(mechanisms=["main", "naive"], levels=["event"], k=[16])
    ratio = rows[("naive", "event", 16)] / rows[("main", "event", 16)]
    assert 0.5 <= ratio <= 2.0


def test_sampling_error_linear_in_k():
    rows = _cells(mechanisms=["sampling"], levels=["user"], k=[4, 16, 64], target="frequency")
    for lo, hi in ((4, 16), (16, 64)):
        assert 2.0 <= rows[("sampling", "user", hi)] / rows[("sampling", "user", lo)] <= 6.0


def test_error_ordering_k64():
    rows = _cells(mechanisms=["main", "kfold", "sampling"], levels=["event", "user"], k=[64],
                  target="frequency")
    assert rows[("main", "event", 64)] < rows[("kfold", "event", 64)]
    assert rows[("main", "user", 64)] < rows[("sampling", "user", 64)]
