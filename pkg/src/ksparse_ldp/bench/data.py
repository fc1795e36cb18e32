"""Datasets: Zipf synthetic generation, CSV ingestion and .npz persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import ParameterError, Purpose, SparseRows, derive_client_seed

# clients generated per block
_CHUNK = 4096


@dataclass
class Dataset:
    rows: SparseRows
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.rows.n

    @property
    def d(self) -> int:
        return self.rows.d

    @property
    def k(self) -> int:
        return self.rows.k

    @property
    def vectors(self):
        return iter(self.rows)

    def save(self, path) -> None:
        np.savez(
            path,
            d=self.d,
            k=self.k,
            indptr=self.rows.indptr,
            indices=self.rows.indices,
            values=self.rows.values,
            provenance=json.dumps(self.provenance, sort_keys=True),
        )

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            rows = SparseRows(int(z["d"]), int(z["k"]), z["indptr"], z["indices"], z["values"])
            prov = json.loads(str(z["provenance"]))
        return cls(rows, prov)


def zipf_weights(d: int, s: float) -> np.ndarray:
    """Normalised Zipf masses ``rank^-s``; coordinate 0 is rank 1."""
    w = np.arange(1, d + 1, dtype=np.float64) ** -s
    return w / w.sum()


def _first_k_distinct(cand: np.ndarray, k: int):
    """First ``k`` distinct entries of each row, plus a mask of rows that had enough."""
    order = np.argsort(cand, axis=1, kind="stable")
    srt = np.take_along_axis(cand, order, axis=1)
    first_sorted = np.ones_like(srt, dtype=bool)
    first_sorted[:, 1:] = srt[:, 1:] != srt[:, :-1]
    first = np.empty_like(first_sorted)
    np.put_along_axis(first, order, first_sorted, axis=1)
    cum = np.cumsum(first, axis=1)
    ok = cum[:, -1] >= k
    keep = first & (cum <= k) & ok[:, None]
    return cand[keep].reshape(-1, k), ok


def _sample_supports(rng, c: int, k: int, w: np.ndarray) -> np.ndarray:
    """``c`` draws of ``k`` distinct coordinates, sequentially without replacement."""
    d = w.size
    if 8 * k > d:
        # Gumbel top-k has the same law; rejection stalls in the Zipf tail
        # once k is a sizeable share of d
        keys = np.log(w)[None, :] - np.log(-np.log(rng.random((c, d))))
        return np.argsort(-keys, axis=1, kind="stable")[:, :k]
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    out = np.empty((c, k), dtype=np.int64)
    todo = np.arange(c)
    m = 2 * k
    while todo.size:
        cand = np.searchsorted(cdf, rng.random((todo.size, m)), side="right")
        picked, ok = _first_k_distinct(np.minimum(cand, d - 1), k)
        out[todo[ok]] = picked
        todo = todo[~ok]
        m *= 2
    return out


def gen_synthetic(
    n: int,
    d: int,
    k: int,
    zipf_s: float = 1.4,
    mu: float = 1.0,
    sigma: float = 0.3,
    master_seed: int = 0,
) -> Dataset:
    """n clients, each holding k distinct Zipf-popular coordinates.

    Values are Normal(mu, sigma) clipped to [-1, 1]; a value that lands on
    exactly 0 leaves its coordinate out.
    """
    if not 1 <= k <= d:
        raise ParameterError(f"need 1 <= k <= d, got k={k}, d={d}")
    if n < 1:
        raise ParameterError("n must be positive")
    if not zipf_s > 1:
        raise ParameterError("zipf_s must exceed 1")
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    rng = np.random.default_rng(derive_client_seed(master_seed, 0, Purpose.DATASET))
    w = zipf_weights(d, zipf_s)
    idx_parts, val_parts, counts = [], [], []
    for lo in range(0, n, _CHUNK):
        c = min(_CHUNK, n - lo)
        items = np.sort(_sample_supports(rng, c, k, w), axis=1)
        vals = np.clip(rng.normal(mu, sigma, size=(c, k)), -1.0, 1.0)
        nz = vals != 0.0
        idx_parts.append(items[nz])
        val_parts.append(vals[nz])
        counts.append(nz.sum(axis=1))
    indptr = np.concatenate([[0], np.cumsum(np.concatenate(counts))])
    rows = SparseRows(d, k, indptr, np.concatenate(idx_parts), np.concatenate(val_parts))
    prov = {
        "source": "synthetic",
        "n": n, "d": d, "k": k,
        "zipf_s": zipf_s, "mu": mu, "sigma": sigma,
        "master_seed": master_seed,
    }
    return Dataset(rows, prov)


def normalize(x: float, lo: float, hi: float) -> float:
    """Affine map of [lo, hi] onto [-1, 1]."""
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def ingest_csv(path, k: int, value_range=(-1.0, 1.0), seed: int = 0) -> Dataset:
    """Read ``user_id,item_id,value`` records into a Dataset.

    Ids map to dense indices in order of first appearance. Repeated
    (user, item) records are averaged; entries that normalise to 0 are
    dropped. Users with more than ``k`` items keep a uniform random subset
    of size ``k``.
    """
    lo, hi = map(float, value_range)
    if not hi > lo:
        raise ParameterError("value range needs lo < hi")
    if k < 1:
        raise ParameterError("k must be positive")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    acc: dict[tuple[int, int], list] = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if lineno == 1 and [f.strip().lower() for f in rec] == ["user_id", "item_id", "value"]:
                continue
            if len(rec) != 3:
                raise ParameterError(f"line {lineno}: expected 3 fields, got {len(rec)}")
            u, it, raw = (f.strip() for f in rec)
            if not u or not it:
                raise ParameterError(f"line {lineno}: empty id")
            try:
                x = float(raw)
            except ValueError:
                raise ParameterError(f"line {lineno}: value {raw!r} is not a number") from None
            if not math.isfinite(x):
                raise ParameterError(f"line {lineno}: non-finite value")
            if not lo <= x <= hi:
                raise ParameterError(f"line {lineno}: value {x} outside [{lo}, {hi}]")
            ui = users.setdefault(u, len(users))
            ii = items.setdefault(it, len(items))
            slot = acc.setdefault((ui, ii), [0.0, 0])
            slot[0] += x
            slot[1] += 1
    if not users:
        raise ParameterError(f"{path}: no records")

    per_user: list[list[tuple[int, float]]] = [[] for _ in users]
    for (ui, ii), (total, cnt) in acc.items():
        v = normalize(total / cnt, lo, hi)
        if v != 0.0:
            per_user[ui].append((ii, min(max(v, -1.0), 1.0)))

    rng = np.random.default_rng(derive_client_seed(seed, 0, Purpose.DATASET))
    indptr, idx, val = [0], [], []
    for recs in per_user:
        recs.sort()
        if len(recs) > k:
            keep = np.sort(rng.choice(len(recs), size=k, replace=False))
            recs = [recs[j] for j in keep]
        idx.extend(r[0] for r in recs)
        val.extend(r[1] for r in recs)
        indptr.append(len(idx))
    rows = SparseRows(len(items), k, indptr, idx, val)
    prov = {"source": "csv", "path": str(path), "k": k, "value_range": [lo, hi], "seed": seed}
    return Dataset(rows, prov)
