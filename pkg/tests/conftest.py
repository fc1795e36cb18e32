import numpy as np
import pytest

from ksparse_ldp.core import SparseVector

GRID = 64  # values are multiples of 1/64, so every bin sum below is exact in float64


def grid_vector(rng, d, k, nnz=None):
    nnz = rng.integers(0, k + 1) if nnz is None else nnz
    idx = rng.choice(d, size=nnz, replace=False)
    units = rng.integers(1, GRID + 1, size=nnz) * rng.choice([-1, 1], size=nnz)
    return {int(i): int(u) for i, u in zip(idx, units)}


def to_vector(units, d, k):
    return SparseVector(d, k, {i: u / GRID for i, u in units.items() if u != 0})


def random_neighbors(rng, d, k, L, steps=None, nnz=None):
    """An L-neighbouring pair on the 1/64 grid: ||v - v'||_1 <= L exactly.

    ``steps`` coordinates are changed (one step is an event-level change).
    """
    v = grid_vector(rng, d, k, nnz)
    w = dict(v)
    budget = int(np.floor(L * GRID))
    steps = rng.integers(1, k + 1) if steps is None else steps
    for _ in range(steps):
        if budget == 0:
            break
        live = [i for i, u in w.items() if u != 0]
        if len(live) < k and (not live or rng.random() < 0.5):
            free = np.setdiff1d(np.arange(d), list(w))
            if free.size == 0:
                continue
            c = int(rng.choice(free))
            old = 0
        else:
            c = int(rng.choice(live))
            old = w[c]
        lo, hi = max(-GRID, old - budget), min(GRID, old + budget)
        new = int(rng.integers(lo, hi + 1))
        budget -= abs(new - old)
        w[c] = new
    return to_vector(v, d, k), to_vector(w, d, k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
