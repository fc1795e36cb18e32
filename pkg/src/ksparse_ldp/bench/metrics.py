"""Error metrics, probe selection and the metrics CSV."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from ..core import ParameterError

SCHEMA_VERSION = 1


def linf_error(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ParameterError("truth and estimate differ in shape")
    if truth.size == 0:
        return 0.0
    return float(np.max(np.abs(estimate - truth)))


def mse(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ParameterError("truth and estimate differ in shape")
    if truth.size == 0:
        return 0.0
    return float(np.mean((estimate - truth) ** 2))


def select_probes(truth, policy: str = "all") -> np.ndarray:
    """Probe coordinates: ``"all"`` or ``"top-m"`` (largest ``|truth|``, ties by index)."""
    truth = np.asarray(truth, dtype=np.float64)
    if policy == "all":
        return np.arange(truth.size)
    if policy.startswith("top-"):
        try:
            m = int(policy[4:])
        except ValueError:
            raise ParameterError(f"bad probe policy {policy!r}") from None
        if m < 1:
            raise ParameterError("top-m needs m >= 1")
        # stable sort on -|truth| keeps the lower index first among ties
        order = np.argsort(-np.abs(truth), kind="stable")
        return np.sort(order[:m])
    raise ParameterError(f"bad probe policy {policy!r}; use 'all' or 'top-m'")


@dataclass(frozen=True, kw_only=True)
class MetricsRow:
    schema_version: int = SCHEMA_VERSION
    mechanism: str
    regime: str
    k: int
    d: int
    n: int
    epsilon: float
    delta: float
    beta: float
    b: int
    linf: float
    mse: float
    bytes_per_client: float
    paper_bytes_per_client: float
    wall_ms: float
    runs: int
    master_seed: int
    status: str = "ok"
    note: str = ""

    def __post_init__(self):
        if self.runs < 1:
            raise ParameterError("runs must be >= 1")
        if self.status == "ok" and not (self.linf >= 0 and self.mse >= 0):
            raise ParameterError("linf and mse must be non-negative")


FIELDS = [f.name for f in dataclasses.fields(MetricsRow)]
_TYPES = {f.name: f.type for f in dataclasses.fields(MetricsRow)}


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def _parse(name: str, raw: str):
    t = _TYPES[name]
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def format_rows(rows, header: bool = True) -> str:
    """CSV text for ``rows`` (the exact bytes :func:`write_rows` appends)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in FIELDS])
    return buf.getvalue()


def write_rows(path, rows) -> None:
    """Append rows to ``path``, writing the header when the file is new."""
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != FIELDS:
            raise ParameterError(f"{path} has a different metrics schema")
    with open(path, "a", newline="") as fh:
        fh.write(format_rows(rows, header=not exists))


def read_rows(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != FIELDS:
            raise ParameterError(f"{path} has a different metrics schema")
        return [MetricsRow(**{f: _parse(f, v) for f, v in zip(FIELDS, rec)}) for rec in rd]
