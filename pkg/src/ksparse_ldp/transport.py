"""Clipping, unbiased discretisation, wire format and byte accounting.

Wire layout of one report (little-endian, ``13 + 4 b`` bytes)::

    offset  size  field
    0       1     header: version (high 4 bits) | discretised flag (bit 3) | 0
    1       5     bin-hash seed
    6       5     sign-hash seed
    11      2     b (uint16)
    13      4b    values: float32, or int32 when discretised
"""

from __future__ import annotations

import enum
import math
import struct

import numpy as np

from .core import ClientReport, CounterStream, MechanismParams, ParameterError
from .hashing import seed_from_bytes, seed_to_bytes

WIRE_VERSION = 1
HEADER_BYTES = 13
SEED_BYTES = 5
VALUE_BYTES = 4
_FLAG_DISCRETIZED = 0x08
_INT32_MAX = 2**31 - 1
_FLOAT32_MAX = float(np.finfo(np.float32).max)


class Accounting(enum.Enum):
    WIRE = "wire"
    PAPER = "paper"
    PAPER_CONVENTION = "paper"  # alias of PAPER


def dsc_many(x, u) -> np.ndarray:
    """Stochastic rounding: ``floor(x) + 1`` when ``u < frac(x)``, else ``floor(x)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParameterError("cannot discretise a non-finite value")
    lo = np.floor(x)
    return (lo + (np.asarray(u) < (x - lo))).astype(np.int64)


def dsc(x: float, rng) -> int:
    """Unbiased integer rounding of ``x``; ``rng`` supplies one uniform."""
    if not math.isfinite(x):
        raise ParameterError("cannot discretise a non-finite value")
    return int(dsc_many(x, rng.random()))


def transmit_range(params: MechanismParams, n: int | None = None, beta: float | None = None) -> float:
    """``U = k + (Delta/eps) ln(10 n b / beta)``."""
    n = params.n if n is None else n
    beta = params.beta if beta is None else beta
    return params.k + params.noise_scale * math.log(10 * n * params.b / beta)


def transmit_clip(value, params: MechanismParams, n: int | None = None, beta: float | None = None):
    U = transmit_range(params, n, beta)
    return np.clip(value, -U, U) if isinstance(value, np.ndarray) else min(max(value, -U), U)


def discretize_values(values, params: MechanismParams, u) -> np.ndarray:
    """transmit_clip then DSC, elementwise."""
    return dsc_many(transmit_clip(np.asarray(values, dtype=np.float64), params), u)


def discretize_report(report: ClientReport, params: MechanismParams, rng) -> ClientReport:
    if report.discretized:
        return report
    if isinstance(rng, CounterStream):
        u = rng.uniforms(report.b, offset=report.b)
    else:
        u = np.array([rng.random() for _ in range(report.b)])
    return ClientReport(
        report.hash_seed_h, report.hash_seed_s, discretize_values(report.bin_values, params, u), True
    )


def discretize_batch(batch, params: MechanismParams, noise_seeds):
    """Discretise an :class:`~ksparse_ldp.mechanism.EncodedBatch` in place of its values.

    Client ``i`` uses uniforms ``b..2b-1`` of its noise stream (``0..b-1``
    went to the Laplace noise), matching :func:`discretize_report` with the
    client's :class:`CounterStream`.
    """
    from .core import counter_uniforms
    from .mechanism import EncodedBatch

    u = counter_uniforms(noise_seeds, batch.b, offset=batch.b)
    return EncodedBatch(batch.seeds_h, batch.seeds_s, discretize_values(batch.values, params, u), True)


def wire_length(b: int) -> int:
    if b < 1:
        raise ParameterError("a report carries at least one bin")
    return HEADER_BYTES + VALUE_BYTES * b


def serialize(report: ClientReport, discretize: bool = False, params: MechanismParams | None = None, rng=None) -> bytes:
    """Bit-exact wire encoding; ``discretize`` clips and rounds real values first."""
    if discretize and not report.discretized:
        if params is None or rng is None:
            raise ParameterError("discretising needs params and a random stream")
        report = discretize_report(report, params, rng)
    b = report.b
    if b >= 1 << 16:
        raise ParameterError("b does not fit the 2-byte length field")
    header = (WIRE_VERSION << 4) | (_FLAG_DISCRETIZED if report.discretized else 0)
    head = bytes([header]) + seed_to_bytes(report.hash_seed_h) + seed_to_bytes(report.hash_seed_s)
    head += struct.pack("<H", b)
    if report.discretized:
        vals = report.bin_values
        if vals.min() < -_INT32_MAX - 1 or vals.max() > _INT32_MAX:
            raise ParameterError("discretised value does not fit int32")
        body = vals.astype("<i4").tobytes()
    else:
        vals = report.bin_values
        if not np.all(np.abs(vals) <= _FLOAT32_MAX):
            raise ParameterError("value not representable as float32")
        body = vals.astype("<f4").tobytes()
    return head + body


def deserialize(raw: bytes) -> ClientReport:
    if len(raw) < HEADER_BYTES:
        raise ParameterError("truncated report")
    header = raw[0]
    if header >> 4 != WIRE_VERSION:
        raise ParameterError(f"unsupported wire version {header >> 4}")
    if header & 0x07:
        raise ParameterError("reserved header bits are set")
    discretized = bool(header & _FLAG_DISCRETIZED)
    seed_h = seed_from_bytes(raw[1:6])
    seed_s = seed_from_bytes(raw[6:11])
    (b,) = struct.unpack("<H", raw[11:13])
    if len(raw) != wire_length(b):
        raise ParameterError(f"expected {wire_length(b)} bytes for b={b}, got {len(raw)}")
    dtype = "<i4" if discretized else "<f4"
    vals = np.frombuffer(raw[HEADER_BYTES:], dtype=dtype)
    vals = vals.astype(np.int64 if discretized else np.float64)
    return ClientReport(seed_h, seed_s, vals, discretized)


def comm_cost(report_or_b, accounting: Accounting = Accounting.WIRE) -> int:
    """Bytes per client for one report of the binning mechanism.

    ``WIRE`` is the full wire length; ``PAPER`` charges one 5-byte seed plus
    4 bytes per bin.
    """
    b = report_or_b.b if isinstance(report_or_b, ClientReport) else int(report_or_b)
    if b < 1:
        raise ParameterError("a report carries at least one bin")
    if accounting is Accounting.WIRE:
        return wire_length(b)
    return SEED_BYTES + VALUE_BYTES * b


# baselines ship a 40-bit seed and one packed byte (item bit, value sign) per report
_BLH_WIRE = SEED_BYTES + 1


def baseline_cost(mechanism: str, *, k: int = 1, d: int = 1, accounting: Accounting = Accounting.WIRE) -> int:
    """Bytes per client of the strawman mechanisms.

    ``PAPER`` uses 4-byte seeds and 4-byte values throughout: ``4 + 4k`` for
    k-fold, 8 for sampling, ``4d`` for naive perturbation.
    """
    if mechanism == "kfold":
        return _BLH_WIRE * k if accounting is Accounting.WIRE else 4 + 4 * k
    if mechanism == "sampling":
        return _BLH_WIRE if accounting is Accounting.WIRE else 8
    if mechanism == "naive":
        return 4 * d
    if mechanism == "warmup":
        return SEED_BYTES + _BLH_WIRE * k if accounting is Accounting.WIRE else 4 + 4 * k
    raise ParameterError(f"unknown baseline {mechanism!r}")
