"""Experiment runner: config parsing, sweeps, repetitions and row assembly.

A config is an INI-style file with a ``[run]`` section of ``key = value``
lines. Comma-separated values sweep; the run covers the Cartesian product of
every swept key. See README for the full list of keys.
"""

from __future__ import annotations

import configparser
import dataclasses
import itertools
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .. import baselines, mechanism, transport, warmup
from ..core import ParameterError, PrivacyBudget, Purpose, SparseRows, derive_client_seed
from .data import Dataset, gen_synthetic
from .metrics import MetricsRow, linf_error, mse, select_probes

MECHANISMS = ("main", "warmup", "kfold", "sampling", "naive")


@dataclass
class Config:
    mechanisms: list = field(default_factory=lambda: ["main"])
    levels: list = field(default_factory=lambda: ["event"])
    regime: str = "auto"
    n: list = field(default_factory=lambda: [100_000])
    d: list = field(default_factory=lambda: [10_000])
    k: list = field(default_factory=lambda: [64])
    epsilon: list = field(default_factory=lambda: [1.0])
    delta: list = field(default_factory=lambda: [0.0])
    beta: float = 0.05
    reps: int = 10
    master_seed: int = 0
    probes: str = "top-100"
    target: str = "mean"
    value_share: float = baselines.DEFAULT_VALUE_SHARE
    data: str = "synthetic"
    zipf_s: float = 1.4
    mu: float = 1.0
    sigma: float = 0.3
    threads: int = 1
    discretize: bool = False
    timing: bool = True


_LIST_KEYS = {"mechanisms", "levels", "n", "d", "k", "epsilon", "delta"}
_CASTS = {
    "n": int, "d": int, "k": int, "epsilon": float, "delta": float,
    "beta": float, "reps": int, "master_seed": int, "value_share": float,
    "zipf_s": float, "mu": float, "sigma": float, "threads": int,
}
_BOOLS = {"discretize", "timing"}


def _to_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"{key}: expected a boolean, got {raw!r}")


def _cast(key: str, raw: str):
    cast = _CASTS.get(key, str)
    try:
        if cast is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return cast(raw)
    except ValueError:
        raise ParameterError(f"{key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> Config:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text if "[run]" in text else "[run]\n" + text)
    except configparser.Error as exc:
        raise ParameterError(f"bad config: {exc}") from None
    known = {f.name for f in fields(Config)}
    kwargs = {}
    for key, raw in cp["run"].items():
        if key not in known:
            raise ParameterError(f"unknown config key {key!r}")
        if key in _BOOLS:
            kwargs[key] = _to_bool(key, raw)
        elif key in _LIST_KEYS:
            kwargs[key] = [_cast(key, p.strip()) for p in raw.split(",") if p.strip()]
        else:
            kwargs[key] = _cast(key, raw.strip())
    cfg = Config(**kwargs)
    validate(cfg)
    return cfg


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read())


def validate(cfg: Config) -> None:
    bad = set(cfg.mechanisms) - set(MECHANISMS)
    if bad:
        raise ParameterError(f"unknown mechanisms {sorted(bad)}; choose from {MECHANISMS}")
    for lv in cfg.levels:
        _level_L(lv, 1)
    if cfg.regime != "auto" and cfg.regime not in mechanism.REGIMES:
        raise ParameterError(f"regime must be 'auto' or one of {mechanism.REGIMES}")
    if cfg.target not in ("mean", "frequency"):
        raise ParameterError("target must be 'mean' or 'frequency'")
    if cfg.reps < 1 or cfg.threads < 1:
        raise ParameterError("reps and threads must be >= 1")
    select_probes(np.zeros(1), cfg.probes)


def _level_L(level: str, k: int) -> float:
    if level == "event":
        return 2.0
    if level == "user":
        return 2.0 * k
    try:
        L = float(level[2:] if level.startswith("L=") else level)
    except ValueError:
        raise ParameterError(f"level must be event, user or a number, got {level!r}") from None
    if not L > 0:
        raise ParameterError("L must be positive")
    return L


def _level_label(level: str) -> str:
    if level in ("event", "user"):
        return level
    return f"L={_level_L(level, 1):g}"


@dataclass(frozen=True)
class Cell:
    mechanism: str
    level: str
    n: int
    d: int
    k: int
    epsilon: float
    delta: float


def cells(cfg: Config) -> list[Cell]:
    out = []
    for mech, lv, n, d, k, eps, delta in itertools.product(
        cfg.mechanisms, cfg.levels, cfg.n, cfg.d, cfg.k, cfg.epsilon, cfg.delta
    ):
        cell = Cell(mech, lv, n, d, k, eps, delta)
        if _compatible(cell, cfg):
            out.append(cell)
    return out


def _compatible(cell: Cell, cfg: Config) -> bool:
    """Baselines only run at the privacy level their accounting covers."""
    if cell.mechanism in ("kfold", "warmup"):
        return cell.level == "event"
    if cell.mechanism == "sampling":
        return cell.level == "user"
    return True


@dataclass
class _Outcome:
    linf: float = math.nan
    mse: float = math.nan
    b: int = 0
    bytes_wire: float = 0.0
    bytes_paper: float = 0.0
    wall_ms: float = 0.0
    note: str = ""
    error: str | None = None


def _binary_mode(cell: Cell, cfg: Config) -> bool:
    return cfg.target == "frequency" or cell.mechanism == "warmup"


def _main_params(cell: Cell, cfg: Config):
    budget = PrivacyBudget(cell.epsilon, cell.delta, _level_L(cell.level, cell.k))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mechanism.UtilityConditionWarning)
        return mechanism.select_params(
            cell.k, cell.d, cell.n, budget, cfg.beta,
            None if cfg.regime == "auto" else cfg.regime,
        )


def _run_one(cell: Cell, cfg: Config, ds: Dataset, rep: int, params) -> _Outcome:
    seed = derive_client_seed(cfg.master_seed, rep, Purpose.RUN)
    binary = _binary_mode(cell, cfg)
    rows = ds.rows.binarized() if binary else ds.rows
    truth_all = rows.column_frequencies() if binary else rows.column_means()
    probes = select_probes(truth_all, cfg.probes)
    truth = truth_all[probes]
    k, eps = cell.k, cell.epsilon
    L = _level_L(cell.level, k)
    share = 0.0 if binary else cfg.value_share
    out = _Outcome()
    t0 = time.perf_counter()
    try:
        if cell.mechanism == "main":
            batch = mechanism.encode_batch(rows, params, seed)
            if cfg.discretize:
                noise = mechanism.batch_seeds(seed, rows.n)[2]
                batch = transport.discretize_batch(batch, params, noise)
            est = mechanism.estimate_batch(batch, probes, params)
            out.b = params.b
            out.bytes_wire = transport.comm_cost(params.b, transport.Accounting.WIRE)
            out.bytes_paper = transport.comm_cost(params.b, transport.Accounting.PAPER)
            out.note = f"params={params.regime};Delta={params.Delta:.6g}"
            if cfg.discretize:
                out.note += ";discretized"
        elif cell.mechanism == "warmup":
            batch = warmup.bucketed_encode_batch(rows, eps, seed)
            est = warmup.bucketed_estimate_batch(batch, probes, eps)
            out.b = k
            out.bytes_wire = transport.baseline_cost("warmup", k=k)
            out.bytes_paper = transport.baseline_cost("warmup", k=k, accounting=transport.Accounting.PAPER)
        elif cell.mechanism in ("kfold", "sampling"):
            fn = baselines.kfold_estimate_batch if cell.mechanism == "kfold" else baselines.sampling_estimate_batch
            est = fn(rows, eps, seed, probes, share)
            out.b = k if cell.mechanism == "kfold" else 1
            out.bytes_wire = transport.baseline_cost(cell.mechanism, k=k)
            out.bytes_paper = transport.baseline_cost(cell.mechanism, k=k, accounting=transport.Accounting.PAPER)
            if share:
                out.note = f"value_share={share:g}"
        else:
            budget = PrivacyBudget(eps, 0.0, L)
            est = baselines.naive_estimate_batch(rows, budget, seed, probes)
            out.b = cell.d
            out.bytes_wire = out.bytes_paper = transport.baseline_cost("naive", d=cell.d)
    except ParameterError as exc:
        out.error = str(exc)
        return out
    out.wall_ms = (time.perf_counter() - t0) * 1000.0 if cfg.timing else 0.0
    out.linf = linf_error(truth, est)
    out.mse = mse(truth, est)
    return out


def _dataset_for(cfg: Config, n: int, d: int, k: int, preloaded: Dataset | None) -> Dataset:
    if preloaded is not None:
        r = preloaded.rows
        nnz = int(np.diff(r.indptr).max()) if r.n else 0
        if nnz > k or k > d:
            raise ParameterError(f"dataset rows hold up to {nnz} items; k={k} is too small or exceeds d={d}")
        return Dataset(SparseRows(d, k, r.indptr, r.indices, r.values), preloaded.provenance)
    return gen_synthetic(n, d, k, cfg.zipf_s, cfg.mu, cfg.sigma, cfg.master_seed)


def run_experiment(cfg: Config, dataset: Dataset | None = None) -> list[MetricsRow]:
    """Run every compatible cell ``cfg.reps`` times and return one row per cell.

    Rows come back in sweep order regardless of ``cfg.threads``; with
    ``timing`` off the output depends on the config alone.
    """
    validate(cfg)
    if dataset is None and cfg.data != "synthetic":
        dataset = Dataset.load(cfg.data)
    if dataset is not None:
        # a stored dataset fixes n and d; k may still sweep upwards
        cfg = dataclasses.replace(cfg, n=[dataset.n], d=[dataset.d])
    todo = cells(cfg)
    datasets: dict[tuple, Dataset | str] = {}
    params: dict[int, object] = {}
    failed: dict[int, str] = {}
    for i, c in enumerate(todo):
        key = (c.n, c.d, c.k)
        if key not in datasets:
            try:
                datasets[key] = _dataset_for(cfg, *key, dataset)
            except ParameterError as exc:
                datasets[key] = str(exc)
        if isinstance(datasets[key], str):
            failed[i] = datasets[key]
        elif c.mechanism == "main":
            try:
                params[i] = _main_params(c, cfg)
            except ParameterError as exc:
                failed[i] = str(exc)

    tasks = [(i, r) for i in range(len(todo)) if i not in failed for r in range(cfg.reps)]

    def work(task):
        i, r = task
        c = todo[i]
        return _run_one(c, cfg, datasets[(c.n, c.d, c.k)], r, params.get(i))

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    by_cell: dict[int, list[_Outcome]] = {}
    for (i, _), res in zip(tasks, results):
        by_cell.setdefault(i, []).append(res)

    rows = []
    for i, c in enumerate(todo):
        outs = by_cell.get(i, [])
        base = dict(
            mechanism=c.mechanism, regime=_level_label(c.level), k=c.k, d=c.d, n=c.n,
            epsilon=c.epsilon, delta=c.delta, beta=cfg.beta, runs=cfg.reps,
            master_seed=cfg.master_seed,
        )
        failure = failed.get(i) or next((o.error for o in outs if o.error), None)
        if failure is not None:
            rows.append(MetricsRow(
                b=0, linf=math.nan, mse=math.nan, bytes_per_client=math.nan,
                paper_bytes_per_client=math.nan, wall_ms=0.0, status="failed",
                note=failure.replace("\n", " "), **base,
            ))
            continue
        rows.append(MetricsRow(
            b=outs[0].b,
            linf=math.fsum(o.linf for o in outs) / len(outs),
            mse=math.fsum(o.mse for o in outs) / len(outs),
            bytes_per_client=float(outs[0].bytes_wire),
            paper_bytes_per_client=float(outs[0].bytes_paper),
            wall_ms=math.fsum(o.wall_ms for o in outs) / len(outs),
            note=outs[0].note,
            **base,
        ))
    return rows
