"""Command line entry point: gen, ingest, run, audit."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from .bench import gen_synthetic, ingest_csv, load_config, run_experiment, write_rows
from .bench.metrics import format_rows
from .core import MASK40, ParameterError, PrivacyBudget, Purpose, SparseVector, derive_client_seed
from .mechanism import binned_l1_differences, density_ratio_check, select_params, squeeze_bound

log = logging.getLogger("ksparse_ldp")


def _cmd_gen(args) -> int:
    ds = gen_synthetic(args.n, args.d, args.k, args.zipf_s, args.mu, args.sigma, args.seed)
    ds.save(args.out)
    log.info("wrote %d clients (d=%d, k=%d) to %s", ds.n, ds.d, ds.k, args.out)
    return 0


def _cmd_ingest(args) -> int:
    ds = ingest_csv(args.csv, args.k, (args.lo, args.hi), args.seed)
    ds.save(args.out)
    log.info("wrote %d users, %d items to %s", ds.n, ds.d, args.out)
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    over = {}
    if args.threads is not None:
        over["threads"] = args.threads
    if args.discretize:
        over["discretize"] = True
    if args.no_timing:
        over["timing"] = False
    if args.data is not None:
        over["data"] = args.data
    cfg = dataclasses.replace(cfg, **over)
    rows = run_experiment(cfg)
    if args.out == "-":
        sys.stdout.write(format_rows(rows))
    else:
        write_rows(args.out, rows)
        log.info("appended %d rows to %s", len(rows), args.out)
    return 1 if any(r.status != "ok" for r in rows) else 0


def _neighbor_pairs(rng, k: int, d: int, L: float, count: int):
    """Random k-sparse pairs whose L1 distance is at most L."""
    for _ in range(count):
        idx = rng.choice(d, size=k, replace=False)
        vals = rng.uniform(-1, 1, size=k)
        vals[vals == 0] = 0.5
        v = SparseVector.from_arrays(d, k, idx, vals)
        target = rng.uniform(-1, 1, size=k)
        target[target == 0] = 0.5
        step = target - vals
        l1 = np.abs(step).sum()
        if l1 > L:
            step *= L / l1
        new = vals + step
        keep = new != 0
        yield v, SparseVector.from_arrays(d, k, idx[keep], new[keep])


def _cmd_audit(args) -> int:
    rng = np.random.default_rng(derive_client_seed(args.seed, 0, Purpose.RUN))
    budget = PrivacyBudget(args.epsilon, args.delta, args.L)
    if args.b is not None:
        from .core import MechanismParams

        Delta = min(args.L, squeeze_bound(args.b, args.L, args.delta))
        params = MechanismParams(args.b, float("inf"), Delta, budget, args.k, args.d, 1)
    else:
        params = select_params(args.k, args.d, 10**6, budget)
    worst, tail, ratio = 0.0, 0, 0.0
    thr = squeeze_bound(params.b, args.L, args.delta)
    for v, v2 in _neighbor_pairs(rng, args.k, args.d, args.L, args.pairs):
        seeds = rng.integers(0, MASK40 + 1, size=(2, args.seeds), dtype=np.uint64)
        diffs = binned_l1_differences(v, v2, params, seeds[0], seeds[1])
        worst = max(worst, float(diffs.max()))
        tail += int(np.sum(diffs > thr))
    print(f"b={params.b} Delta={params.Delta:.6g} regime={params.regime}")
    print(f"max binned L1 difference: {worst:.6g} (L={args.L:g})")
    print(f"tail rate above {thr:.6g}: {tail / (args.pairs * args.seeds):.6g}")
    for _ in range(args.pairs):
        B = rng.uniform(-args.L, args.L, size=params.b)
        step = rng.uniform(-1, 1, size=params.b)
        B2 = B + step * (args.L / max(np.abs(step).sum(), 1e-12))
        y = B[None, :] + rng.laplace(0, params.noise_scale, size=(8, params.b))
        ratio = max(ratio, density_ratio_check(B, B2, args.L, args.epsilon, y))
    print(f"max log density ratio (Delta=L): {ratio:.6g} (epsilon={args.epsilon:g})")
    return 0 if worst <= args.L * (1 + 1e-12) and ratio <= args.epsilon + 1e-9 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ksparse-ldp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="write a synthetic Zipf dataset")
    g.add_argument("--n", type=int, default=10_000)
    g.add_argument("--d", type=int, default=10_000)
    g.add_argument("--k", type=int, default=64)
    g.add_argument("--zipf-s", type=float, default=1.4)
    g.add_argument("--mu", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output .npz path")
    g.set_defaults(func=_cmd_gen)

    i = sub.add_parser("ingest", help="convert a user_id,item_id,value CSV")
    i.add_argument("csv")
    i.add_argument("--k", type=int, required=True)
    i.add_argument("--lo", type=float, default=-1.0)
    i.add_argument("--hi", type=float, default=1.0)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=_cmd_ingest)

    r = sub.add_parser("run", help="run a config and append metrics rows")
    r.add_argument("config")
    r.add_argument("--out", default="-", help="metrics CSV (default: stdout)")
    r.add_argument("--data", help="dataset .npz instead of synthetic data")
    r.add_argument("--threads", type=int)
    r.add_argument("--discretize", action="store_true", help="send integer-rounded bins")
    r.add_argument("--no-timing", action="store_true", help="write wall_ms=0 for reproducible output")
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("audit", help="sensitivity and density-ratio audits")
    a.add_argument("--k", type=int, default=64)
    a.add_argument("--d", type=int, default=1000)
    a.add_argument("--L", type=float, default=2.0)
    a.add_argument("--epsilon", type=float, default=1.0)
    a.add_argument("--delta", type=float, default=0.0)
    a.add_argument("--b", type=int, help="force the bin count")
    a.add_argument("--pairs", type=int, default=1000)
    a.add_argument("--seeds", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=_cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
