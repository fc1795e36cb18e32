"""Benchmark harness: datasets, metrics and the experiment runner."""

from .data import Dataset, gen_synthetic, ingest_csv
from .metrics import MetricsRow, linf_error, mse, read_rows, select_probes, write_rows
from .runner import Config, load_config, parse_config, run_experiment

__all__ = [
    "Config",
    "Dataset",
    "MetricsRow",
    "gen_synthetic",
    "ingest_csv",
    "linf_error",
    "load_config",
    "mse",
    "parse_config",
    "read_rows",
    "run_experiment",
    "select_probes",
    "write_rows",
]
