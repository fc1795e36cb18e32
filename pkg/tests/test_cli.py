import subprocess
import sys

import pytest

from ksparse_ldp.bench import Dataset, read_rows
from ksparse_ldp.cli import main


def test_gen_then_run(tmp_path, capsys):
    data = tmp_path / "d.npz"
    assert main(["gen", "--n", "300", "--d", "40", "--k", "4", "--seed", "3", "--out", str(data)]) == 0
    assert Dataset.load(data).n == 300
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nmechanisms = main, naive\nk = 4\nreps = 2\nprobes = top-10\n")
    out = tmp_path / "m.csv"
    assert main(["run", str(cfg), "--data", str(data), "--out", str(out), "--no-timing"]) == 0
    rows = read_rows(out)
    assert [r.mechanism for r in rows] == ["main", "naive"]
    assert all(r.wall_ms == 0.0 and r.n == 300 for r in rows)


def test_run_to_stdout_and_discretize(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("n = 500\nd = 50\nk = 8\nreps = 1\n")
    assert main(["run", str(cfg), "--discretize", "--no-timing", "--threads", "2"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("schema_version,mechanism")
    assert "discretized" in text


def test_ingest(tmp_path):
    src = tmp_path / "r.csv"
    src.write_text("user_id,item_id,value\n1,10,5\n1,11,1\n2,10,4\n")
    out = tmp_path / "r.npz"
    assert main(["ingest", str(src), "--k", "2", "--lo", "1", "--hi", "5", "--out", str(out)]) == 0
    ds = Dataset.load(out)
    assert (ds.n, ds.d) == (2, 2)


def test_ingest_error_exit_code(tmp_path, capsys):
    src = tmp_path / "r.csv"
    src.write_text("1,10\n")
    assert main(["ingest", str(src), "--k", "2", "--out", str(tmp_path / "x.npz")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_audit(capsys):
    assert main(["audit", "--k", "16", "--d", "200", "--L", "2", "--pairs", "50", "--seeds", "20"]) == 0
    out = capsys.readouterr().out
    assert "max binned L1 difference" in out and "max log density ratio" in out


def test_audit_forced_bins(capsys):
    args = ["audit", "--k", "64", "--d", "500", "--L", "16", "--delta", "0.05", "--b", "4",
            "--pairs", "20", "--seeds", "50"]
    assert main(args) == 0
    assert "b=4" in capsys.readouterr().out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ksparse_ldp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "audit" in res.stdout
