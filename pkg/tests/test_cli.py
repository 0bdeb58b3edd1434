import json
import subprocess
import sys

import pytest

from twoscale import RunConfig
from twoscale.cli import main
from twoscale.config import serialize_config

SMALL = dict(macro_elements=4, micro_nx=4, micro_ny=4, dt=1e-2, T_final=0.05, output_every=2)


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(serialize_config(RunConfig(**SMALL)))
    return p


def test_run_writes_outputs(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "--out", str(out)]) == 0
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert [p.name for p in snaps] == [f"snapshot_{i:05d}.csv" for i in range(4)]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["violations"] == 0
    assert (out / "diagnostics.jsonl").read_text().count("\n") >= 5
    assert "wrote 4 snapshots" in capsys.readouterr().out


def test_bounds_clean_and_corrupted(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(cfg_path), "--out", str(out)])
    snap = out / "snapshot_00003.csv"
    assert main(["bounds", str(snap), str(cfg_path)]) == 0
    lines = snap.read_text().splitlines()
    parts = lines[5].split(",")
    parts[3] = "1000.0"
    lines[5] = ",".join(parts)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["bounds", str(bad), str(cfg_path)]) == 2
    err = capsys.readouterr().err
    assert "1 violations" in err and "upper" in err


def test_malformed_snapshot_is_input_error(cfg_path, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("field,macro_index\n")
    assert main(["bounds", str(bad), str(cfg_path)]) == 1
    assert "row 1" in capsys.readouterr().err


def test_missing_or_invalid_config_exit_one(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.cfg")]) == 1
    p = tmp_path / "bad.cfg"
    p.write_text("dt = -1\n")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "dt" in capsys.readouterr().err


def test_solver_failure_exit_two(tmp_path, capsys):
    p = tmp_path / "fail.cfg"
    p.write_text(serialize_config(RunConfig(**SMALL, max_fp_outer=1)))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "solver failure" in capsys.readouterr().err


def test_contraction_command(cfg_path, tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["contraction", str(cfg_path), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "slab_steps,slab,inner_ratio,outer_ratio"
    assert [r.split(",")[0] for r in rows[1:]] == ["8", "4", "2", "1"]


def test_contraction_slab_longer_than_run_is_allowed(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(serialize_config(RunConfig(**{**SMALL, "T_final": 0.02}, contraction_slabs="2,1")))
    assert main(["contraction", str(p)]) == 0


def test_mms_command(tmp_path, capsys):
    p = tmp_path / "m.cfg"
    p.write_text(serialize_config(RunConfig(mms_T_final=0.04)))
    out = tmp_path / "conv.csv"
    assert main(["mms", str(p), "--mode", "time", "--case", "linear", "--levels", "3",
                 "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4
    assert "w4: fitted order" in capsys.readouterr().out


def test_stability_command(cfg_path, capsys):
    assert main(["stability", str(cfg_path), "1e-4", "--richardson"]) == 0
    text = capsys.readouterr().out
    assert "fitted rate C=" in text
    assert text.count("distance(T)=") == 3


def test_module_entry_point(cfg_path):
    proc = subprocess.run([sys.executable, "-m", "twoscale", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "contraction" in proc.stdout
