import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fracflow.cli import main
from fracflow.config import RunConfig

DATA = Path(__file__).parent / "data"

SMOOTH = {
    "grid": {"dimension": 1, "cells_per_axis": 8, "spacing": 0.125},
    "s": 0.5, "T": 0.03, "m": 6,
    "u0": {"preset": "bump", "extra": [{"profile": "ramp", "amplitude": 0.5}]},
    "source": {"kind": "separable_analytic", "amplitude": 10.0, "profile": "wave",
               "time_profile": "sin", "frequency": 60.0},
    "z_steps": [2],
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def read_values(path):
    with open(path) as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def test_zero_config(tmp_path):
    cfg = dict(SMOOTH, u0={"preset": "zero"}, source={"kind": "zero"})
    out = tmp_path / "run"
    assert main(["solve", str(write_cfg(tmp_path, cfg)), "--output-dir", str(out)]) == 0
    files = sorted((out / "snapshots").glob("u_*.csv"))
    assert len(files) == 7
    assert all(np.all(read_values(f) == 0) for f in files)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["passed"]


def test_missing_key_names_it(tmp_path, capsys):
    cfg = dict(SMOOTH)
    del cfg["s"]
    assert main(["solve", str(write_cfg(tmp_path, cfg))]) == 2
    assert "s: Field required" in capsys.readouterr().err


@pytest.mark.parametrize("patch", [{"s": 1.5}, {"m": 0}, {"grid": {"dimension": 3, "cells_per_axis": 2, "spacing": 1}},
                                   {"bogus": 1}, {"u0": {"preset": "file"}}])
def test_invalid_configs(tmp_path, patch):
    assert main(["solve", str(write_cfg(tmp_path, dict(SMOOTH, **patch)))]) == 2


def test_unreadable_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["solve", str(p)]) == 2
    assert main(["solve", str(tmp_path / "absent.json")]) == 2


def test_single_cell_matches_golden(tmp_path):
    out = tmp_path / "sc"
    assert main(["solve", str(DATA / "single_cell.json"), "--output-dir", str(out)]) == 0
    with open(DATA / "single_cell_golden.csv") as fh:
        golden = [float(r["u"]) for r in csv.DictReader(fh)]
    got = [read_values(out / "snapshots" / f"u_{k:04d}.csv")[0] for k in range(13)]
    assert np.abs(np.array(got) - golden).max() <= 1e-8
    assert got[10:] == [0.0, 0.0, 0.0]
    z = (out / "z" / "z_0001.csv").read_text().splitlines()
    assert z == ["i,j,Z_ij", "0,-1,1"]


def test_solve_verify_round_trip_and_corruption(tmp_path):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, SMOOTH)
    assert main(["solve", str(cfg), "--output-dir", str(out)]) == 0
    assert main(["verify", str(out)]) == 0
    ledger = (out / "ledger.csv").read_text().splitlines()
    assert ledger[0] == "k,t,seminorm,l2_norm,increment_l2,source_energy,margin_chain,margin_l2"
    assert (out / "z" / "z_0002.csv").exists()
    # small corruption: only the re-solve notices
    snap = out / "snapshots" / "u_0003.csv"
    lines = snap.read_text().splitlines()
    row = lines[4].split(",")
    row[-1] = repr(float(row[-1]) + 1e-3)
    lines[4] = ",".join(row)
    snap.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(out)]) == 4
    # large corruption breaks the energy margins themselves
    row[-1] = repr(float(row[-1]) + 5.0)
    lines[4] = ",".join(row)
    snap.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(out), "--skip-resolve"]) == 4


def test_verify_bad_dirs(tmp_path):
    assert main(["verify", str(tmp_path)]) == 2
    out = tmp_path / "run"
    assert main(["solve", str(write_cfg(tmp_path, SMOOTH)), "--output-dir", str(out)]) == 0
    (out / "snapshots" / "u_0004.csv").unlink()
    assert main(["verify", str(out)]) == 2


def test_determinism_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, dict(SMOOTH, u0={"preset": "random", "amplitude": 1.0}, seed=5))
    main(["solve", str(cfg), "--output-dir", str(tmp_path / "a")])
    main(["solve", str(cfg), "--output-dir", str(tmp_path / "b")])
    for f in sorted((tmp_path / "a" / "snapshots").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / "snapshots" / f.name).read_bytes()


def test_solver_failure_exit_and_manifest(tmp_path):
    cfg = dict(SMOOTH, solver={"max_pd_iters": 5, "pd_check_every": 5})
    out = tmp_path / "run"
    assert main(["solve", str(write_cfg(tmp_path, cfg)), "--output-dir", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "solver_failure" and man["failure"]["step"] == 1
    assert (out / "snapshots" / "u_0000.csv").exists()


def test_refine(tmp_path):
    cfg = dict(SMOOTH, m=None, m_list=[2, 4, 8])
    out = tmp_path / "ref"
    assert main(["refine", str(write_cfg(tmp_path, cfg)), "--output-dir", str(out)]) == 0
    rep = json.loads((out / "refinement.json").read_text())
    assert [r["m"] for r in rep["table"]["rows"]] == [2, 4, 8]
    assert (out / "refinement_curves.csv").read_text().startswith("m_coarse,m_fine,t,difference")
    bad = dict(cfg, m_list=[8, 12])
    assert main(["refine", str(write_cfg(tmp_path, bad, "bad.json"))]) == 2


def test_contract(tmp_path):
    same = dict(SMOOTH, u0_alt=SMOOTH["u0"])
    out = tmp_path / "c"
    assert main(["contract", str(write_cfg(tmp_path, same)), "--output-dir", str(out)]) == 0
    rep = json.loads((out / "contraction.json").read_text())["report"]
    assert rep["identical"] and max(rep["gaps"]) == 0
    diff = dict(SMOOTH, u0_alt={"preset": "wave", "amplitude": 0.6})
    assert main(["contract", str(write_cfg(tmp_path, diff, "d.json")), "--output-dir", str(tmp_path / "d")]) == 0
    assert main(["contract", str(write_cfg(tmp_path, SMOOTH, "n.json"))]) == 2


def test_u0_from_file(tmp_path):
    out = tmp_path / "a"
    main(["solve", str(write_cfg(tmp_path, SMOOTH)), "--output-dir", str(out)])
    cfg = dict(SMOOTH, u0={"preset": "file", "path": str(out / "snapshots" / "u_0006.csv")})
    out2 = tmp_path / "b"
    assert main(["solve", str(write_cfg(tmp_path, cfg, "f.json")), "--output-dir", str(out2)]) == 0
    assert np.array_equal(read_values(out2 / "snapshots" / "u_0000.csv"),
                          read_values(out / "snapshots" / "u_0006.csv"))
    assert main(["verify", str(out2)]) == 0


def test_oracle_command(capsys):
    assert main(["oracle", "--steps", "3", "--h", "0.01"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "k,t,u" and out[2] == "0,0,1" and len(out) == 6
    assert main(["oracle", "--s", "1.5"]) == 2


def test_config_round_trip():
    cfg = RunConfig.model_validate(SMOOTH)
    again = RunConfig.model_validate_json(cfg.model_dump_json())
    assert again == cfg


def test_console_script_and_log_env(tmp_path):
    env = {"FRACFLOW_LOG_LEVEL": "DEBUG", "PATH": "/usr/bin:/bin"}
    r = subprocess.run([sys.executable, "-m", "fracflow.cli", "solve", str(DATA / "single_cell.json"),
                        "--output-dir", str(tmp_path / "x")], capture_output=True, text=True, env=env)
    assert r.returncode == 0
    assert "DEBUG" in r.stderr
