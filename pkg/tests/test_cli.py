import csv

import numpy as np
import pytest

from chvox.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, main
from chvox.grid import write_mask
from chvox.io import CSV_COLUMNS


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text + f"\noutput_dir = {tmp_path / 'out'}\n")
    return path


def test_run_custom_writes_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "scenario = custom\nN = 4\np = 1\ninitial = mixed\ntau = 0.01\nT = 0.04\n"
                              "dump = final.bin")
    assert main(["run", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    rows = list(csv.reader((out / "timeseries.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 6
    assert (out / "state_000000.vtk").exists() and (out / "state_000004.vtk").exists()
    assert not (out / "state_000003.vtk").exists()
    assert (out / "final.bin").exists()
    assert "mass" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path):
    assert main(["run", str(write_cfg(tmp_path, "N = two"))]) == EXIT_CONFIG
    assert main(["run", str(write_cfg(tmp_path, "velocity = swirl:1"))]) == EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path):
    # p = 0 degenerate mobility at a pure bulk state cannot evolve
    cfg = write_cfg(tmp_path, "N = 2\np = 0\nbeta = 1\ninitial = constant:1\nT = 0.01\ntau = 0.01")
    assert main(["run", str(cfg)]) == EXIT_SOLVER
    cfg = write_cfg(tmp_path, "N = 4\np = 1\ninitial = sign\nT = 0.1\ntau = 0.1\n"
                              "newton_max_iters = 1\ntol_rel = 1e-14", "b.cfg")
    assert main(["run", str(cfg)]) == EXIT_SOLVER


def test_io_error_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "absent.cfg")]) == EXIT_IO
    assert main(["validate-mask", str(tmp_path / "absent.mask")]) == EXIT_IO
    cfg = write_cfg(tmp_path, "mask = nowhere.mask")
    assert main(["run", str(cfg)]) == EXIT_IO


def test_validate_mask(tmp_path, capsys):
    mask = np.ones((4, 4, 4), bool)
    mask[2] = False
    write_mask(tmp_path / "m.mask", mask)
    assert main(["validate-mask", str(tmp_path / "m.mask")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "elements = 48" in text and "components = 2" in text


def test_info(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "scenario = spinodal\nN = 8\np = 1")
    assert main(["info", str(cfg)]) == EXIT_OK
    info = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    assert float(info["h"]) == 0.125 and float(info["kappa_over_h2"]) == 1.0
    assert info["N_el"] == "512" and info["dofs"] == "2048"
    assert info["steps"] == "1000"


def test_convergence_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "scenario = convergence\np = 0\nlevels = 1,2")
    assert main(["convergence", str(cfg)]) == EXIT_OK
    table = (tmp_path / "out" / "convergence.txt").read_text().splitlines()
    assert len(table) == 3 and table[0].split()[0] == "level"
    assert "n/a" in table[1] and "n/a" not in table[2]


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["explode"])
