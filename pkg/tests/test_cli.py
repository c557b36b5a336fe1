import json

import pytest

from gapblowup import cli


def test_rates_command(tmp_path, capsys):
    assert cli.main(["rates", "--n-max", "5", "--k-max", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "alpha" in out
    lines = (tmp_path / "rates.csv").read_text().splitlines()
    assert len(lines) == 1 + 3


def test_h_certify_command(tmp_path, capsys):
    code = cli.main(["h-certify", "--n", "3", "--eps", "1e-2", "--out", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "summary.json").read_text())["passed"] is True


def test_mode_decay_command(tmp_path):
    assert cli.main(["mode-decay", "--n", "3", "--k", "1,2", "--eps", "1e-2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "results.csv").exists()


def test_solve_command(tmp_path, capsys):
    code = cli.main(["solve", "--eps", "1e-2", "--grid", "65x17", "--dump-grid", "--out", str(tmp_path)])
    assert code == 0
    assert "U11(sqrt eps)" in capsys.readouterr().out
    assert (tmp_path / "grid.csv").read_text().startswith("i,j,sigma,tau,r,xn,cell_volume")
    field = (tmp_path / "field.csv").read_text().splitlines()
    assert len(field) == 1 + 65 * 17
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["solve_report"]["converged"]


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nnonsense = 1\n")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_grid_argument():
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "--grid", "big"])
    assert exc.value.code == 2


def test_config_file_used(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nexperiment = mode-decay\nn = 4\nk = 1\neps_values = 1e-2\n")
    assert cli.main(["mode-decay", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    snap = (tmp_path / "config.snapshot").read_text()
    assert "n = 4" in snap
