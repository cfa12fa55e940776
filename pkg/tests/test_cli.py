import json
import subprocess
import sys

import pytest

from afcsim.cli import run


def only_run_dir(base):
    dirs = [p for p in base.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_efficiency(tmp_path, capsys):
    assert run(["efficiency", "--preset", "fig3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "eta_numeric = " in out and "eta_analytic = 0.3896" in out
    d = only_run_dir(tmp_path)
    assert d.name.startswith("fig3-efficiency-")
    assert json.loads((d / "report.json").read_text())["command"] == "efficiency"


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[scenario]\nname = mine\n[comb]\ndelta = 1.2\ngamma_fwhm = 0.2\nalphaL = 6\n")
    out_dir = tmp_path / "runs"
    assert run(["efficiency", "--config", str(cfg), "--out", str(out_dir)]) == 0
    assert only_run_dir(out_dir).name.startswith("mine-efficiency-")


def test_configuration_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[comb]\ndelta = 1.2\ngamma_fwhm = 0.3\nalphaL = 6\nn_peaks = 9\n")
    assert run(["efficiency", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "excited_splitting_limit" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_empty_axis_exit_code(tmp_path, capsys):
    assert run(["sweep", "--preset", "fig3", "--axis", "F=", "--out", str(tmp_path)]) == 1
    assert run(["sweep", "--preset", "fig3", "--axis", "depth=1,2", "--out", str(tmp_path)]) == 1
    assert run(["sweep", "--preset", "fig3", "--workers", "0", "--out", str(tmp_path)]) == 1
    assert list(tmp_path.iterdir()) == []


def test_sweep_axis_override(tmp_path, capsys):
    assert run(["sweep", "--preset", "fig3", "--axis", "F=3,4,6", "--workers", "2", "--out", str(tmp_path)]) == 0
    lines = (only_run_dir(tmp_path) / "sweep.csv").read_text().splitlines()
    assert [line.split(",")[1] for line in lines[1:4]] == ["3", "4", "6"]


def test_zero_shots_exit_code(tmp_path, capsys):
    assert run(["counts", "--preset", "fig3", "--shots", "0", "--out", str(tmp_path)]) == 2
    assert "shots = 0" in capsys.readouterr().err
    # nothing was produced, so no run folder is left behind
    assert list(tmp_path.iterdir()) == []


def test_negative_shots(tmp_path, capsys):
    assert run(["counts", "--preset", "fig3", "--shots", "-5", "--out", str(tmp_path)]) == 1


def test_counts_identical_under_seed(tmp_path, capsys):
    args = ["counts", "--preset", "fig3", "--shots", "200000", "--seed", "7"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = only_run_dir(tmp_path / "a"), only_run_dir(tmp_path / "b")
    for name in ("reference_hist.csv", "echo_hist.csv", "report.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_interference(tmp_path, capsys):
    assert run(["interference", "--preset", "interference-ideal", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    v = float([line for line in out.splitlines() if line.startswith("visibility_0 = ")][0].split("=")[1])
    assert v == pytest.approx(1.0, abs=0.01)


def test_fit_round_trip(tmp_path, capsys):
    assert run(["counts", "--preset", "fig3", "--shots", "2000000", "--inject-eta", "0.25",
                "--out", str(tmp_path / "c")]) == 0
    d = only_run_dir(tmp_path / "c")
    capsys.readouterr()
    assert run(["fit", "--reference", str(d / "reference_hist.csv"), "--echo", str(d / "echo_hist.csv"),
                "--reference-window=-416.67:416.67", "--echo-window", "416.67:1250",
                "--out", str(tmp_path / "f")]) == 0
    out = capsys.readouterr().out
    eta = float([line for line in out.splitlines() if line.startswith("eta = ")][0].split("=")[1])
    assert eta == pytest.approx(0.25, abs=0.02)
    assert (only_run_dir(tmp_path / "f") / "report.json").exists()


def test_fit_needs_input(capsys):
    assert run(["fit"]) == 1


def test_source_is_required():
    with pytest.raises(SystemExit):
        run(["efficiency"])
    with pytest.raises(SystemExit):
        run(["efficiency", "--preset", "fig3", "--config", "x.ini"])


def test_bad_window_argument():
    with pytest.raises(SystemExit):
        run(["fit", "--histogram", "h.csv", "--window", "5:1"])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "afcsim.cli", "efficiency", "--preset", "empty-pit",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "eta_numeric" in proc.stdout
