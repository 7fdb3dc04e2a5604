import pytest

from frictionstokes.cli import main

TRESCA = """
[domain]
dimension = 2
omega = [[0.0, 1.0]]
periodic = [0]

[physics]
T = 0.125

[friction]
eps_schedule = [1e-2, 1e-3]

[friction.tresca]
ell = 0.5

[discretization]
resolution = 4
dt = 0.0625

[verify]
eps_list = [1e-2, 1e-3]
dt_list = [0.0625, 0.03125]
"""

COULOMB = TRESCA.replace("periodic = [0]\n", "").replace(
    "[friction.tresca]\nell = 0.5", "[friction.coulomb]\nF0 = 0.2\nFsigma = 0.1\nwindow = 0.0625"
)


@pytest.fixture
def tresca_file(tmp_path):
    p = tmp_path / "tresca.toml"
    p.write_text(TRESCA)
    return str(p)


@pytest.fixture
def coulomb_file(tmp_path):
    p = tmp_path / "coulomb.toml"
    p.write_text(COULOMB)
    return str(p)


def test_mesh_command(tresca_file, tmp_path, capsys):
    assert main(["mesh", "--scenario", tresca_file, "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "mesh.txt").exists()
    assert "vertices" in capsys.readouterr().out


def test_run_tresca_writes_report(tresca_file, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run-tresca", "--scenario", tresca_file, "--out", str(out), "--threads", "1"]) == 0
    text = (out / "report.txt").read_text()
    assert text.startswith("PASS") and "FAIL" not in text
    assert (out / "manifest.txt").exists()


def test_verify_command(tresca_file, tmp_path):
    assert main(["verify", "--scenario", tresca_file, "--out", str(tmp_path / "v")]) == 0


def test_studies(tresca_file, tmp_path, capsys):
    assert main(["study-eps", "--scenario", tresca_file, "--out", str(tmp_path / "e")]) in (0, 1)
    assert (tmp_path / "e" / "eps_study.csv").exists()
    assert main(["study-dt", "--scenario", tresca_file, "--out", str(tmp_path / "d")]) in (0, 1)
    assert (tmp_path / "d" / "dt_study.csv").exists()


def test_resume_equals_uninterrupted(coulomb_file, tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["run-coulomb", "--scenario", coulomb_file, "--out", str(full)]) == 0
    ck = str(tmp_path / "ck.json")
    args = ["run-coulomb", "--scenario", coulomb_file, "--out", str(part), "--checkpoint", ck]
    assert main(args + ["--stop-after-windows", "1"]) == 0
    assert main(args + ["--resume"]) == 0
    assert (full / "manifest.txt").read_bytes() == (part / "manifest.txt").read_bytes()


def test_wrong_law_is_usage_error(tresca_file, coulomb_file, tmp_path, capsys):
    assert main(["run-coulomb", "--scenario", tresca_file, "--out", str(tmp_path / "x")]) == 2
    assert main(["run-tresca", "--scenario", coulomb_file, "--out", str(tmp_path / "y")]) == 2


def test_bad_scenario_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(TRESCA.replace("[physics]", "[physics]\nzeta = 2.0"))
    assert main(["run-tresca", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "zeta(0) must equal 1" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["mesh", "--scenario", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2
