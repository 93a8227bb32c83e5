import numpy as np
import pytest
import yaml

from coopbound.cli import main


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "lat.yaml"
    p.write_text(yaml.safe_dump({"name": "demo", "topology": {"kind": "lattice", "diameter": 200.0, "spacing": 20.0},
                                 "bins": {"lo": 0.0, "hi": 100.0, "width": 25.0}}))
    return p


def test_gen(cfg_file, tmp_path, capsys):
    assert main(["gen", "--config", str(cfg_file), "--out", str(tmp_path / "g")]) == 0
    lines = (tmp_path / "g" / "nodes.csv").read_text().splitlines()
    assert lines[0].startswith("# coopbound") and len(lines) == 2 + 81
    assert "connected=True" in capsys.readouterr().out


def test_bound_and_export(cfg_file, tmp_path):
    out = tmp_path / "b"
    assert main(["bound", "--config", str(cfg_file), "--out", str(out), "--cross-check"]) == 0
    assert (out / "demo_bounds.csv").exists()
    assert main(["export", str(out / "demo.json"), "--format", "svg-ellipses", "--out", str(tmp_path / "x")]) == 0
    assert (tmp_path / "x" / "demo_ellipses.svg").exists()


def test_eoc(cfg_file, tmp_path):
    assert main(["eoc", "--config", str(cfg_file), "--out", str(tmp_path), "--agents", "1", "5"]) == 0
    lines = (tmp_path / "eoc.csv").read_text().splitlines()
    assert lines[0] == "# coopbound eoc v1" and len(lines) == 4


def test_spectral(tmp_path):
    assert main(["spectral", "--out", str(tmp_path), "--max-steps", "4", "--grid", "5"]) == 0
    rows = (tmp_path / "potential.csv").read_text().splitlines()
    assert rows[1] == "dist,p_eig_min,p_eig_max" and len(rows) == 6
    data = np.loadtxt(tmp_path / "characteristic.csv", delimiter=",", skiprows=2)
    assert data.shape == (25, 5)


def test_reproduce(tmp_path, capsys):
    assert main(["reproduce", "fig7", "--scale", "0.25", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "slope_increasing" in out
    assert (tmp_path / "fig7-gamma_fits.csv").exists()


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("snapshots: 0\n")
    assert main(["bound", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["bound", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(["reproduce", "fig7", "--scale", "0.1", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
