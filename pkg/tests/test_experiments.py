import json

import numpy as np
import pytest
import yaml

from coopbound.errors import InvalidParameterError
from coopbound.experiments import (ExperimentResult, ScenarioConfig, bin_edges, binned, export_results,
                                   figure_configs, reproduce_figure, run_scenario, snapshot_seed)


def small_cfg(**kw):
    base = dict(name="small", topology={"kind": "stochastic", "diameter": 200.0, "density": 3e-3},
                radio={"antennas_per_node": 3}, bins={"lo": 0.0, "hi": 100.0, "width": 25.0},
                snapshots=4, seed=11)
    base.update(kw)
    return ScenarioConfig.from_dict(base)


def test_config_round_trip(tmp_path):
    cfg = small_cfg()
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg.to_dict()))
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    a = ScenarioConfig.from_file(tmp_path / "c.yaml")
    b = ScenarioConfig.from_file(tmp_path / "c.json")
    assert a.config_hash() == b.config_hash() == cfg.config_hash()
    assert small_cfg(seed=12).config_hash() != cfg.config_hash()
    # the output location does not change what is computed
    assert small_cfg(output="x").config_hash() == cfg.config_hash()


@pytest.mark.parametrize("bad", [
    {"colour": "red"},
    {"topology": {"kind": "torus", "diameter": 100.0}},
    {"snapshots": 0},
    {"sweep": {"variable": "anchor_density", "values": [2e-4, 1e-4]}},
    {"sweep": {"variable": "bandwidth", "values": [1.0]}},
    {"bound_path": "magic"},
    {"radio": {"path_loss_exponent": 1.5}},
])
def test_config_rejects(bad):
    with pytest.raises(InvalidParameterError):
        small_cfg(**bad)


def test_snapshot_seeds_are_counter_based():
    a = snapshot_seed(5, 1, 3).generate_state(2)
    b = snapshot_seed(5, 1, 3).generate_state(2)
    c = snapshot_seed(5, 3, 1).generate_state(2)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_threads_do_not_change_results():
    cfg = small_cfg()
    r1 = run_scenario(cfg, threads=1)
    r4 = run_scenario(cfg, threads=4)
    assert r1.meta["config_hash"] == r4.meta["config_hash"]
    for k in r1.table:
        np.testing.assert_array_equal(r1.table[k], r4.table[k])
    assert r1.curves == r4.curves
    assert len(np.unique(r1.table["snapshot"])) + len(r1.errors) == 4


@pytest.mark.parametrize("path", ["series", "potential"])
def test_bound_paths_agree(path):
    direct = run_scenario(small_cfg(snapshots=1))
    other = run_scenario(small_cfg(snapshots=1, bound_path=path))
    np.testing.assert_allclose(other.table["speb"], direct.table["speb"], rtol=1e-6)


def test_cross_check():
    r = run_scenario(small_cfg(snapshots=2, cross_check=True))
    assert r.checks["cross_path"] == "potential"
    assert r.checks["cross_discrepancy_max"] < 1e-8


def test_sweep_and_interior_curve():
    cfg = small_cfg(topology={"kind": "lattice", "diameter": 300.0, "spacing": 20.0}, snapshots=1,
                    anchors={"scheme": "lattice-uniform", "density": 1e-4},
                    sweep={"variable": "anchor_density", "values": [1 / 100 ** 2, 1 / 60 ** 2]})
    r = run_scenario(cfg)
    speb = [row["speb_mean"] for row in r.curves["interior"]]
    # more anchors, smaller bound
    assert speb[1] < speb[0]


def test_binned_snapshot_standard_error():
    t = {"dist": np.array([1.0, 2, 3, 1, 2, 3]), "snapshot": np.array([0, 0, 0, 1, 1, 1]),
         "v": np.array([1.0, 1, 4, 3, 3, 6])}
    rows = binned(t, ["v"], bin_edges(0, 4, count=2))
    assert rows[0]["v"] == pytest.approx(2.0) and rows[0]["n_snapshots"] == 2
    # per-snapshot means 1 and 3
    assert rows[0]["v_se"] == pytest.approx(np.std([1, 3], ddof=1) / np.sqrt(2))
    assert rows[1]["v"] == pytest.approx(3.5)


def test_export_csv_and_round_trip(tmp_path):
    r = run_scenario(small_cfg(snapshots=2))
    paths = export_results(r, "csv", tmp_path)
    bounds = tmp_path / "small_bounds.csv"
    assert bounds in paths
    lines = bounds.read_text().splitlines()
    assert lines[0] == "# coopbound bounds v1"
    assert lines[1] == ("agent_id,x,y,dist_to_nearest_anchor,speb,dpeb_radial,dpeb_tangential,"
                        "ellipse_a,ellipse_b,ellipse_theta")
    assert len(lines) == 2 + len(r)
    r.save(tmp_path / "r.json")
    back = ExperimentResult.load(tmp_path / "r.json")
    np.testing.assert_allclose(back.table["speb"], r.table["speb"])
    assert back.meta["config_hash"] == r.meta["config_hash"]


def test_export_empty_writes_nothing(tmp_path):
    with pytest.raises(InvalidParameterError):
        export_results(ExperimentResult("empty", {}), "csv", tmp_path / "out")
    assert not (tmp_path / "out").exists()
    r = run_scenario(small_cfg(snapshots=1))
    with pytest.raises(InvalidParameterError):
        export_results(r, "pdf", tmp_path)


def test_export_unwritable(tmp_path):
    r = run_scenario(small_cfg(snapshots=1))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_results(r, "csv", blocker / "sub")


def test_estimator_export(tmp_path):
    cfg = small_cfg(estimators=True, snapshots=2, topology={"kind": "stochastic", "diameter": 200.0,
                                                             "density": 3e-3})
    r = run_scenario(cfg)
    paths = export_results(r, "csv", tmp_path)
    est = [p for p in paths if p.name.endswith("_estimators.csv")][0]
    lines = est.read_text().splitlines()
    assert lines[0] == "# coopbound estimators v1"
    assert lines[1] == "bin_center_m,mse_aml,mse_seq,speb_avg,n_points,outage_rate"


def test_svg_ellipses(tmp_path):
    r = reproduce_figure("fig9-ellipses", scale=0.05)
    p = export_results(r, "svg-ellipses", tmp_path)[0]
    text = p.read_text()
    assert text.count("<ellipse") == int(np.sum((r.table["series"] == "lattice") & np.isfinite(r.table["ellipse_a"])))
    assert "data-agent" in text


def test_figure_configs_scale():
    cfgs = figure_configs("fig4", scale=0.25)
    assert cfgs["lattice"].topology["diameter"] == 500.0
    assert cfgs["stochastic"].snapshots == 100
    assert figure_configs("fig10", scale=0.25)["estimators"].topology["diameter"] == 400.0
    assert figure_configs("fig6", scale=0.25)["lattice"].topology["diameter"] == 600.0
    with pytest.raises(InvalidParameterError):
        figure_configs("fig99")
    with pytest.raises(InvalidParameterError):
        figure_configs("fig4", scale=2.0)
    # the fit window [2 R_max, 0.35 D] is empty on small networks
    with pytest.raises(InvalidParameterError, match="fit window"):
        figure_configs("fig7", scale=0.1)


def test_shipped_configs_match_recipes():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert len(files) >= 7
    recipes = {c.name: c for f in ("fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10")
               for c in figure_configs(f, 0.25).values()}
    for p in files:
        cfg = ScenarioConfig.from_file(p)
        assert cfg.config_hash() == recipes[cfg.name].config_hash(), p.name
