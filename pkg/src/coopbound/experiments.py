"""Scenario configs, Monte Carlo orchestration, figure recipes and export."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .eoc import (FastObjective, eoc_decomposition, transition_operator)
from .errors import InvalidParameterError
from .estimators import ChannelParams, aml_estimate, generate_measurements, hop_layers, sequential_estimate
from .fim import agent_efims, assemble_efim, bounds_table
from .spectral import asymptote_fit
from .topology import (AnchorScheme, NetworkTopology, RadioParams, build_lattice_disk, build_stochastic_disk,
                       connect_by_link_budget, place_anchors)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_VARIABLES = ("none", "anchor_density", "path_loss_exponent", "net_diameter", "hole_radius", "antennas")
BOUND_PATHS = ("direct", "series", "potential")

FIGURES = ("fig4", "fig5/6-holes", "fig6-density", "fig7-gamma", "fig8-concentric", "fig9-ellipses",
           "fig10/11-estimators")
_FIG_ALIASES = {"fig5": "fig5/6-holes", "fig5-holes": "fig5/6-holes", "holes": "fig5/6-holes",
                "fig6": "fig6-density", "fig7": "fig7-gamma", "fig8": "fig8-concentric",
                "fig9": "fig9-ellipses", "fig10": "fig10/11-estimators", "fig11": "fig10/11-estimators",
                "estimators": "fig10/11-estimators"}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ScenarioConfig:
    """One experiment: geometry, link models, anchors, sweep and Monte Carlo settings.

    Build from a YAML/JSON file with :meth:`from_file` or from a mapping with
    :meth:`from_dict`; unknown keys are rejected.
    """

    name: str = "scenario"
    topology: Dict[str, Any] = field(default_factory=lambda: {"kind": "lattice", "diameter": 500.0, "spacing": 20.0})
    radio: Dict[str, Any] = field(default_factory=dict)
    channel: Dict[str, Any] = field(default_factory=dict)
    anchors: Dict[str, Any] = field(default_factory=lambda: {"scheme": "single-center"})
    sweep: Dict[str, Any] = field(default_factory=lambda: {"variable": "none", "values": [None]})
    bins: Dict[str, Any] = field(default_factory=lambda: {"lo": 0.0, "hi": None, "width": 20.0})
    distance_ref: str = "nearest-anchor"
    interior_eps: float = 0.2
    snapshots: int = 1
    seed: int = 0
    bound_path: str = "direct"
    cross_check: bool = False
    estimators: bool = False
    aml_iters: int = 10
    output: Optional[str] = None

    # -- construction ----------------------------------------------------
    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**{k: v for k, v in d.items()})
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        text = path.read_text()
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
        if not isinstance(data, dict):
            raise InvalidParameterError(f"{path} does not hold a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        kind = self.topology.get("kind", "lattice")
        if kind not in ("lattice", "stochastic"):
            raise InvalidParameterError(f"unknown topology kind {kind!r}")
        if not float(self.topology.get("diameter", 0)) > 0:
            raise InvalidParameterError("topology diameter must be positive")
        if kind == "lattice" and not float(self.topology.get("spacing", 0)) > 0:
            raise InvalidParameterError("lattice spacing must be positive")
        if kind == "stochastic" and not float(self.topology.get("density", 0)) > 0:
            raise InvalidParameterError("stochastic density must be positive")
        if int(self.snapshots) < 1:
            raise InvalidParameterError("snapshots must be at least 1")
        var = self.sweep.get("variable", "none")
        if var not in SWEEP_VARIABLES:
            raise InvalidParameterError(f"unknown sweep variable {var!r}")
        vals = list(self.sweep.get("values", [None]))
        if var != "none":
            arr = np.asarray(vals, float)
            if len(arr) == 0 or np.any(arr < 0) or (var != "hole_radius" and np.any(arr <= 0)):
                raise InvalidParameterError("sweep values must be positive")
            if np.any(np.diff(arr) <= 0):
                raise InvalidParameterError("sweep values must be sorted and distinct")
        if self.bound_path not in BOUND_PATHS:
            raise InvalidParameterError(f"unknown bound path {self.bound_path!r}")
        if self.distance_ref not in ("nearest-anchor", "anchor-centroid"):
            raise InvalidParameterError(f"unknown distance reference {self.distance_ref!r}")
        if not 0 < float(self.interior_eps) < 1:
            raise InvalidParameterError("interior_eps must lie in (0, 1)")
        RadioParams(**self.radio)
        ChannelParams(**self.channel)

    def sweep_values(self) -> list:
        return list(self.sweep.get("values", [None])) if self.sweep.get("variable", "none") != "none" else [None]


# ---------------------------------------------------------------------------
# results


@dataclass
class ExperimentResult:
    """Per-agent records (columnar), binned curves, fits and run metadata."""

    name: str
    table: Dict[str, np.ndarray]
    curves: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    fits: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    errors: List[Dict[str, Any]] = field(default_factory=list)

    def __len__(self):
        return len(next(iter(self.table.values()))) if self.table else 0

    def is_empty(self) -> bool:
        return len(self) == 0 and not any(self.curves.values())

    def select(self, **conds) -> Dict[str, np.ndarray]:
        """Rows of ``table`` matching ``column=value`` conditions."""
        m = np.ones(len(self), bool)
        for k, v in conds.items():
            col = self.table[k]
            m &= np.isclose(col, v) if np.issubdtype(np.asarray(col).dtype, np.floating) else (col == v)
        return {k: v[m] for k, v in self.table.items()}

    def to_json(self) -> Dict[str, Any]:
        def conv(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer, np.bool_)):
                return x.item()
            raise TypeError(type(x))
        return json.loads(json.dumps({"name": self.name, "table": self.table, "curves": self.curves,
                                      "fits": self.fits, "checks": self.checks, "meta": self.meta,
                                      "errors": self.errors}, default=conv))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json()))
        return path

    @classmethod
    def load(cls, path) -> "ExperimentResult":
        d = json.loads(Path(path).read_text())
        table = {k: np.asarray(v) for k, v in d["table"].items()}
        return cls(d["name"], table, d["curves"], d["fits"], d["checks"], d["meta"], d["errors"])

    @staticmethod
    def merge(name: str, parts: Sequence["ExperimentResult"], labels: Sequence[str]) -> "ExperimentResult":
        """Concatenate results, adding a ``series`` column from ``labels``."""
        cols = {}
        keys = set().union(*[p.table.keys() for p in parts])
        for k in sorted(keys):
            chunks = []
            for p in parts:
                n = len(p)
                chunks.append(p.table[k] if k in p.table else np.full(n, np.nan))
            cols[k] = np.concatenate(chunks) if chunks else np.empty(0)
        cols["series"] = np.concatenate([np.full(len(p), lab, dtype=object) for p, lab in zip(parts, labels)])
        out = ExperimentResult(name, cols)
        for p, lab in zip(parts, labels):
            for k, v in p.curves.items():
                out.curves[f"{lab}:{k}"] = v
            for k, v in p.fits.items():
                out.fits[f"{lab}:{k}"] = v
            for k, v in p.checks.items():
                out.checks[f"{lab}:{k}"] = v
            out.errors.extend(dict(e, series=lab) for e in p.errors)
        out.meta = {"parts": {lab: p.meta for p, lab in zip(parts, labels)}, "version": _version_stamp()}
        return out


def _version_stamp() -> str:
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"coopbound {__version__}" + (f"+g{sha}" if sha else "")


# ---------------------------------------------------------------------------
# snapshot construction


def snapshot_seed(master: int, sweep_index: int, snapshot: int) -> np.random.SeedSequence:
    """Counter-based seed: independent of scheduling order."""
    return np.random.SeedSequence(int(master), spawn_key=(int(sweep_index), int(snapshot)))


def _point_params(cfg: ScenarioConfig, value):
    """Topology/radio/anchor dictionaries with the sweep value applied."""
    topo = dict(cfg.topology)
    radio = dict(cfg.radio)
    anchors = dict(cfg.anchors)
    var = cfg.sweep.get("variable", "none")
    if var == "anchor_density":
        anchors["density"] = float(value)
    elif var == "path_loss_exponent":
        radio["path_loss_exponent"] = float(value)
    elif var == "net_diameter":
        topo["diameter"] = float(value)
    elif var == "hole_radius":
        topo["holes"] = [[h[0], h[1], float(value)] for h in topo.get("holes", [])] if value > 0 else []
    elif var == "antennas":
        radio["antennas_per_node"] = int(value)
    return topo, radio, anchors


def _anchor_scheme(a: Dict[str, Any], seed: int) -> AnchorScheme:
    s = a.get("scheme", "single-center")
    if s == "single-center":
        return AnchorScheme.single_center()
    if s == "lattice-uniform":
        return AnchorScheme.lattice_uniform(float(a["density"]))
    if s == "binomial":
        return AnchorScheme.binomial(float(a["density"]), seed)
    if s == "explicit":
        return AnchorScheme.explicit(a["points"])
    if s == "concentric-offsets":
        return AnchorScheme.concentric_offsets(a.get("offsets", ((20, 0), (-20, 0), (0, 20), (0, -20))))
    raise InvalidParameterError(f"unknown anchor scheme {s!r}")


def build_snapshot(cfg: ScenarioConfig, value, ss: np.random.SeedSequence):
    """Topology (connected by the link budget) and link models for one snapshot."""
    topo_d, radio_d, anc_d = _point_params(cfg, value)
    radio = RadioParams(**radio_d)
    channel = ChannelParams(**cfg.channel)
    s_topo, s_anc, s_meas = (int(x) for x in ss.generate_state(3))
    if topo_d.get("kind", "lattice") == "lattice":
        topo = build_lattice_disk(float(topo_d["spacing"]), float(topo_d["diameter"]))
    else:
        holes = [tuple(h) for h in topo_d.get("holes", [])]
        topo = build_stochastic_disk(float(topo_d["density"]), float(topo_d["diameter"]), holes, seed=s_topo)
    topo = place_anchors(topo, _anchor_scheme(anc_d, s_anc))
    rng = channel.max_range if cfg.estimators else topo_d.get("max_range")
    topo = connect_by_link_budget(topo, radio, max_range=rng)
    return topo, radio, channel, s_meas


def _efims(topo: NetworkTopology, model, path: str):
    if path == "direct":
        return topo.agent_ids, agent_efims(assemble_efim(topo, model))
    if path == "potential":
        return FastObjective(topo, model).per_agent_efim()
    T = transition_operator(topo, model, "agents-only")
    out = np.array([eoc_decomposition(T, int(i)).efim for i in topo.agent_ids])
    return topo.agent_ids, out


def _rel_discrepancy(A, B) -> float:
    num = np.linalg.norm(A - B, axis=(1, 2))
    den = np.linalg.norm(A, axis=(1, 2))
    return float(np.max(num / den)) if len(A) else 0.0


def run_snapshot(cfg: ScenarioConfig, k_sweep: int, value, snap: int) -> Dict[str, Any]:
    """Bounds (and estimator errors) for one snapshot; errors are captured, not raised."""
    ss = snapshot_seed(cfg.seed, k_sweep, snap)
    out: Dict[str, Any] = {"sweep_index": k_sweep, "sweep_value": value, "snapshot": snap}
    try:
        topo, radio, channel, s_meas = build_snapshot(cfg, value, ss)
        if not topo.connected:
            raise InvalidParameterError("snapshot network is disconnected")
        model = channel if cfg.estimators else radio
        ids, E = _efims(topo, model, cfg.bound_path)
        if cfg.cross_check:
            other = "potential" if model is radio and radio.n_t >= 2 else "series"
            ids2, E2 = _efims(topo, model, other if cfg.bound_path == "direct" else "direct")
            out["cross_path"] = other if cfg.bound_path == "direct" else "direct"
            out["cross_discrepancy"] = _rel_discrepancy(E, E2[np.searchsorted(ids2, ids)])
        anc = topo.positions[topo.anchor_ids]
        ref = anc.mean(axis=0) if cfg.distance_ref == "anchor-centroid" else None
        bt = bounds_table(E, topo.positions[ids], anc, reference=ref)
        n = len(ids)
        rows = {"node_id": ids, "x": topo.positions[ids, 0], "y": topo.positions[ids, 1],
                "dist": bt["dist_to_reference"], "dist_to_nearest_anchor": bt["dist_to_nearest_anchor"],
                "radius": np.hypot(topo.positions[ids, 0], topo.positions[ids, 1])}
        for key in ("speb", "dpeb_radial", "dpeb_tangential", "ellipse_a", "ellipse_b", "ellipse_theta"):
            rows[key] = bt[key]
        rows["efim_xx"], rows["efim_xy"], rows["efim_yy"] = E[:, 0, 0], E[:, 0, 1], E[:, 1, 1]
        if cfg.estimators:
            meas = generate_measurements(topo, channel, seed=s_meas)
            a = aml_estimate(meas, topo, cfg.aml_iters)
            q = sequential_estimate(meas, topo)
            t = topo.positions[ids]
            rows["err2_aml"] = np.sum((a.positions[ids] - t) ** 2, axis=1)
            rows["err2_seq"] = np.sum((q.positions[ids] - t) ** 2, axis=1)
            rows["hops"] = hop_layers(topo)[ids]
        rows["sweep_value"] = np.full(n, np.nan if value is None else float(value))
        rows["sweep_index"] = np.full(n, k_sweep)
        rows["snapshot"] = np.full(n, snap)
        out["rows"] = rows
        out["n_nodes"] = topo.n_nodes
        out["n_anchors"] = topo.n_anchors
        out["max_range"] = topo.max_range
    except Exception as exc:  # attached to the record; the run continues
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


# ---------------------------------------------------------------------------
# aggregation


def bin_edges(lo: float, hi: float, width: Optional[float] = None, count: Optional[int] = None) -> np.ndarray:
    if count is not None:
        return np.linspace(lo, hi, int(count) + 1)
    if not width or width <= 0:
        raise InvalidParameterError("bin width must be positive")
    n = max(int(math.ceil((hi - lo) / width - 1e-9)), 1)
    return lo + width * np.arange(n + 1)


def binned(table: Dict[str, np.ndarray], columns: Sequence[str], edges: np.ndarray, by: str = "dist",
           extra: Optional[Dict[str, Any]] = None) -> List[Dict[str, Any]]:
    """Per-bin means with snapshot-level standard errors.

    Agents in one snapshot share the network's error modes, so the standard
    error of a bin mean is computed from the per-snapshot bin means.
    """
    x = table[by]
    idx = np.searchsorted(edges, x, side="right") - 1
    idx[x == edges[-1]] = len(edges) - 2
    snaps = table["snapshot"]
    rows = []
    for k in range(len(edges) - 1):
        sel = idx == k
        if not sel.any():
            continue
        row = {"bin_lo": float(edges[k]), "bin_hi": float(edges[k + 1]),
               "bin_center": float(0.5 * (edges[k] + edges[k + 1])), "n_points": int(sel.sum()),
               "n_snapshots": int(len(np.unique(snaps[sel])))}
        if extra:
            row.update(extra)
        for c in columns:
            v = table[c][sel]
            good = np.isfinite(v)
            row[c] = float(v[good].mean()) if good.any() else float("nan")
            us = np.unique(snaps[sel & np.isfinite(table[c])])
            if len(us) > 1:
                per = np.array([table[c][sel & (snaps == s) & np.isfinite(table[c])].mean() for s in us])
                row[c + "_se"] = float(per.std(ddof=1) / np.sqrt(len(per)))
            else:
                row[c + "_se"] = float("nan")
            if c.startswith("err2"):
                row[c + "_outage"] = float(1.0 - good.sum() / sel.sum())
        rows.append(row)
    return rows


def _fit_dict(f) -> Dict[str, Any]:
    return {"slope": f.slope, "intercept": f.intercept, "r2": f.r2, "model": f.model, "n": f.n}


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> ExperimentResult:
    """Run every (sweep value, snapshot) pair and aggregate in fixed order."""
    cfg.validate()
    t0 = time.perf_counter()
    tasks = [(k, v, s) for k, v in enumerate(cfg.sweep_values()) for s in range(int(cfg.snapshots))]
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(lambda a: run_snapshot(cfg, *a), tasks))
    else:
        outs = [run_snapshot(cfg, *a) for a in tasks]
    outs.sort(key=lambda o: (o["sweep_index"], o["snapshot"]))
    errors = [{"sweep_index": o["sweep_index"], "sweep_value": o["sweep_value"], "snapshot": o["snapshot"],
               "error": o["error"]} for o in outs if "error" in o]
    good = [o for o in outs if "rows" in o]
    table: Dict[str, np.ndarray] = {}
    if good:
        for key in good[0]["rows"]:
            table[key] = np.concatenate([o["rows"][key] for o in good])
    res = ExperimentResult(cfg.name, table, errors=errors)
    res.meta = {"version": _version_stamp(), "schema": SCHEMA_VERSION, "config_hash": cfg.config_hash(),
                "seed": cfg.seed, "snapshots": cfg.snapshots, "config": cfg.to_dict(),
                "n_failed": len(errors), "wall_time_s": None}
    if good:
        res.meta["max_range"] = good[0]["max_range"]
        if cfg.cross_check:
            res.checks["cross_discrepancy_max"] = max(o.get("cross_discrepancy", 0.0) for o in good)
            res.checks["cross_path"] = good[0].get("cross_path")
        cols = ["speb", "dpeb_radial", "dpeb_tangential", "ellipse_a"]
        if cfg.estimators:
            cols += ["err2_aml", "err2_seq"]
        hi = cfg.bins.get("hi")
        hi = float(hi) if hi is not None else 0.5 * _max_diameter(cfg)
        edges = bin_edges(float(cfg.bins.get("lo", 0.0)), hi, cfg.bins.get("width"), cfg.bins.get("count"))
        curve, interior = [], []
        for k, v in enumerate(cfg.sweep_values()):
            sub = {c: a[table["sweep_index"] == k] for c, a in table.items()}
            if len(sub["speb"]) == 0:
                continue
            curve += binned(sub, cols, edges, extra={"sweep_value": v})
            diam = float(_point_params(cfg, v)[0]["diameter"])
            m = sub["radius"] < (1 - cfg.interior_eps) * diam / 2
            fin = m & np.isfinite(sub["speb"])
            interior.append({"sweep_value": v, "speb_mean": float(sub["speb"][fin].mean()) if fin.any() else float("nan"),
                             "n_points": int(fin.sum()), "n_infinite": int((m & ~np.isfinite(sub["speb"])).sum())})
        res.curves["bins"] = curve
        res.curves["interior"] = interior
    res.meta["wall_time_s"] = time.perf_counter() - t0
    return res


def _max_diameter(cfg: ScenarioConfig) -> float:
    if cfg.sweep.get("variable") == "net_diameter":
        return float(max(cfg.sweep["values"]))
    return float(cfg.topology["diameter"])


def fit_points(table: Dict[str, np.ndarray], column: str, model: str, lo: float, hi: float,
               by: str = "dist", transform=None, min_points: int = 8):
    """Fit ``column`` against ``by`` over agents in ``[lo, hi]``."""
    m = (table[by] >= lo) & (table[by] <= hi) & np.isfinite(table[column])
    y = table[column][m]
    if transform is not None:
        y = transform(y)
    return asymptote_fit(table[by][m], model, y=y, min_points=min_points)


def fit_curve(rows: List[Dict[str, Any]], column: str, model: str, x: str = "bin_center", min_points: int = 8):
    xs = np.array([r[x] for r in rows], float)
    ys = np.array([r[column] for r in rows], float)
    ok = np.isfinite(ys)
    return asymptote_fit(xs[ok], model, y=ys[ok], min_points=min_points)


def strictly_increasing(values) -> bool:
    v = np.asarray(values, float)
    return bool(len(v) >= 2 and np.all(np.isfinite(v)) and np.all(np.diff(v) > 0))


# ---------------------------------------------------------------------------
# figure recipes


def _scaled(scale: float):
    if not 0 < scale <= 1:
        raise InvalidParameterError("scale must lie in (0, 1]")
    return 2000.0 * scale, max(1, int(round(400 * scale)))


def figure_configs(which: str, scale: float = 0.25, seed: int = 0, snapshots: Optional[int] = None,
                   n_t: Optional[int] = None) -> Dict[str, ScenarioConfig]:
    """Scenario configs behind a figure, keyed by series label.

    ``scale`` shrinks the network diameter (2000 m at scale 1) and the
    snapshot count (400 at scale 1).
    """
    which = _FIG_ALIASES.get(which, which)
    if which not in FIGURES:
        raise InvalidParameterError(f"unknown figure {which!r}; choose from {FIGURES}")
    D, n_snap = _scaled(scale)
    if snapshots is not None:
        n_snap = int(snapshots)
    R = RadioParams().max_range
    lat = {"kind": "lattice", "diameter": D, "spacing": 20.0}
    sto = {"kind": "stochastic", "diameter": D, "density": 2.5e-3}
    fit_bins = {"lo": 2 * R, "hi": 0.35 * D, "count": 8}
    if which in ("fig4", "fig7-gamma") and 0.35 * D <= 2 * R:
        raise InvalidParameterError(f"fit window [{2 * R:.1f}, {0.35 * D:.1f}] m is empty at scale {scale}")
    out: Dict[str, ScenarioConfig] = {}
    if which == "fig4":
        out["lattice"] = ScenarioConfig(f"{which}-lattice", lat, {"antennas_per_node": n_t or 3}, bins=fit_bins, seed=seed)
        out["stochastic"] = ScenarioConfig(f"{which}-stochastic", sto, {"antennas_per_node": n_t or 3},
                                           bins=fit_bins, snapshots=n_snap, seed=seed)
    elif which == "fig5/6-holes":
        c = 0.2 * D
        holes = [[c, c, 0.0], [c, -c, 0.0], [-c, c, 0.0], [-c, -c, 0.0]]
        out["holes"] = ScenarioConfig(f"{which}", dict(sto, holes=holes), {"antennas_per_node": n_t or 3},
                                      sweep={"variable": "hole_radius", "values": [0.0, 0.05 * D, 0.1 * D]},
                                      bins={"lo": 0.0, "hi": 0.5 * D, "width": 0.025 * D},
                                      snapshots=n_snap, seed=seed)
    elif which == "fig6-density":
        D6 = 1.2 * D
        pitches = [40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 200.0]
        dens = sorted(p ** -2 for p in pitches)
        for lab, topo, scheme, ns in (("lattice", dict(lat, diameter=D6), "lattice-uniform", 1),
                                      ("stochastic", dict(sto, diameter=D6), "binomial", n_snap)):
            out[lab] = ScenarioConfig(f"{which}-{lab}", topo, {"antennas_per_node": n_t or 1},
                                      anchors={"scheme": scheme, "density": dens[0]},
                                      sweep={"variable": "anchor_density", "values": dens},
                                      bins={"lo": 0.0, "hi": 0.5 * D6, "width": 20.0},
                                      snapshots=ns, seed=seed)
    elif which == "fig7-gamma":
        out["lattice"] = ScenarioConfig(f"{which}", lat, {"antennas_per_node": n_t or 2},
                                        sweep={"variable": "path_loss_exponent", "values": [3.0, 3.25, 3.5]},
                                        bins=fit_bins, seed=seed)
    elif which == "fig8-concentric":
        out["lattice"] = ScenarioConfig(f"{which}", lat, {"antennas_per_node": n_t or 1},
                                        anchors={"scheme": "concentric-offsets"}, distance_ref="anchor-centroid",
                                        bins={"lo": 40.0, "hi": 0.35 * D, "count": 8}, seed=seed)
    elif which == "fig9-ellipses":
        pts = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]]
        for lab, topo, ns in (("lattice", lat, 1), ("stochastic", sto, 1)):
            out[lab] = ScenarioConfig(f"{which}-{lab}", topo, {"antennas_per_node": n_t or 1},
                                      anchors={"scheme": "explicit", "points": pts}, distance_ref="anchor-centroid",
                                      bins={"lo": 40.0, "hi": 0.35 * D, "count": 8}, snapshots=ns, seed=seed)
    else:
        De = 0.8 * D
        out["estimators"] = ScenarioConfig(f"{which}", {"kind": "stochastic", "diameter": De, "density": 3e-3},
                                           channel={}, bins={"lo": 0.0, "hi": 0.5 * De, "width": 0.05 * De},
                                           snapshots=n_snap, seed=seed, estimators=True)
    return out


def reproduce_figure(which: str, scale: float = 0.25, seed: int = 0, threads: int = 1,
                     snapshots: Optional[int] = None, n_t: Optional[int] = None) -> ExperimentResult:
    """Data series of one figure plus its scaling-law fits and shape checks."""
    which = _FIG_ALIASES.get(which, which)
    cfgs = figure_configs(which, scale, seed, snapshots, n_t)
    t0 = time.perf_counter()
    parts = {lab: run_scenario(c, threads) for lab, c in cfgs.items()}
    res = ExperimentResult.merge(which, list(parts.values()), list(parts))
    D, _ = _scaled(scale)
    R = RadioParams().max_range
    try:
        _figure_analysis(which, parts, res, D, R)
    except InvalidParameterError as exc:
        res.errors.append({"analysis": str(exc)})
    res.meta["scale"] = scale
    res.meta["seed"] = seed
    res.meta["wall_time_s"] = time.perf_counter() - t0
    return res


def _figure_analysis(which, parts, res, D, R):
    lo, hi = 2 * R, 0.35 * D
    if which == "fig4":
        lat, sto = parts["lattice"], parts["stochastic"]
        res.fits["lattice:speb_log"] = _fit_dict(fit_points(lat.table, "speb", "log", lo, hi))
        res.fits["stochastic:speb_log"] = _fit_dict(fit_curve(sto.curves["bins"], "speb", "log"))
        for lab, p in parts.items():
            coarse = binned(p.table, ["speb"], bin_edges(lo, hi, count=5))
            res.curves[f"{lab}:monotone_bins"] = coarse
            res.checks[f"{lab}:monotone"] = strictly_increasing([r["speb"] for r in coarse])
        for lab, p in parts.items():
            res.curves[f"{lab}:profile"] = binned(p.table, ["speb"], bin_edges(0.0, 0.5 * D, width=10.0),
                                                  extra={"net_diameter": D})
    elif which == "fig5/6-holes":
        p = parts["holes"]
        rows = p.curves["bins"]
        base = {r["bin_center"]: r for r in rows if r["sweep_value"] == 0.0}
        thr = 0.15 * D
        ok = True
        for r in rows:
            if r["sweep_value"] > 0 and r["bin_center"] > thr and r["bin_center"] in base:
                b = base[r["bin_center"]]
                slack = 3 * math.hypot(r.get("speb_se", 0.0) or 0.0, b.get("speb_se", 0.0) or 0.0)
                ok &= r["speb"] + slack >= b["speb"]
        res.checks["holes_not_better"] = bool(ok)
        res.checks["threshold_m"] = thr
    elif which == "fig6-density":
        for lab, p in parts.items():
            rows = [r for r in p.curves["interior"] if np.isfinite(r["speb_mean"])]
            x = [1.0 / r["sweep_value"] for r in rows]
            if len(rows) >= 5:
                res.fits[f"{lab}:speb_vs_inv_density_log"] = _fit_dict(
                    asymptote_fit(x, "log", y=[r["speb_mean"] for r in rows], min_points=5))
    elif which == "fig7-gamma":
        p = parts["lattice"]
        slopes = []
        for k, g in enumerate(p.meta["config"]["sweep"]["values"]):
            sub = {c: a[p.table["sweep_index"] == k] for c, a in p.table.items()}
            f = fit_points(sub, "speb", "log", lo, hi)
            res.fits[f"lattice:gamma={g}:speb_log"] = _fit_dict(f)
            slopes.append(f.slope)
        res.checks["slopes"] = slopes
        res.checks["slope_increasing"] = strictly_increasing(slopes)
    elif which == "fig8-concentric":
        p = parts["lattice"]
        lo8, hi8 = 40.0, 0.35 * D
        res.fits["lattice:radial_log"] = _fit_dict(fit_points(p.table, "dpeb_radial", "log", lo8, hi8))
        res.fits["lattice:tangential_quadratic"] = _fit_dict(fit_points(p.table, "dpeb_tangential", "quadratic", lo8, hi8))
        rows = p.curves["bins"]
        ratio = [r["dpeb_tangential"] / r["dpeb_radial"] for r in rows]
        res.checks["ratio"] = ratio
        res.checks["ratio_increasing"] = strictly_increasing(ratio)
    elif which == "fig9-ellipses":
        for lab, p in parts.items():
            try:
                res.fits[f"{lab}:major_axis_linear"] = _fit_dict(fit_points(p.table, "ellipse_a", "linear", 40.0, 0.35 * D))
            except InvalidParameterError as exc:
                res.errors.append({"series": lab, "analysis": str(exc)})
    else:
        p = parts["estimators"]
        rows = p.curves["bins"]
        res.fits["estimators:aml_log"] = _fit_dict(fit_curve(rows, "err2_aml", "log"))
        res.fits["estimators:seq_linear"] = _fit_dict(fit_curve(rows, "err2_seq", "linear"))
        res.checks["aml_above_bound"] = bool(all(
            r["err2_aml"] + 3 * (r["err2_aml_se"] if np.isfinite(r["err2_aml_se"]) else 0.0) >= r["speb"] for r in rows))


# ---------------------------------------------------------------------------
# export

_BOUNDS_COLUMNS = ("agent_id", "x", "y", "dist_to_nearest_anchor", "speb", "dpeb_radial", "dpeb_tangential",
                   "ellipse_a", "ellipse_b", "ellipse_theta")
_ESTIMATOR_COLUMNS = ("bin_center_m", "mse_aml", "mse_seq", "speb_avg", "n_points", "outage_rate")


def _header(kind: str) -> str:
    return f"# coopbound {kind} v{SCHEMA_VERSION}\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(_header(kind))
        f.write(",".join(columns) + "\n")
        for r in rows:
            f.write(",".join(_fmt(r.get(c) if isinstance(r, dict) else c_) for c, c_ in
                             zip(columns, r if not isinstance(r, dict) else columns)) + "\n")
    return path


def bounds_rows(res: ExperimentResult):
    t = res.table
    for k in range(len(res)):
        yield {"agent_id": int(t["node_id"][k]), "x": t["x"][k], "y": t["y"][k],
               "dist_to_nearest_anchor": t["dist_to_nearest_anchor"][k], "speb": t["speb"][k],
               "dpeb_radial": t["dpeb_radial"][k], "dpeb_tangential": t["dpeb_tangential"][k],
               "ellipse_a": t["ellipse_a"][k], "ellipse_b": t["ellipse_b"][k],
               "ellipse_theta": t["ellipse_theta"][k]}


def estimator_rows(rows):
    for r in rows:
        yield {"bin_center_m": r["bin_center"], "mse_aml": r.get("err2_aml"), "mse_seq": r.get("err2_seq"),
               "speb_avg": r.get("speb"), "n_points": r.get("n_points"),
               "outage_rate": r.get("err2_seq_outage", 0.0)}


def svg_ellipses(res: ExperimentResult, path, series: Optional[str] = None, snapshot: int = 0,
                 scale: float = 1.0, max_axis: Optional[float] = None) -> Path:
    """Error ellipses ``(x - p)^T J (x - p) = 1`` over node positions.

    One ``<ellipse>`` per agent with finite axes; semi-axes are the EFIM
    eigenvalues to the power -1/2 (times ``scale``).
    """
    t = res.table
    m = t["snapshot"] == snapshot
    if series is not None and "series" in t:
        m &= t["series"] == series
    idx = np.flatnonzero(m)
    if len(idx) == 0:
        raise InvalidParameterError("no agents to draw")
    x, y = t["x"][idx], -t["y"][idx]
    a, b, th = t["ellipse_a"][idx] * scale, t["ellipse_b"][idx] * scale, t["ellipse_theta"][idx]
    pad = 10.0
    x0, x1, y0, y1 = x.min() - pad, x.max() + pad, y.min() - pad, y.max() + pad
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.3f} {y0:.3f} {x1 - x0:.3f} {y1 - y0:.3f}">',
             f'<!-- coopbound ellipses v{SCHEMA_VERSION} -->']
    for k in range(len(idx)):
        lines.append(f'<circle cx="{x[k]:.3f}" cy="{y[k]:.3f}" r="0.8" fill="black"/>')
        if not (np.isfinite(a[k]) and np.isfinite(b[k])):
            continue
        if max_axis is not None and a[k] > max_axis:
            continue
        # svg y axis points down: mirror the orientation
        deg = -math.degrees(th[k])
        lines.append(f'<ellipse cx="{x[k]:.3f}" cy="{y[k]:.3f}" rx="{a[k]:.6g}" ry="{b[k]:.6g}" '
                     f'transform="rotate({deg:.4f} {x[k]:.3f} {y[k]:.3f})" fill="none" stroke="blue" '
                     f'stroke-width="0.3" data-agent="{int(t["node_id"][idx[k]])}"/>')
    lines.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def export_results(res: ExperimentResult, fmt: str = "csv", out_dir=".") -> List[Path]:
    """Write the result as versioned CSV files or an SVG ellipse overlay.

    Raises
    ------
    InvalidParameterError
        For an empty result (nothing is written) or an unknown format.
    OSError
        When the destination cannot be written.
    """
    if res.is_empty():
        raise InvalidParameterError("empty result; nothing to export")
    out_dir = Path(out_dir)
    stem = res.name.replace("/", "_")
    paths: List[Path] = []
    if fmt == "csv":
        if len(res):
            paths.append(write_csv(out_dir / f"{stem}_bounds.csv", _BOUNDS_COLUMNS, bounds_rows(res), "bounds"))
        for key, rows in res.curves.items():
            if not rows:
                continue
            name = key.replace(":", "_").replace("/", "_")
            if key.endswith("bins") and "err2_aml" in rows[0]:
                paths.append(write_csv(out_dir / f"{stem}_{name}_estimators.csv", _ESTIMATOR_COLUMNS,
                                       estimator_rows(rows), "estimators"))
            cols = list(dict.fromkeys(k for r in rows for k in r))
            paths.append(write_csv(out_dir / f"{stem}_{name}.csv", cols, rows, f"curve:{key}"))
        if res.fits:
            fit_rows = [dict(name=k, **v) for k, v in res.fits.items()]
            paths.append(write_csv(out_dir / f"{stem}_fits.csv", ["name", "model", "slope", "intercept", "r2", "n"],
                                   fit_rows, "fits"))
        return paths
    if fmt == "svg-ellipses":
        series = None
        if "series" in res.table:
            series = res.table["series"][0]
        paths.append(svg_ellipses(res, out_dir / f"{stem}_ellipses.svg", series=series))
        return paths
    raise InvalidParameterError(f"unknown export format {fmt!r}")
