"""Command-line entry point: ``coopbound <verb> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .eoc import eoc_decomposition, transition_operator
from .errors import ConvergenceError, InvalidParameterError, SingularNetworkError, SingularNPIError
from .experiments import (FIGURES, ExperimentResult, ScenarioConfig, build_snapshot, export_results,
                          reproduce_figure, run_scenario, snapshot_seed, write_csv)
from .spectral import NeighborStencil, characteristic_table, potential_profile
from .topology import RadioParams, write_topology_csv

log = logging.getLogger("coopbound")


def _load_config(args, **overrides) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def _out(args) -> Path:
    p = Path(args.out or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _columns(path, table, kind):
    cols = list(table)
    n = len(table[cols[0]])
    rows = ({c: table[c][k] for c in cols} for k in range(n))
    return write_csv(path, cols, rows, kind)


def cmd_gen(args):
    cfg = _load_config(args)
    values = cfg.sweep_values()
    topo, *_ = build_snapshot(cfg, values[0], snapshot_seed(cfg.seed, 0, args.snapshot))
    out = _out(args)
    write_topology_csv(topo, out / "nodes.csv", out / "edges.csv")
    print(f"{topo.n_nodes} nodes ({topo.n_anchors} anchors), {len(topo.edges)} links, "
          f"connected={topo.connected} -> {out}")


def cmd_bound(args):
    cfg = _load_config(args, bound_path=args.path, cross_check=args.cross_check or None)
    res = run_scenario(cfg, args.threads)
    _report(res)
    paths = export_results(res, "csv", _out(args))
    res.save(_out(args) / f"{res.name.replace('/', '_')}.json")
    print("\n".join(map(str, paths)))


def cmd_eoc(args):
    cfg = _load_config(args)
    topo, radio, *_ = build_snapshot(cfg, cfg.sweep_values()[0], snapshot_seed(cfg.seed, 0, args.snapshot))
    T = transition_operator(topo, radio, "agents-only")
    ids = topo.agent_ids if not args.agents else np.asarray(args.agents, int)
    rows = []
    for i in ids:
        d = eoc_decomposition(T, int(i), tol=args.tol)
        rows.append({"agent_id": int(i), "npi_xx": d.npi[0, 0], "npi_xy": d.npi[0, 1], "npi_yy": d.npi[1, 1],
                     "delta_xx": d.delta[0, 0], "delta_xy": d.delta[0, 1], "delta_yx": d.delta[1, 0],
                     "delta_yy": d.delta[1, 1], "eoc_eig_min": float(np.linalg.eigvals(d.eoc).real.min()),
                     "eoc_eig_max": float(np.linalg.eigvals(d.eoc).real.max()),
                     "speb": float(np.trace(np.linalg.inv(d.efim))),
                     "truncation_n": d.truncation_n, "truncation_residual": d.truncation_residual})
    path = write_csv(_out(args) / "eoc.csv", list(rows[0]), rows, "eoc")
    print(path)


def cmd_spectral(args):
    radio = RadioParams(**(ScenarioConfig.from_file(args.config).radio if args.config else {}))
    st = NeighborStencil.from_radio(args.spacing, radio)
    out = _out(args)
    p1 = _columns(out / "characteristic.csv", characteristic_table(st, args.grid), "characteristic")
    steps = np.arange(1, args.max_steps + 1)
    p2 = _columns(out / "potential.csv", potential_profile(st, steps), "potential")
    print(p1, p2, sep="\n")


def cmd_estimate(args):
    cfg = _load_config(args, estimators=True)
    res = run_scenario(cfg, args.threads)
    _report(res)
    paths = export_results(res, "csv", _out(args))
    print("\n".join(map(str, paths)))


def cmd_reproduce(args):
    res = reproduce_figure(args.figure, scale=args.scale, seed=args.seed or 0, threads=args.threads,
                           snapshots=args.snapshots, n_t=args.n_t)
    _report(res)
    out = _out(args)
    res.save(out / f"{res.name.replace('/', '_')}.json")
    paths = export_results(res, "csv", out)
    if args.figure.startswith("fig9"):
        paths += export_results(res, "svg-ellipses", out)
    print("\n".join(map(str, paths)))


def cmd_export(args):
    res = ExperimentResult.load(args.result)
    paths = export_results(res, args.format, _out(args))
    print("\n".join(map(str, paths)))


def _report(res: ExperimentResult):
    for k, f in res.fits.items():
        print(f"fit {k}: slope={f['slope']:.6g} intercept={f['intercept']:.6g} r2={f['r2']:.4f} n={f['n']}")
    for k, v in res.checks.items():
        if not isinstance(v, list):
            print(f"check {k}: {v}")
    for e in res.errors:
        log.warning("skipped: %s", e)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (YAML or JSON)")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="snapshot worker threads")
    common.add_argument("--scale", type=float, default=0.25, help="figure scale (1 = full size)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="coopbound",
                                description="Localization error bounds for cooperative networks.")
    p.add_argument("--version", action="version", version=f"coopbound {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a topology and write node/edge CSV")
    s.add_argument("--snapshot", type=int, default=0)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("bound", parents=[common], help="per-agent bounds for a scenario")
    s.add_argument("--path", choices=("direct", "series", "potential"), default=None)
    s.add_argument("--cross-check", action="store_true")
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("eoc", parents=[common], help="per-agent cooperation decomposition")
    s.add_argument("--snapshot", type=int, default=0)
    s.add_argument("--agents", type=int, nargs="*")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_eoc)

    s = sub.add_parser("spectral", parents=[common], help="infinite-lattice characteristic and potential")
    s.add_argument("--spacing", type=float, default=20.0)
    s.add_argument("--grid", type=int, default=65, help="points per axis of the characteristic table")
    s.add_argument("--max-steps", type=int, default=50)
    s.set_defaults(func=cmd_spectral)

    s = sub.add_parser("estimate", parents=[common], help="AML and sequential estimators vs the bound")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's data")
    s.add_argument("figure", help="one of " + ", ".join(FIGURES))
    s.add_argument("--snapshots", type=int, default=None)
    s.add_argument("--n-t", type=int, default=None, help="antennas per node override")
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("export", parents=[common], help="export a saved result")
    s.add_argument("result", help="result JSON written by bound/reproduce")
    s.add_argument("--format", choices=("csv", "svg-ellipses"), default="csv")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (InvalidParameterError, SingularNetworkError, SingularNPIError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
