"""Command-line driver: ``spectrum-quant <subcommand> [options]``.

Every run writes its CSV outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 input or validation error, 3 invariant breach.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import experiments as ex
from .grid import (ConfigError, InvariantError, aggregate, discretization_sweep, export_map,
                   grid_for_region)
from .sam import MECHANISMS, SamConfig
from .scenario import Scenario, ScenarioError, generate_topology, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3
TOTALS_FIELDS = ["quantity", "w_cell", "w_m2", "fraction"]

SWEEPS = {
    "quantify": {},
    "compare-sams": {"n": int},
    "recovery": {"sensitivity": float, "cap": float},
    "discretization": {"side": float},
    "estimate": {"density": int, "sigma": float},
    "enforce": {"sigma": float, "injected": float},
}
DEFAULT_SWEEPS = {
    "compare-sams": {"n": [4, 8, 12, 16, 20, 24, 28, 32]},
    "recovery": {"sensitivity": [-120.0, -110.0, -100.0, -90.0], "cap": [10.0, 15.0, 20.0, 25.0, 30.0]},
    "discretization": {"side": list(ex.DISCRETIZATION_SIDES)},
    "estimate": {"density": [1, 4, 16], "sigma": [6.0]},
    "enforce": {"sigma": [0.0, 6.0], "injected": [0.0, 10.0]},
}


class UsageError(ValueError):
    pass


def parse_sweeps(cmd: str, items) -> dict:
    allowed = SWEEPS[cmd]
    out = {}
    for item in items or []:
        name, sep, values = item.partition("=")
        if not sep or not values:
            raise UsageError(f"--sweep expects name=v1,v2,..., got {item!r}")
        if name not in allowed:
            raise UsageError(f"{cmd} has no sweep {name!r}; choose from {sorted(allowed) or 'none'}")
        try:
            out[name] = [allowed[name](v) for v in values.split(",") if v != ""]
        except ValueError:
            raise UsageError(f"bad value list for sweep {name!r}: {values!r}") from None
    return out


def _seeds(args) -> list:
    return [args.seed + i for i in range(args.seeds)]


def _mechanisms(args, default) -> list:
    names = [m for group in (args.mechanism or []) for m in group.split(",") if m] or list(default)
    for m in names:
        if m not in MECHANISMS:
            raise UsageError(f"unknown mechanism {m!r}; choose from {', '.join(MECHANISMS)}")
    return names


def _regrid(scenario: Scenario, side):
    if side is None:
        return scenario
    xmin, ymin, xmax, ymax = scenario.grid.bounds()
    return replace(scenario, grid=grid_for_region(xmin, ymin, xmax - xmin, ymax - ymin, side))


def _rows(dcs) -> list:
    return [asdict(d) for d in dcs]


def _fields(cls) -> list:
    return list(cls.__dataclass_fields__)


# ------------------------------------------------------------ subcommands

def cmd_quantify(args, sweeps, out: Path) -> dict:
    if not args.scenario:
        raise UsageError("quantify needs --scenario")
    sc = _regrid(load_scenario(args.scenario), args.side_m)
    totals, cmap = aggregate(sc.grid, sc.frame, sc)
    export_map(cmap, out / "map.csv")
    rows = [{"quantity": q, "w_cell": getattr(totals, q), "w_m2": totals.in_w_m2(q), "fraction": totals.fraction(q)}
            for q in ("total", "utilized", "forbidden", "available")]
    ex.write_rows(out / "totals.csv", rows, TOTALS_FIELDS)
    if args.render:
        _render(cmap, out)
    return {"outputs": ["map.csv", "totals.csv"] + (["map.png"] if args.render else [])}


def _render(cmap, out: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np
    xy = cmap.grid.centers
    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    for ax, (name, arr) in zip(axes, [("occupancy", cmap.occupancy), ("opportunity", cmap.opportunity),
                                     ("liability", cmap.liability)]):
        v = 10 * np.log10(np.maximum(np.abs(arr[0, 0]), 1e-30)) + 30
        sc = ax.scatter(xy[:, 0], xy[:, 1], c=v, s=8, marker="h", cmap="viridis")
        ax.set_title(f"{name} (dBm)")
        ax.set_aspect("equal")
        fig.colorbar(sc, ax=ax)
    fig.tight_layout()
    fig.savefig(out / "map.png", dpi=120)
    plt.close(fig)


def cmd_compare_sams(args, sweeps, out: Path) -> dict:
    mechs = _mechanisms(args, ("underlay", "overlay", "stov", "stppov"))
    rows = ex.compare_sams(mechs, sweeps["n"], _seeds(args))
    ex.write_rows(out / "sam_metrics.csv", rows, ex.COMPARE_FIELDS)
    return {"outputs": ["sam_metrics.csv"], "mechanisms": mechs}


def cmd_recovery(args, sweeps, out: Path) -> dict:
    sc = load_scenario(args.scenario) if args.scenario else generate_topology(ex.recovery_params(args.seed))
    sc = _regrid(sc, args.side_m)
    rows = ex.recovery_sweep(sc, sweeps["sensitivity"], sweeps["cap"])
    ex.write_rows(out / "recovery.csv", _rows(rows), _fields(ex.RecoveryRow))
    return {"outputs": ["recovery.csv"]}


def cmd_discretization(args, sweeps, out: Path) -> dict:
    if args.scenario:
        sc = load_scenario(args.scenario)
        xmin, ymin, xmax, ymax = sc.grid.bounds()
        region = (xmin, ymin, xmax - xmin, ymax - ymin)
    else:
        sc, region = ex.discretization_scenario(), ex.DISCRETIZATION_REGION
    rows = []
    for r in discretization_sweep(sc, sweeps["side"], region):
        t = r.totals
        rows.append({"side_m": r.side, "cols": r.cols, "rows": r.rows, "cell_area_m2": t.cell_area_m2,
                     "total_w_m2": t.in_w_m2("total"), "utilized_w_m2": t.in_w_m2("utilized"),
                     "forbidden_w_m2": t.in_w_m2("forbidden"), "available_w_m2": t.in_w_m2("available"),
                     "forbidden_fraction": t.fraction("forbidden"), "available_fraction": t.fraction("available")})
    ex.write_rows(out / "discretization.csv", rows, list(rows[0]) if rows else ["side_m"])
    return {"outputs": ["discretization.csv"]}


def cmd_estimate(args, sweeps, out: Path) -> dict:
    rows = [ex.estimation_trial(s, n, sigma) for sigma in sweeps["sigma"] for n in sweeps["density"]
            for s in _seeds(args)]
    ex.write_rows(out / "estimation.csv", _rows(rows), _fields(ex.EstimationRow))
    return {"outputs": ["estimation.csv"]}


def cmd_enforce(args, sweeps, out: Path) -> dict:
    rows = [ex.enforcement_trial(s, sigma, inj) for sigma in sweeps["sigma"] for inj in sweeps["injected"]
            for s in _seeds(args)]
    ex.write_rows(out / "enforcement.csv", _rows(rows), _fields(ex.EnforcementRow))
    return {"outputs": ["enforcement.csv"]}


COMMANDS = {
    "quantify": cmd_quantify,
    "compare-sams": cmd_compare_sams,
    "recovery": cmd_recovery,
    "discretization": cmd_discretization,
    "estimate": cmd_estimate,
    "enforce": cmd_enforce,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectrum-quant", description="Quantify spectrum consumption and compare access mechanisms.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="scenario JSON file")
        s.add_argument("--seed", type=int, default=0, help="base seed")
        s.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds for sweeps")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--side-m", type=float, default=None, help="override the hex side (m)")
        s.add_argument("--mechanism", action="append", help="mechanism name(s), comma separated or repeated")
        s.add_argument("--sweep", action="append", metavar="NAME=V1,V2", help="sweep values for a parameter")
        s.add_argument("--render", action="store_true", help="also write heatmap PNGs (needs matplotlib)")
    return p


def _manifest(args, sweeps) -> dict:
    return {
        "subcommand": args.command,
        "scenario": args.scenario,
        "seed": args.seed,
        "seeds": args.seeds,
        "out": str(args.out),
        "overrides": {"side_m": args.side_m, "mechanism": args.mechanism, "sweeps": sweeps, "render": args.render},
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.side_m is not None and not (args.side_m > 0 and math.isfinite(args.side_m)):
            raise UsageError("--side-m must be a positive number")
        if args.seeds < 0:
            raise UsageError("--seeds must be non-negative")
        sweeps = {**DEFAULT_SWEEPS.get(args.command, {}), **parse_sweeps(args.command, args.sweep)}
        if args.mechanism and args.command != "compare-sams":
            SamConfig(args.mechanism[0].split(",")[0])
        out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[args.command](args, sweeps, out)
        manifest = {**_manifest(args, sweeps), **info}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except InvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, ScenarioError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
