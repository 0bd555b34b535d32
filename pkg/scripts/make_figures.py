"""Run every sweep through the CLI and plot the resulting CSVs.

    python3 scripts/make_figures.py --out runs/figures --seeds 20

Plots need matplotlib; without it only the CSVs are written.
"""
import argparse
import csv
import importlib.util
from collections import defaultdict
from pathlib import Path

from spectrum_quant import cli

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mean_by(rows, key, value, group=None):
    acc = defaultdict(list)
    for r in rows:
        acc[(r[group] if group else "", float(r[key]))].append(float(r[value]))
    out = defaultdict(list)
    for (g, k), v in sorted(acc.items()):
        out[g].append((k, sum(v) / len(v)))
    return out


def plot(series, xlabel, ylabel, path, logx=False):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in series.items():
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name or None)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if any(series):
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/figures"))
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    out = args.out
    seeds = ["--seeds", str(args.seeds)]
    runs = {
        "quantify": ["quantify", "--scenario", str(SCENARIOS / "single_link.json"), "--render"],
        "compare": ["compare-sams", *seeds],
        "recovery": ["recovery"],
        "discretization": ["discretization"],
        "estimate": ["estimate", *seeds],
        "enforce": ["enforce", *seeds],
    }
    for name, argv in runs.items():
        code = cli.main(argv + ["--out", str(out / name)])
        print(f"{name}: exit {code}")
        if code:
            return code
    if importlib.util.find_spec("matplotlib") is None:
        print("matplotlib not installed; skipping plots")
        return 0
    rows = read(out / "compare" / "sam_metrics.csv")
    plot(mean_by(rows, "n_secondary", "n_scheduled", "mechanism"), "secondary networks", "admitted",
         out / "admitted.png")
    plot(mean_by(rows, "n_secondary", "pct_available", "mechanism"), "secondary networks", "available (%)",
         out / "available.png")
    rows = read(out / "recovery" / "recovery.csv")
    plot(mean_by(rows, "max_su_power_dbm", "pct_recovered", "sensitivity_dbm"), "SU power cap (dBm)",
         "recovered (%)", out / "recovery.png")
    rows = read(out / "discretization" / "discretization.csv")
    plot(mean_by(rows, "side_m", "available_w_m2"), "hex side (m)", "available (W m^2)",
         out / "discretization.png", logx=True)
    rows = read(out / "estimate" / "estimation.csv")
    plot(mean_by(rows, "sensors_per_section", "mean_db_error"), "sensors per section", "mean map error (dB)",
         out / "estimation.png")
    print(f"figures in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
