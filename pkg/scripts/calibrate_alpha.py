"""Monte Carlo calibration of the per-section path-loss exponent fit.

    python3 scripts/calibrate_alpha.py --seeds 100 --sigma 4 --per-section 16
"""
import argparse

import numpy as np

from spectrum_quant import experiments as ex
from spectrum_quant.estimation import build_sensor_grid, estimate_propagation, simulate_measurements
from spectrum_quant.scenario import generate_topology


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--sigma", type=float, default=4.0)
    ap.add_argument("--per-section", type=int, default=16)
    ap.add_argument("--alpha", type=float, default=3.5)
    ap.add_argument("--tol", type=float, default=0.3)
    args = ap.parse_args()

    all_ok, share, worst, region = 0, [], [], []
    for seed in range(args.seeds):
        sc = generate_topology(ex.comparison_params(8, seed))
        sg = build_sensor_grid(sc.grid, args.per_section)
        fit = estimate_propagation(simulate_measurements(sc, sg, args.sigma, seed), sc.transmitters, sg)
        err = np.array([abs(e.alpha_hat - args.alpha) for e in fit.sections])
        all_ok += bool(np.all(err < args.tol))
        share.append(float(np.mean(err < args.tol)))
        worst.append(float(err.max()))
        region.append(abs(fit.region.alpha_hat - args.alpha))
    print(f"sigma {args.sigma} dB, {args.per_section} sensors/section, {args.seeds} seeds, tol {args.tol}")
    print(f"seeds with every section within tol: {all_ok}/{args.seeds}")
    print(f"sections within tol: {100 * np.mean(share):.2f}%")
    print(f"worst section error: {max(worst):.3f}, median per-seed worst {np.median(worst):.3f}")
    print(f"region-wide fit error: max {max(region):.4f}")


if __name__ == "__main__":
    main()
