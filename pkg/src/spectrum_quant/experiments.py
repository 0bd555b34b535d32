"""Experiment setups and sweeps: spectrum recovery, mechanism comparison, service range,
estimation accuracy and enforcement."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import THERMAL_NOISE_6MHZ_DBM, ReceiverSpec, TransmitterSpec, consumption_at, db_to_ratio, dbm_to_watt
from .estimation import build_sensor_grid, estimate_maps, estimate_propagation, map_error, simulate_measurements, truth_map
from .policy import VIOLATION, PolicyStore, check_conformance
from .sam import METRIC_FIELDS, SamConfig, evaluate, pu_detected, requests_for, schedule, sensing_radius
from .grid import grid_for_region
from .scenario import Network, PrimaryParams, Scenario, TopologyParams, generate_topology

THREADS_ENV = "SPECTRUM_QUANT_THREADS"


def n_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        return max(1, int(raw))
    return min(8, os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Order-preserving map over a thread pool capped by SPECTRUM_QUANT_THREADS."""
    items = list(items)
    workers = n_workers()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_rows(path, rows: Sequence[dict], fieldnames: Sequence[str]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


# ------------------------------------------------------------------ setups

def recovery_params(seed: int, n_secondary: int = 16, rx_per_network: int = 6,
                    su_range_m: float = 400.0) -> TopologyParams:
    """16 secondary networks of 1 tx + 6 rx (112 transceivers) over 4.3 km x 3.7 km, no primary."""
    return TopologyParams(4300.0, 3700.0, n_secondary, su_range_m, seed, pu=None,
                          rx_per_network=rx_per_network)


def comparison_params(n_secondary: int, seed: int) -> TopologyParams:
    """Active primary at the centre with six worst-case receivers at its 500 m range."""
    pu = PrimaryParams(tx_power_dbm=30.0, range_m=500.0, n_receivers=6,
                       beta_min_db=10.0, experienced_sinr_db=20.0)
    return TopologyParams(3900.0, 4500.0, n_secondary, 100.0, seed, pu=pu, su_range_min_m=10.0,
                          su_beta_min_db=3.0)


def incumbent_active_params(n_secondary: int, su_range_m: float, seed: int) -> TopologyParams:
    """Boosted 30 dBm primary whose six receivers sit at 250 m with known positions."""
    pu = PrimaryParams(tx_power_dbm=30.0, range_m=500.0, n_receivers=6, receiver_radius_m=250.0,
                       beta_min_db=10.0, experienced_sinr_db=None)
    return TopologyParams(3900.0, 4500.0, n_secondary, su_range_m, seed, pu=pu, su_beta_min_db=3.0)


# ------------------------------------------------------------------ recovery

@dataclass(frozen=True)
class RecoveryRow:
    sensitivity_dbm: float
    max_su_power_dbm: float
    n_permitted: int
    recovered_w_cell: float
    available_w_cell: float
    pct_recovered: float


def recovery_sweep(scenario, sensitivities_dbm: Sequence[float], max_su_powers_dbm: Sequence[float]) -> list:
    """Share of the available spectrum that opportunistic secondaries can harvest.

    A secondary network is permitted when its transmitter does not sense any
    primary.  It then covers the cells within ``min(range, decode radius)`` of
    its transmitter, where the decode radius is the distance at which the
    capped power falls to the sensitivity, and may use at most the capped power
    in each covered cell.
    """
    grid = scenario.grid
    pts = grid.centers
    prim = scenario.primaries()
    _, gamma, _ = consumption_at(pts, [n.transmitter for n in prim], [r for n in prim for r in n.receivers],
                                 scenario.prop, scenario.bounds, scenario.ambient_noise)
    open_cells = gamma > 0
    available = math.fsum(gamma[open_cells])
    rows = []
    for sens_dbm in sensitivities_dbm:
        sens = dbm_to_watt(sens_dbm)
        for cap_dbm in max_su_powers_dbm:
            cap = min(dbm_to_watt(cap_dbm), scenario.bounds.p_max)
            covered = np.zeros(grid.n_cells, dtype=bool)
            permitted = 0
            for net in scenario.secondaries():
                loc = net.transmitter.location
                if any(pu_detected(loc, p.transmitter, sens, scenario.prop) for p in prim):
                    continue
                permitted += 1
                radius = min(net.range_m, sensing_radius(cap, sens, scenario.prop.alpha))
                covered |= np.hypot(pts[:, 0] - loc[0], pts[:, 1] - loc[1]) <= radius
            recovered = math.fsum(np.minimum(cap, gamma)[covered & open_cells])
            rows.append(RecoveryRow(sens_dbm, cap_dbm, permitted, recovered, available,
                                    0.0 if available <= 0 else 100.0 * recovered / available))
    return rows


# ------------------------------------------------------- mechanism comparison

def run_mechanism(mechanism: str, scenario, **config_kw):
    config = SamConfig(mechanism, **config_kw)
    result = schedule(requests_for(scenario), config, scenario)
    return result, evaluate(config, scenario, scenario.grid, result)


def compare_sams(mechanisms: Sequence[str], n_values: Sequence[int], seeds: Sequence[int],
                 params_fn: Callable = comparison_params, **config_kw) -> list:
    """One SamMetrics row (as a dict) per (mechanism, n, seed)."""
    for m in mechanisms:
        SamConfig(m)
    work = [(n, s) for n in n_values for s in seeds]

    def one(item):
        n, seed = item
        sc = generate_topology(params_fn(n, seed))
        out = []
        for m in mechanisms:
            _, metrics = run_mechanism(m, sc, **config_kw)
            out.append({"mechanism": m, "n_secondary": n, "seed": seed, **_metrics_dict(metrics)})
        return out

    return [row for rows in parallel_map(one, work) for row in rows]


def _metrics_dict(metrics) -> dict:
    d = asdict(metrics)
    d.pop("mechanism")
    return d


COMPARE_FIELDS = ["mechanism", "n_secondary", "seed"] + [f for f in METRIC_FIELDS if f != "mechanism"]


@dataclass(frozen=True)
class RangeRow:
    mechanism: str
    range_m: float
    n_requests: int
    n_seeds: int
    mean_admitted: float


def range_sweep(mechanisms: Sequence[str], ranges: Sequence[float], n_requests: int,
                seeds: Sequence[int], params_fn: Callable = incumbent_active_params,
                **config_kw) -> tuple:
    """Mean admitted requests per (mechanism, range); also returns the per-seed rows."""
    for m in mechanisms:
        SamConfig(m)
    work = [(r, s) for r in ranges for s in seeds]

    def one(item):
        rng_m, seed = item
        sc = generate_topology(params_fn(n_requests, rng_m, seed))
        out = []
        for m in mechanisms:
            config = SamConfig(m, **config_kw)
            res = schedule(requests_for(sc), config, sc)
            out.append({"mechanism": m, "range_m": rng_m, "seed": seed, "n_scheduled": res.n_scheduled})
        return out

    per_seed = [row for rows in parallel_map(one, work) for row in rows]
    summary = []
    for m in mechanisms:
        for r in ranges:
            vals = [row["n_scheduled"] for row in per_seed if row["mechanism"] == m and row["range_m"] == r]
            summary.append(RangeRow(m, float(r), n_requests, len(vals), float(np.mean(vals)) if vals else 0.0))
    return summary, per_seed


# --------------------------------------------------- estimation / enforcement

@dataclass(frozen=True)
class EstimationRow:
    seed: int
    sensors_per_section: int
    shadow_sigma_db: float
    n_sensors: int
    mean_db_error: float
    max_db_error: float
    opportunity_disagreement: int
    low_confidence_cells: int


def estimation_trial(seed: int, sensors_per_section: int, shadow_sigma_db: float,
                     n_secondary: int = 8, block: int = 4) -> EstimationRow:
    """Estimate the comparison-setup maps from simulated sensors and score them against the truth.

    Every transmitter serves as a known-power reference for the propagation fit.
    """
    sc = generate_topology(comparison_params(n_secondary, seed))
    sg = build_sensor_grid(sc.grid, sensors_per_section, block)
    meas = simulate_measurements(sc, sg, shadow_sigma_db, seed)
    fit = estimate_propagation(meas, sc.transmitters, sg)
    est = estimate_maps(meas, fit, sc.receivers, sg, sc.transmitters, sc.bounds)
    err = map_error(est.cmap, truth_map(sc, sc.grid))
    return EstimationRow(seed, sensors_per_section, shadow_sigma_db, len(sg.sensors), err.mean_db, err.max_db,
                         err.disagree, int(est.low_confidence.sum()))


def density_sweep(densities: Sequence[int], seeds: Sequence[int], shadow_sigma_db: float = 6.0) -> list:
    work = [(s, n) for n in densities for s in seeds]
    return parallel_map(lambda w: estimation_trial(w[0], w[1], shadow_sigma_db), work)


@dataclass(frozen=True)
class EnforcementRow:
    seed: int
    shadow_sigma_db: float
    injected_db: float
    suspect: str
    verdict: str
    excess_db: float
    false_violations: int


def enforcement_trial(seed: int, shadow_sigma_db: float, injected_db: float, tolerance_db: float = 3.0,
                      n_secondary: int = 8, sensors_per_section: int = 16, pool: str = "knn",
                      k: int = 8, regionwide: bool = True) -> EnforcementRow:
    """Grant footprints under NSC-CX, let one holder transmit ``injected_db`` above its grant,
    then judge every holder from sensor-based estimates.

    The propagation fit uses the primary and the other holders as known-power
    references; the suspect is excluded from the fit.
    """
    sc = generate_topology(comparison_params(n_secondary, seed))
    store = PolicyStore(sc.with_networks(sc.primaries()), SamConfig("nsccx"))
    for req in requests_for(sc):
        store.request(req)
    records = sorted(store.records.values(), key=lambda r: r.id)
    if not records:
        raise RuntimeError(f"seed {seed}: no request admitted")
    suspect = records[0]
    actual = []
    for r in records:
        net = r.footprint.network()
        if r is suspect:
            net = net.with_power(r.footprint.tx_power * 10.0 ** (injected_db / 10.0))
        actual.append(net)
    world = sc.with_networks(sc.primaries() + actual)
    sg = build_sensor_grid(sc.grid, sensors_per_section)
    meas = simulate_measurements(world, sg, shadow_sigma_db, seed)
    refs = [t for t in world.transmitters if t.id != suspect.footprint.transmitter.id]
    fit = estimate_propagation(meas, refs, sg)
    if regionwide:
        fit = fit.regionwide()
    est = estimate_maps(meas, fit, world.receivers, sg, world.transmitters, sc.bounds, pool=pool, k=k)
    verdicts = {r.id: check_conformance(r, est, tolerance_db) for r in records}
    false = sum(1 for r in records if r is not suspect and verdicts[r.id].status == VIOLATION)
    v = verdicts[suspect.id]
    return EnforcementRow(seed, shadow_sigma_db, injected_db, suspect.id, v.status, v.excess_db, false)


# ------------------------------------------------------------ discretization

DISCRETIZATION_REGION = (0.0, 0.0, 1500.0, 900.0 * math.sqrt(3.0))
DISCRETIZATION_SIDES = (1.0, 2.0, 4.0, 5.0, 10.0, 20.0, 25.0, 50.0, 100.0)


def discretization_scenario(tx_power_dbm: float = 15.0, link_m: float = 20.0, beta_min_db: float = 6.0):
    """One link whose receiver sits on a vertex of the 100 m hexes near the region centre.

    Every region side in ``DISCRETIZATION_SIDES`` tiles the region exactly, and
    the receiver is 100 m from the three nearest 100 m cell centres, just
    beyond the roughly 80 m radius inside which it forbids transmission.
    """
    grid = grid_for_region(*DISCRETIZATION_REGION, 100.0)
    cx, cy = grid.center(5, 4)
    rx_at = (cx + grid.side, cy)
    tx = TransmitterSpec("tx", (rx_at[0] - link_m, rx_at[1]), dbm_to_watt(tx_power_dbm))
    rx = ReceiverSpec("rx", rx_at, db_to_ratio(beta_min_db), dbm_to_watt(THERMAL_NOISE_6MHZ_DBM), "tx")
    return Scenario(grid, (Network("link", "primary", tx, (rx,)),))
