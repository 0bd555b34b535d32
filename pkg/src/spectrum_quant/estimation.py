"""Sensor-based estimation: synthetic measurements, per-section propagation fits,
and estimated occupancy / opportunity maps.

Measurements are attributed per transmitter (separation of co-channel signals
is assumed to happen upstream).  Each section fits ``y = s - alpha * x`` with
``x = 10 log10(d)`` and ``y = 10 log10(P_meas / (P_t * A_tx))`` over the known
transmitters.  A transmitter's power is then back-solved from the sensors of
the section holding its nearest observing sensor (averaged in dB) and forward
modelled onto every cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import PowerBounds, PropagationModel, ReceiverSpec, TransmitterSpec, consumption_at, distance
from .grid import ConsumptionMap, HexGrid, SpectrumFrame

CONFIDENT = 1.0
FALLBACK = 0.5
UNOBSERVED = 0.0
ALPHA_RANGE = (1.0, 8.0)  # fits outside this are treated as underdetermined
DB_FLOOR_W = 1e-30  # power floor when comparing maps in dB


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class Sensor:
    id: str
    location: tuple
    section: int


@dataclass
class SensorGrid:
    """Rectangular unit-sections tiling the grid bounds, each holding at least one sensor."""

    grid: HexGrid
    block: int
    sections: np.ndarray  # (n, 4) rows of xmin, ymin, xmax, ymax
    shape: tuple  # (nx, ny); section index = ix * ny + iy
    sensors: list = field(default_factory=list)

    def __post_init__(self):
        have = {s.section for s in self.sensors}
        missing = [k for k in range(len(self.sections)) if k not in have]
        if missing:
            raise EstimationError(f"sections without a sensor: {missing[:5]}")

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    @property
    def locations(self) -> np.ndarray:
        return np.array([s.location for s in self.sensors], dtype=float)

    def section_of(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xmin, ymin, _, _ = self.grid.bounds()
        w = self.block * self.grid.col_pitch
        h = self.block * self.grid.row_pitch
        nx, ny = self.shape
        ix = np.clip(np.floor((pts[:, 0] - xmin) / w).astype(int), 0, nx - 1)
        iy = np.clip(np.floor((pts[:, 1] - ymin) / h).astype(int), 0, ny - 1)
        return ix * ny + iy


def section_rects(grid: HexGrid, block: int = 4) -> tuple:
    """Rectangles covering ``block`` x ``block`` hexes, clipped to the grid bounds."""
    if block < 1:
        raise EstimationError("section block must be >= 1")
    xmin, ymin, xmax, ymax = grid.bounds()
    nx = math.ceil(grid.cols / block)
    ny = math.ceil(grid.rows / block)
    w = block * grid.col_pitch
    h = block * grid.row_pitch
    rects = []
    for ix in range(nx):
        for iy in range(ny):
            rects.append((xmin + ix * w, ymin + iy * h, min(xmin + (ix + 1) * w, xmax), min(ymin + (iy + 1) * h, ymax)))
    return np.array(rects), (nx, ny)


def build_sensor_grid(grid: HexGrid, per_section: int, block: int = 4, layout: str = "lattice",
                      seed: int = 0) -> SensorGrid:
    """Deploy ``per_section`` sensors in every section.

    ``lattice`` places them at the cell centres of a k x k subdivision (k**2 must
    equal ``per_section``); ``random`` draws them uniformly per section.
    """
    if per_section < 1:
        raise EstimationError("need at least one sensor per section")
    rects, shape = section_rects(grid, block)
    sensors = []
    if layout == "lattice":
        k = math.isqrt(per_section)
        if k * k != per_section:
            raise EstimationError(f"lattice layout needs a square count, got {per_section}")
        frac = (np.arange(k) + 0.5) / k
        for s, (x0, y0, x1, y1) in enumerate(rects):
            for fx in frac:
                for fy in frac:
                    sensors.append(Sensor(f"s{s}-{len(sensors)}", (x0 + fx * (x1 - x0), y0 + fy * (y1 - y0)), s))
    elif layout == "random":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE57]))
        for s, (x0, y0, x1, y1) in enumerate(rects):
            xy = rng.uniform((x0, y0), (x1, y1), size=(per_section, 2))
            sensors += [Sensor(f"s{s}-{len(sensors)}", (float(x), float(y)), s) for x, y in xy]
    else:
        raise EstimationError(f"unknown layout {layout!r}")
    return SensorGrid(grid, block, rects, shape, sensors)


@dataclass(frozen=True)
class Measurement:
    sensor_id: str
    location: tuple
    section: int
    powers: dict  # transmitter id -> received power (W)
    noise_floor: float = 0.0

    def __post_init__(self):
        if any(p < 0 for p in self.powers.values()) or self.noise_floor < 0:
            raise EstimationError(f"sensor {self.sensor_id}: negative power")


def simulate_measurements(scenario, sensor_grid: SensorGrid, shadow_sigma_db: float, seed: int,
                          transmitters: Optional[Sequence[TransmitterSpec]] = None) -> list:
    """Received power at every sensor from every transmitter with i.i.d. log-normal shadowing."""
    txs = list(scenario.transmitters if transmitters is None else transmitters)
    locs = sensor_grid.locations
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AD0]))
    shadow = rng.normal(0.0, 1.0, size=(len(locs), len(txs))) * shadow_sigma_db
    true = np.zeros((len(locs), len(txs)))
    for j, tx in enumerate(txs):
        d = distance(tx.location, locs)
        true[:, j] = tx.tx_power * tx.antenna.gain_toward(tx.location, locs) * scenario.prop.gain(d)
    meas = true if shadow_sigma_db == 0 else true * 10.0 ** (shadow / 10.0)
    return [Measurement(s.id, s.location, s.section, {tx.id: float(meas[i, j]) for j, tx in enumerate(txs)},
                        scenario.ambient_noise)
            for i, s in enumerate(sensor_grid.sensors)]


@dataclass(frozen=True)
class SectionPropagationEstimate:
    section: int
    alpha_hat: float
    shadow_db: float
    n_samples: int
    underdetermined: bool = False

    def gain(self, d):
        """Estimated path gain including the section's shadowing offset."""
        return PropagationModel(self.alpha_hat).gain(d) * 10.0 ** (self.shadow_db / 10.0)


@dataclass(frozen=True)
class PropagationFit:
    sections: tuple
    region: SectionPropagationEstimate

    def regionwide(self) -> "PropagationFit":
        """The region fit applied to every section."""
        r = self.region
        return PropagationFit(tuple(SectionPropagationEstimate(k, r.alpha_hat, r.shadow_db, r.n_samples)
                                    for k in range(len(self.sections))), r)

    def for_points(self, sensor_grid: SensorGrid, points) -> list:
        return [self.sections[k] for k in sensor_grid.section_of(points)]


def _samples(measurements: Sequence[Measurement], known: Sequence[TransmitterSpec]):
    rows = []
    for m in measurements:
        for tx in known:
            p = m.powers.get(tx.id, 0.0)
            d = distance(tx.location, m.location)
            a = tx.antenna.gain_toward(tx.location, m.location)
            if p > 0 and d > 1.0 and a > 0:
                rows.append((m.section, 10 * math.log10(d), 10 * math.log10(p / (tx.tx_power * a))))
    return rows


def _fit(section: int, x: np.ndarray, y: np.ndarray) -> Optional[SectionPropagationEstimate]:
    # loss is 0 dB at 1 m, so the line passes through the origin; the
    # shadowing offset is what the slope leaves behind on average
    if len(x) < 2:
        return None
    alpha = -float(np.dot(x, y) / np.dot(x, x))
    if not ALPHA_RANGE[0] <= alpha <= ALPHA_RANGE[1]:
        return None
    return SectionPropagationEstimate(section, alpha, float(np.mean(y + alpha * x)), len(x))


def estimate_propagation(measurements: Sequence[Measurement], known_txs: Sequence[TransmitterSpec],
                         sensor_grid: SensorGrid) -> PropagationFit:
    """Least-squares path-loss exponent and shadowing offset per section.

    Received dB relative to the known transmit power is regressed on
    ``10 log10(d)`` through the origin; the slope gives the exponent and the
    mean residual the shadowing offset.  Sections with fewer than two usable
    samples or an exponent outside ``ALPHA_RANGE`` are flagged and take the
    region-wide fit.
    """
    rows = _samples(measurements, known_txs)
    if not rows:
        raise EstimationError("no usable (distance, power) samples from known transmitters")
    sec = np.array([r[0] for r in rows])
    x = np.array([r[1] for r in rows])
    y = np.array([r[2] for r in rows])
    region = _fit(-1, x, y)
    if region is None:
        raise EstimationError("region-wide fit is underdetermined")
    out = []
    for k in range(sensor_grid.n_sections):
        mask = sec == k
        est = _fit(k, x[mask], y[mask])
        if est is None:
            est = SectionPropagationEstimate(k, region.alpha_hat, region.shadow_db, int(mask.sum()), True)
        out.append(est)
    return PropagationFit(tuple(out), region)


def exact_fit(sensor_grid: SensorGrid, alpha: float) -> PropagationFit:
    """Fit reflecting perfect knowledge of the propagation model."""
    region = SectionPropagationEstimate(-1, alpha, 0.0, 0)
    return PropagationFit(tuple(SectionPropagationEstimate(k, alpha, 0.0, 0) for k in range(sensor_grid.n_sections)),
                          region)


def estimate_tx_power(tx: TransmitterSpec, measurements: Sequence[Measurement], fit: PropagationFit,
                      pool: str = "section", k: int = 8) -> Optional[float]:
    """Back-solve the transmit power of ``tx`` from sensor readings.

    Only sensors inside the main lobe with a positive reading count.  With
    ``pool="section"`` the dB estimates of every observing sensor in the
    nearest observing sensor's section are averaged, ``"knn"`` averages the
    ``k`` nearest observing sensors and ``"nearest"`` uses the nearest alone.
    Returns ``None`` when no sensor observes ``tx``.
    """
    obs = [m for m in measurements if m.powers.get(tx.id, 0.0) > 0
           and tx.antenna.gain_toward(tx.location, m.location) > 0]
    if not obs:
        return None
    d = np.array([distance(tx.location, m.location) for m in obs])
    nearest = obs[int(np.argmin(d))]
    if pool == "nearest":
        chosen = [nearest]
    elif pool == "knn":
        chosen = [obs[i] for i in np.argsort(d, kind="stable")[:k]]
    elif pool == "section":
        chosen = [m for m in obs if m.section == nearest.section]
    else:
        raise EstimationError(f"unknown pooling {pool!r}")
    est_db = []
    for m in chosen:
        g = tx.antenna.gain_toward(tx.location, m.location) * fit.sections[m.section].gain(distance(tx.location, m.location))
        est_db.append(10 * math.log10(m.powers[tx.id] / g))
    return 10.0 ** (float(np.mean(est_db)) / 10.0)


@dataclass
class EstimatedMaps:
    cmap: ConsumptionMap
    confidence: np.ndarray  # same shape as the map arrays
    tx_power_hat: dict  # transmitter id -> back-solved power (W)

    @property
    def low_confidence(self) -> np.ndarray:
        return self.confidence[0, 0] < CONFIDENT


def _idw(points: np.ndarray, sensor_xy: np.ndarray, values: np.ndarray, k: int = 3) -> np.ndarray:
    d = np.hypot(points[:, None, 0] - sensor_xy[None, :, 0], points[:, None, 1] - sensor_xy[None, :, 1])
    k = min(k, len(sensor_xy))
    idx = np.argsort(d, axis=1)[:, :k]
    w = 1.0 / np.maximum(np.take_along_axis(d, idx, axis=1), 1.0)
    return (w * values[idx]).sum(axis=1) / w.sum(axis=1)


def estimate_maps(measurements: Sequence[Measurement], fit: PropagationFit,
                  declared_receivers: Sequence[ReceiverSpec], sensor_grid: SensorGrid,
                  transmitters: Sequence[TransmitterSpec], bounds: PowerBounds = PowerBounds(),
                  fusion_radius: Optional[float] = None, pool: str = "section", k: int = 8) -> EstimatedMaps:
    """Estimated occupancy, opportunity and liability on the sensor grid's cells.

    ``transmitters`` supplies locations and antennas only; their powers are
    re-estimated from the measurements.  Cells with no sensor within
    ``fusion_radius`` (default: a section diagonal) get an inverse-distance
    weighted occupancy from the 3 nearest sensors and confidence 0.5.  Cells in
    the main lobe of a transmitter no sensor observes get confidence 0.
    """
    grid = sensor_grid.grid
    pts = grid.centers
    n = grid.n_cells
    noise_floor = float(np.mean([m.noise_floor for m in measurements])) if measurements else 0.0
    cell_fit = fit.for_points(sensor_grid, pts)
    alpha_c = np.array([e.alpha_hat for e in cell_fit])
    shadow_c = 10.0 ** (np.array([e.shadow_db for e in cell_fit]) / 10.0)

    p_hat = {}
    omega = np.full(n, noise_floor)
    confidence = np.full(n, CONFIDENT)
    blind = np.zeros(n, dtype=bool)
    for tx in transmitters:
        p = estimate_tx_power(tx, measurements, fit, pool, k)
        if p is None:
            blind |= np.asarray(tx.antenna.gain_toward(tx.location, pts)) > 0
            continue
        p_hat[tx.id] = p
        d = distance(tx.location, pts)
        omega += p * tx.antenna.gain_toward(tx.location, pts) * np.where(d > 1.0, d, 1.0) ** -alpha_c * shadow_c

    if measurements:
        xy = np.array([m.location for m in measurements])
        radius = fusion_radius
        if radius is None:
            r = sensor_grid.sections[0]
            radius = math.hypot(r[2] - r[0], r[3] - r[1])
        nearest = np.min(np.hypot(pts[:, None, 0] - xy[None, :, 0], pts[:, None, 1] - xy[None, :, 1]), axis=1)
        far = nearest > radius
        if far.any():
            totals = np.array([math.fsum(m.powers.values()) + m.noise_floor for m in measurements])
            omega[far] = _idw(pts[far], xy, totals)
            confidence[far] = FALLBACK
    confidence[blind] = UNOBSERVED

    by_id = {t.id: t for t in transmitters}
    gamma = bounds.p_max - omega
    for rx in declared_receivers:
        est = fit.for_points(sensor_grid, rx.location)[0]
        prop = PropagationModel(est.alpha_hat)
        shade = 10.0 ** (est.shadow_db / 10.0)

        def rx_power(t):
            return (p_hat[t.id] * t.antenna.gain_toward(t.location, rx.location)
                    * rx.antenna.gain_toward(rx.location, t.location) * prop.gain(distance(t.location, rx.location)) * shade)

        if rx.experienced_sinr is not None:
            signal = rx.experienced_sinr * rx.noise
        elif rx.served_by in p_hat:
            signal = rx_power(by_id[rx.served_by])
        else:
            continue  # serving transmitter not observed: the receiver imposes nothing we can see
        agg = math.fsum(rx_power(by_id[t]) for t in p_hat if t != rx.served_by)
        im = max(0.0, signal / rx.beta_min - rx.noise)
        g = rx.antenna.gain_toward(rx.location, pts) * prop.gain(distance(rx.location, pts)) * shade
        with np.errstate(divide="ignore"):
            opp = np.where(g > 0, (im - agg) / np.where(g > 0, g, 1.0), np.inf)
        gamma = np.minimum(gamma, opp)
    phi = bounds.p_max - omega - gamma
    frame = SpectrumFrame()
    cmap = ConsumptionMap(grid, frame, omega[None, None], gamma[None, None], phi[None, None], bounds)
    return EstimatedMaps(cmap, confidence[None, None], p_hat)


@dataclass(frozen=True)
class MapError:
    mean_db: float
    max_db: float
    n_cells: int
    both_available: int
    neither_available: int
    disagree: int


def map_error(estimated: ConsumptionMap, truth: ConsumptionMap) -> MapError:
    """Occupancy error in dB and agreement on which cells have positive opportunity."""
    if estimated.grid != truth.grid or estimated.occupancy.shape != truth.occupancy.shape:
        raise EstimationError("maps are on different grids")
    a = 10 * np.log10(np.maximum(estimated.occupancy, DB_FLOOR_W))
    b = 10 * np.log10(np.maximum(truth.occupancy, DB_FLOOR_W))
    err = np.abs(a - b).ravel()
    ea = estimated.opportunity.ravel() > 0
    ta = truth.opportunity.ravel() > 0
    return MapError(float(np.mean(err)), float(np.max(err)), err.size,
                    int(np.sum(ea & ta)), int(np.sum(~ea & ~ta)), int(np.sum(ea != ta)))


def truth_map(scenario, grid: HexGrid) -> ConsumptionMap:
    """Ground-truth map of the scenario's transceivers on ``grid`` (single quantum and band)."""
    w, g, f = consumption_at(grid.centers, scenario.transmitters, scenario.receivers, scenario.prop,
                             scenario.bounds, scenario.ambient_noise)
    return ConsumptionMap(grid, SpectrumFrame(), w[None, None], g[None, None], f[None, None], scenario.bounds)
