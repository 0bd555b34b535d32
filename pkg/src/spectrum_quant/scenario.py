"""Scenario definition, JSON ingestion and seeded topology generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .core import (THERMAL_NOISE_6MHZ_DBM, Antenna, PowerBounds, PropagationModel, ReceiverSpec,
                   TransmitterSpec, aim, db_to_ratio, dbm_to_watt, watt_to_dbm)
from .grid import HexGrid, SpectrumFrame, grid_for_region

SCHEMA_VERSION = 1
SCHEMA_PATH = Path(__file__).with_name("scenario.schema.json")


class ScenarioError(ValueError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


@dataclass(frozen=True)
class Network:
    id: str
    role: str
    transmitter: TransmitterSpec
    receivers: tuple = ()
    range_m: float = math.inf
    bands: Optional[tuple] = None
    quanta: Optional[tuple] = None

    def __post_init__(self):
        if self.role not in ("primary", "secondary"):
            raise ScenarioError(f"network {self.id}: role must be primary or secondary")
        object.__setattr__(self, "receivers", tuple(self.receivers))
        for rx in self.receivers:
            if rx.served_by != self.transmitter.id:
                raise ScenarioError(f"receiver {rx.id} served_by {rx.served_by!r} does not resolve in network {self.id}")
            d = math.dist(rx.location, self.transmitter.location)
            if d > self.range_m * (1 + 1e-9) + 1e-9:
                raise ScenarioError(f"receiver {rx.id} lies {d:.1f} m from its transmitter, beyond range {self.range_m}")

    def active_in(self, quantum: int, band: int) -> bool:
        return (self.bands is None or band in self.bands) and (self.quanta is None or quantum in self.quanta)

    def with_power(self, tx_power: float) -> "Network":
        return replace(self, transmitter=replace(self.transmitter, tx_power=tx_power))


@dataclass(frozen=True)
class Scenario:
    grid: HexGrid
    networks: tuple = ()
    prop: PropagationModel = field(default_factory=PropagationModel)
    bounds: PowerBounds = field(default_factory=PowerBounds)
    frame: SpectrumFrame = field(default_factory=SpectrumFrame)
    ambient_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "networks", tuple(self.networks))
        ids = [n.id for n in self.networks]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate network ids")
        dev = [n.transmitter.id for n in self.networks] + [r.id for n in self.networks for r in n.receivers]
        if len(set(dev)) != len(dev):
            raise ScenarioError("duplicate transceiver ids")
        for n in self.networks:
            for dev in (n.transmitter, *n.receivers):
                if not self.grid.contains(dev.location):
                    raise ScenarioError(f"{dev.id} at {dev.location} lies outside the grid extent")

    @property
    def transmitters(self) -> list:
        return [n.transmitter for n in self.networks]

    @property
    def receivers(self) -> list:
        return [r for n in self.networks for r in n.receivers]

    def network(self, network_id: str) -> Network:
        for n in self.networks:
            if n.id == network_id:
                return n
        raise KeyError(network_id)

    def primaries(self) -> list:
        return [n for n in self.networks if n.role == "primary"]

    def secondaries(self) -> list:
        return [n for n in self.networks if n.role == "secondary"]

    def active(self, quantum: int = 0, band: int = 0):
        nets = [n for n in self.networks if n.active_in(quantum, band)]
        return [n.transmitter for n in nets], [r for n in nets for r in n.receivers]

    def with_networks(self, networks: Sequence[Network]) -> "Scenario":
        return replace(self, networks=tuple(networks))


# ---------------------------------------------------------------- file format

def _schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _antenna_from(d: Optional[dict], here, there) -> Antenna:
    if not d or d.get("mode", "omni") == "omni":
        return Antenna()
    bw = math.radians(d.get("beamwidth_deg", 60.0))
    side = d.get("sidelobe_gain", 0.0)
    bore = d.get("boresight_deg")
    angle = aim(here, there) if bore is None else math.radians(bore)
    return Antenna.sector(angle, bw, side)


def _centroid(points) -> tuple:
    pts = np.asarray(points, dtype=float)
    return tuple(pts.mean(axis=0))


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise ScenarioError(exc.message, _pointer(exc.absolute_path)) from None
    g = doc["grid"]
    grid = HexGrid(g["side_m"], g["cols"], g["rows"], tuple(g.get("origin_m", (0.0, 0.0))))
    fr = doc.get("frame", {})
    frame = SpectrumFrame(n_bands=fr.get("bands", 1), n_quanta=fr.get("quanta", 1),
                          band_width_hz=fr.get("band_width_hz", 6e6), quantum_s=fr.get("quantum_s", 10.0))
    bounds = PowerBounds(dbm_to_watt(doc.get("p_max_dbm", 30.0)), dbm_to_watt(doc.get("p_min_dbm", -200.0)))
    prop = PropagationModel(doc.get("alpha", 3.5))
    noise = doc.get("ambient_noise_dbm")
    ambient = 0.0 if noise is None else dbm_to_watt(noise)
    networks = []
    for i, nd in enumerate(doc["networks"]):
        here = f"/networks/{i}"
        td = nd["transmitter"]
        rxds = nd.get("receivers", [])
        tloc = tuple(td["location_m"])
        target = _centroid([r["location_m"] for r in rxds]) if rxds else tloc
        power = dbm_to_watt(td["tx_power_dbm"])
        if power > bounds.p_max:
            raise ScenarioError("tx power exceeds p_max", here + "/transmitter/tx_power_dbm")
        tx = TransmitterSpec(td["id"], tloc, power, _antenna_from(td.get("antenna"), tloc, target))
        rxs = []
        for j, rd in enumerate(rxds):
            if rd["served_by"] != tx.id:
                raise ScenarioError(f"served_by {rd['served_by']!r} does not resolve", f"{here}/receivers/{j}/served_by")
            rloc = tuple(rd["location_m"])
            sinr = rd.get("experienced_sinr_db")
            rxs.append(ReceiverSpec(
                rd["id"], rloc, db_to_ratio(rd["beta_min_db"]),
                dbm_to_watt(rd.get("noise_dbm", THERMAL_NOISE_6MHZ_DBM)), rd["served_by"],
                _antenna_from(rd.get("antenna"), rloc, tloc),
                None if sinr is None else db_to_ratio(sinr)))
        try:
            networks.append(Network(nd["id"], nd.get("role", "primary"), tx, tuple(rxs),
                                     nd.get("range_m", math.inf),
                                     tuple(nd["bands"]) if "bands" in nd else None,
                                     tuple(nd["quanta"]) if "quanta" in nd else None))
        except ScenarioError as exc:
            raise ScenarioError(str(exc).split(": ", 1)[-1], here) from None
    try:
        return Scenario(grid, tuple(networks), prop, bounds, frame, ambient)
    except ScenarioError as exc:
        raise ScenarioError(str(exc).split(": ", 1)[-1], "/networks") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(doc)


def _antenna_to(a: Antenna) -> dict:
    if a.mode == "omni":
        return {"mode": "omni"}
    return {"mode": "sector", "boresight_deg": math.degrees(a.boresight),
            "beamwidth_deg": math.degrees(a.beamwidth), "sidelobe_gain": a.sidelobe_gain}


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "grid": {"side_m": sc.grid.side, "cols": sc.grid.cols, "rows": sc.grid.rows,
                 "origin_m": list(sc.grid.origin)},
        "frame": {"bands": sc.frame.n_bands, "quanta": sc.frame.n_quanta,
                  "band_width_hz": sc.frame.band_width_hz, "quantum_s": sc.frame.quantum_s},
        "p_max_dbm": watt_to_dbm(sc.bounds.p_max),
        "p_min_dbm": watt_to_dbm(sc.bounds.p_min),
        "alpha": sc.prop.alpha,
        "ambient_noise_dbm": watt_to_dbm(sc.ambient_noise) if sc.ambient_noise > 0 else None,
        "networks": [],
    }
    for n in sc.networks:
        t = n.transmitter
        nd = {"id": n.id, "role": n.role,
              "transmitter": {"id": t.id, "location_m": list(t.location), "tx_power_dbm": watt_to_dbm(t.tx_power),
                              "antenna": _antenna_to(t.antenna)},
              "receivers": []}
        if math.isfinite(n.range_m):
            nd["range_m"] = n.range_m
        if n.bands is not None:
            nd["bands"] = list(n.bands)
        if n.quanta is not None:
            nd["quanta"] = list(n.quanta)
        for r in n.receivers:
            rd = {"id": r.id, "location_m": list(r.location), "served_by": r.served_by,
                  "beta_min_db": 10 * math.log10(r.beta_min), "noise_dbm": watt_to_dbm(r.noise),
                  "antenna": _antenna_to(r.antenna)}
            if r.experienced_sinr is not None:
                rd["experienced_sinr_db"] = 10 * math.log10(r.experienced_sinr)
            nd["receivers"].append(rd)
        doc["networks"].append(nd)
    return doc


def save_scenario(sc: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(sc), indent=2, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------ random topologies

@dataclass(frozen=True)
class PrimaryParams:
    tx_power_dbm: float = 30.0
    range_m: float = 500.0
    n_receivers: int = 6
    receiver_radius_m: Optional[float] = None
    beta_min_db: float = 10.0
    experienced_sinr_db: Optional[float] = 20.0
    directional: bool = True


@dataclass(frozen=True)
class TopologyParams:
    width_m: float
    height_m: float
    n_secondary: int
    su_range_m: float
    seed: int
    pu: Optional[PrimaryParams] = None
    su_range_min_m: Optional[float] = None
    rx_per_network: int = 1
    rx_at_range: bool = False
    su_power_dbm: float = 30.0
    su_beta_min_db: float = 3.0
    noise_dbm: float = THERMAL_NOISE_6MHZ_DBM
    alpha: float = 3.5
    side_m: float = 100.0
    beamwidth_deg: float = 60.0
    directional: bool = True

    def __post_init__(self):
        if self.n_secondary < 0 or self.rx_per_network < 0:
            raise ScenarioError("counts must be non-negative")
        if self.seed is None:
            raise ScenarioError("seed is mandatory")


def _network_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, k]))


def _point_in_disc(rng, center, radius, region, at_radius=False, tries=1000):
    xmin, ymin, xmax, ymax = region
    for _ in range(tries):
        r = radius if at_radius else radius * math.sqrt(rng.random())
        th = 2 * math.pi * rng.random()
        p = (center[0] + r * math.cos(th), center[1] + r * math.sin(th))
        if xmin <= p[0] <= xmax and ymin <= p[1] <= ymax:
            return p
    raise ScenarioError(f"cannot place a receiver within {radius} m of {center} inside the region")


def generate_topology(params: TopologyParams) -> Scenario:
    """Seeded random scenario: optional primary at the centre, uniform secondary networks.

    Each network draws from its own stream ``SeedSequence([seed, k])`` so
    adding networks leaves earlier ones untouched.
    """
    p = params
    region = (0.0, 0.0, p.width_m, p.height_m)
    grid = grid_for_region(0.0, 0.0, p.width_m, p.height_m, p.side_m)
    noise = dbm_to_watt(p.noise_dbm)
    bw = math.radians(p.beamwidth_deg)
    networks = []
    if p.pu is not None:
        pu = p.pu
        radius = pu.range_m if pu.receiver_radius_m is None else pu.receiver_radius_m
        if 2 * pu.range_m > min(p.width_m, p.height_m):
            raise ScenarioError(f"primary range {pu.range_m} m does not fit the {p.width_m}x{p.height_m} m region")
        c = (p.width_m / 2, p.height_m / 2)
        tx = TransmitterSpec("pu-tx", c, dbm_to_watt(pu.tx_power_dbm))
        rxs = []
        for k in range(pu.n_receivers):
            th = 2 * math.pi * k / pu.n_receivers
            loc = (c[0] + radius * math.cos(th), c[1] + radius * math.sin(th))
            ant = Antenna.sector(aim(loc, c), bw) if pu.directional else Antenna()
            sinr = None if pu.experienced_sinr_db is None else db_to_ratio(pu.experienced_sinr_db)
            rxs.append(ReceiverSpec(f"pu-rx{k}", loc, db_to_ratio(pu.beta_min_db), noise, tx.id, ant, sinr))
        networks.append(Network("pu", "primary", tx, tuple(rxs), pu.range_m))
    if p.su_range_m > max(p.width_m, p.height_m):
        raise ScenarioError(f"secondary range {p.su_range_m} m exceeds the region")
    width = len(str(max(p.n_secondary - 1, 0)))
    for k in range(p.n_secondary):
        rng = _network_rng(p.seed, k)
        loc = (p.width_m * rng.random(), p.height_m * rng.random())
        rng_lo = p.su_range_min_m
        rmax = p.su_range_m if rng_lo is None else rng_lo + (p.su_range_m - rng_lo) * rng.random()
        name = f"su{k:0{width}d}"
        rlocs = [_point_in_disc(rng, loc, rmax, region, p.rx_at_range) for _ in range(p.rx_per_network)]
        target = _centroid(rlocs) if rlocs else loc
        tant = Antenna.sector(aim(loc, target), bw) if p.directional else Antenna()
        tx = TransmitterSpec(f"{name}-tx", loc, dbm_to_watt(p.su_power_dbm), tant)
        rxs = tuple(
            ReceiverSpec(f"{name}-rx{j}", rl, db_to_ratio(p.su_beta_min_db), noise, tx.id,
                         Antenna.sector(aim(rl, loc), bw) if p.directional else Antenna())
            for j, rl in enumerate(rlocs))
        networks.append(Network(name, "secondary", tx, rxs, rmax))
    return Scenario(grid, tuple(networks), PropagationModel(p.alpha))


def reproduction_grid() -> HexGrid:
    """676 cells of side 100 m, first centroid at the origin."""
    return HexGrid(100.0, 26, 26, (0.0, 0.0))

