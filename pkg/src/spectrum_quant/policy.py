"""Quantified spectrum-access policies: footprints, policy records and conformance checks."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Antenna, ReceiverSpec, TransmitterSpec, consumption_at
from .grid import HexGrid
from .sam import AccessRequest, SamConfig, schedule
from .scenario import Network

DEFAULT_TOLERANCE_DB = 3.0
CONFORMANT, VIOLATION, INDETERMINATE = "conformant", "violation", "indeterminate"
VERDICT_FIELDS = ["network_id", "status", "allocated_w", "estimated_w", "excess_db", "tolerance_db"]


@dataclass(frozen=True)
class Footprint:
    """Spectrum granted to one network: power, devices, bands, quanta and touched cells."""

    network_id: str
    tx_power: float
    transmitter: TransmitterSpec
    receivers: tuple
    bands: Optional[tuple]
    quanta: Optional[tuple]
    cells: tuple
    occupancy: tuple
    liability: tuple

    def network(self) -> Network:
        return Network(self.network_id, "secondary", self.transmitter, self.receivers,
                       bands=self.bands, quanta=self.quanta)

    def to_dict(self) -> dict:
        return {
            "network_id": self.network_id,
            "tx_power_w": self.tx_power,
            "transmitter": _device_dict(self.transmitter),
            "receivers": [_device_dict(r) for r in self.receivers],
            "bands": None if self.bands is None else list(self.bands),
            "quanta": None if self.quanta is None else list(self.quanta),
            "cells": list(self.cells),
            "occupancy_w": list(self.occupancy),
            "liability_w": list(self.liability),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Footprint":
        t = d["transmitter"]
        tx = TransmitterSpec(t["id"], tuple(t["location"]), t["tx_power"], Antenna(**t["antenna"]))
        rxs = tuple(ReceiverSpec(r["id"], tuple(r["location"]), r["beta_min"], r["noise"], r["served_by"],
                                 Antenna(**r["antenna"]), r.get("experienced_sinr")) for r in d["receivers"])
        return cls(d["network_id"], d["tx_power_w"], tx, rxs,
                   None if d["bands"] is None else tuple(d["bands"]),
                   None if d["quanta"] is None else tuple(d["quanta"]),
                   tuple(d["cells"]), tuple(d["occupancy_w"]), tuple(d["liability_w"]))


def _device_dict(dev) -> dict:
    d = asdict(dev)
    d["location"] = list(dev.location)
    return d


@dataclass(frozen=True)
class Rejection:
    request_id: str
    reason: str


@dataclass
class PolicyRecord:
    """A footprint plus its append-only event log; the status is replayed from the log."""

    footprint: Footprint
    _log: list = field(default_factory=lambda: [{"event": "granted"}])

    @property
    def id(self) -> str:
        return self.footprint.network_id

    @property
    def log(self) -> tuple:
        return tuple(dict(e) for e in self._log)

    @property
    def status(self) -> str:
        return replay(self._log)

    @property
    def violations(self) -> list:
        return [e for e in self._log if e["event"] == "violation"]

    def record_violation(self, verdict: "Verdict") -> None:
        if verdict.status != VIOLATION:
            raise ValueError("only violation verdicts are logged")
        self._log.append({"event": "violation", "excess_db": verdict.excess_db, "tolerance_db": verdict.tolerance_db})

    def revoke(self, reason: str = "") -> None:
        if self.status == "revoked":
            raise ValueError(f"policy {self.id} already revoked")
        self._log.append({"event": "revoked", "reason": reason})

    def to_json(self) -> str:
        return json.dumps({"footprint": self.footprint.to_dict(), "log": self._log}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolicyRecord":
        d = json.loads(text)
        replay(d["log"])
        return cls(Footprint.from_dict(d["footprint"]), list(d["log"]))


def replay(log: Sequence[dict]) -> str:
    """Final status implied by an event log; rejects logs that break the lifecycle."""
    if not log or log[0].get("event") != "granted":
        raise ValueError("policy log must start with a grant")
    status = "active"
    for e in log[1:]:
        ev = e.get("event")
        if ev == "granted":
            raise ValueError("policy granted twice")
        if ev == "revoked":
            if status == "revoked":
                raise ValueError("policy revoked twice")
            status = "revoked"
        elif ev != "violation":
            raise ValueError(f"unknown policy event {ev!r}")
    return status


def footprint_for(network: Network, power: float, scenario, grid: Optional[HexGrid] = None,
                  request: Optional[AccessRequest] = None) -> Footprint:
    """Quantify the allocation; cells touched are those where the network alone consumes above p_min."""
    grid = grid or scenario.grid
    net = network.with_power(power)
    omega, _, phi = consumption_at(grid.centers, [net.transmitter], list(net.receivers), scenario.prop,
                                   scenario.bounds, 0.0)
    touched = np.flatnonzero(omega + phi > scenario.bounds.p_min)
    return Footprint(net.id, float(power), net.transmitter, net.receivers,
                     None if request is None else request.bands, None if request is None else request.quanta,
                     tuple(int(i) for i in touched), tuple(float(omega[i]) for i in touched),
                     tuple(float(phi[i]) for i in touched))


def request_footprint(request: AccessRequest, sam_config: SamConfig, scenario, grid: Optional[HexGrid] = None):
    """Schedule one request against ``scenario`` (whose other networks are incumbents).

    Returns an active PolicyRecord or a Rejection carrying the mechanism's reason.
    """
    if request.id not in {n.id for n in scenario.networks}:
        scenario = scenario.with_networks(list(scenario.networks) + [request.network])
    result = schedule([request], sam_config, scenario, grid)
    if not result.admitted:
        return Rejection(request.id, result.rejected[0][1])
    _, power = result.admitted[0]
    return PolicyRecord(footprint_for(request.network, power, scenario, grid, request))


class PolicyStore:
    """Grants footprints sequentially; each grant is an incumbent for later requests."""

    def __init__(self, scenario, config: SamConfig, grid: Optional[HexGrid] = None):
        self.base = scenario
        self.config = config
        self.grid = grid or scenario.grid
        self.records: dict = {}

    def current(self):
        """The base scenario plus every active footprint at its granted power."""
        active = [r.footprint.network() for r in self.records.values() if r.status == "active"]
        return self.base.with_networks(list(self.base.networks) + active)

    def request(self, request: AccessRequest):
        if request.id in self.records:
            raise ValueError(f"network {request.id} already holds a policy")
        out = request_footprint(request, self.config, self.current(), self.grid)
        if isinstance(out, PolicyRecord):
            self.records[out.id] = out
        return out

    def enforce(self, verdict: "Verdict") -> None:
        if verdict.status == VIOLATION:
            self.records[verdict.network_id].record_violation(verdict)


@dataclass(frozen=True)
class Verdict:
    network_id: str
    status: str
    allocated_w: float
    estimated_w: float
    excess_db: float
    tolerance_db: float


def check_conformance(record: PolicyRecord, estimated, tolerance_db: float = DEFAULT_TOLERANCE_DB) -> Verdict:
    """Compare the transmit power back-solved in ``estimated`` (EstimatedMaps) with the grant.

    Only transmitters are judged; receiver deviations never raise a violation.
    A transmitter the estimate cannot attribute is indeterminate.
    """
    if not tolerance_db > 0:
        raise ValueError("tolerance_db must be positive")
    fp = record.footprint
    p_hat = estimated.tx_power_hat.get(fp.transmitter.id)
    if p_hat is None or not p_hat > 0:
        return Verdict(fp.network_id, INDETERMINATE, fp.tx_power, math.nan, math.nan, tolerance_db)
    excess = 10.0 * math.log10(p_hat / fp.tx_power)
    status = VIOLATION if excess > tolerance_db else CONFORMANT
    return Verdict(fp.network_id, status, fp.tx_power, p_hat, excess, tolerance_db)


def write_verdicts(path, verdicts: Sequence[Verdict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_FIELDS)
        for v in verdicts:
            w.writerow([v.network_id, v.status, repr(v.allocated_w), repr(v.estimated_w), repr(v.excess_db),
                        repr(v.tolerance_db)])
    return path
