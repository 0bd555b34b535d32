"""Point-level spectrum consumption: power units, antennas, and the
occupancy / opportunity / liability arithmetic.

All functions accept a single ``(x, y)`` point or an array of points with a
trailing dimension of 2; array inputs return arrays of matching leading shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

THERMAL_NOISE_6MHZ_DBM = -106.0


def dbm_to_watt(p_dbm):
    if np.ndim(p_dbm):
        return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return 10.0 ** ((float(p_dbm) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    arr = np.asarray(p_w, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"power must be positive to convert to dBm, got {p_w!r}")
    out = 10.0 * np.log10(arr) + 30.0
    return out if np.ndim(p_w) else float(out)


def db_to_ratio(x_db):
    return 10.0 ** (x_db / 10.0)


def ratio_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class PowerBounds:
    p_max: float = 1.0
    p_min: float = 1e-23

    def __post_init__(self):
        if not (self.p_max > self.p_min > 0):
            raise ValueError(f"need p_max > p_min > 0, got {self.p_max}, {self.p_min}")


def path_gain(d, alpha: float):
    """Large-scale path gain ``min(1, d**-alpha)``; distances below 1 m clamp to 1."""
    d = np.asarray(d, dtype=float)
    g = np.where(d > 1.0, d, 1.0) ** -alpha
    return g if g.ndim else float(g)


@dataclass(frozen=True)
class PropagationModel:
    alpha: float = 3.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"path-loss exponent must be positive, got {self.alpha}")

    def gain(self, d):
        return path_gain(d, self.alpha)


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class Antenna:
    mode: str = "omni"
    boresight: float = 0.0
    beamwidth: float = math.pi / 3.0
    sidelobe_gain: float = 0.0

    def __post_init__(self):
        if self.mode not in ("omni", "sector"):
            raise ValueError(f"unknown antenna mode {self.mode!r}")
        if not 0.0 <= self.sidelobe_gain <= 1.0:
            raise ValueError("sidelobe_gain must lie in [0, 1]")
        if self.mode == "sector" and not 0.0 < self.beamwidth <= 2.0 * math.pi:
            raise ValueError("beamwidth must lie in (0, 2*pi]")

    @classmethod
    def sector(cls, boresight: float, beamwidth: float = math.pi / 3.0, sidelobe_gain: float = 0.0) -> "Antenna":
        return cls("sector", float(boresight), float(beamwidth), float(sidelobe_gain))

    def gain_toward(self, origin, points):
        """Gain of an antenna at ``origin`` in the direction of ``points``.

        A point coincident with the antenna gets unit gain.
        """
        pts = np.asarray(points, dtype=float)
        if self.mode == "omni":
            g = np.ones(pts.shape[:-1])
            return g if g.ndim else 1.0
        dx = pts[..., 0] - origin[0]
        dy = pts[..., 1] - origin[1]
        off = np.abs(_wrap(np.arctan2(dy, dx) - self.boresight))
        inside = (off <= self.beamwidth / 2.0 + 1e-12) | ((dx == 0) & (dy == 0))
        g = np.where(inside, 1.0, self.sidelobe_gain)
        return g if g.ndim else float(g)


def aim(origin, target) -> float:
    """Boresight angle from ``origin`` toward ``target`` (0 when they coincide)."""
    dx, dy = target[0] - origin[0], target[1] - origin[1]
    if dx == 0 and dy == 0:
        return 0.0
    return math.atan2(dy, dx)


@dataclass(frozen=True)
class TransmitterSpec:
    id: str
    location: tuple
    tx_power: float
    antenna: Antenna = field(default_factory=Antenna)

    def __post_init__(self):
        if not self.tx_power > 0:
            raise ValueError(f"transmitter {self.id}: tx_power must be positive")
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))


@dataclass(frozen=True)
class ReceiverSpec:
    id: str
    location: tuple
    beta_min: float
    noise: float
    served_by: str
    antenna: Antenna = field(default_factory=Antenna)
    experienced_sinr: Optional[float] = None

    def __post_init__(self):
        if not self.beta_min >= 1.0:
            raise ValueError(f"receiver {self.id}: beta_min must be >= 1 (0 dB)")
        if not self.noise >= 0:
            raise ValueError(f"receiver {self.id}: noise must be non-negative")
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))


@dataclass(frozen=True)
class PointConsumption:
    occupancy: float
    opportunity: float
    liability: float


def distance(a, points):
    pts = np.asarray(points, dtype=float)
    d = np.hypot(pts[..., 0] - a[0], pts[..., 1] - a[1])
    return d if d.ndim else float(d)


def received_power(tx: TransmitterSpec, point, prop: PropagationModel):
    """Power from ``tx`` arriving at ``point`` (isotropic probe); never above tx_power."""
    d = distance(tx.location, point)
    return tx.tx_power * tx.antenna.gain_toward(tx.location, point) * prop.gain(d)


def link_gain(tx: TransmitterSpec, rx: ReceiverSpec, prop: PropagationModel) -> float:
    """Dimensionless end-to-end gain tx -> rx including both antennas."""
    d = distance(tx.location, rx.location)
    return float(
        tx.antenna.gain_toward(tx.location, rx.location)
        * rx.antenna.gain_toward(rx.location, tx.location)
        * prop.gain(d)
    )


def occupancy_at(point, txs: Iterable[TransmitterSpec], ambient_noise: float, prop: PropagationModel):
    total = np.zeros(np.asarray(point, dtype=float).shape[:-1])
    for tx in txs:
        total = total + received_power(tx, point, prop)
    total = total + ambient_noise
    return total if total.ndim else float(total)


def signal_power(rx: ReceiverSpec, serving_tx: TransmitterSpec, prop: PropagationModel) -> float:
    """Wanted-signal power at ``rx``.

    When the receiver declares an experienced SINR the signal is taken as
    ``experienced_sinr * noise``; otherwise it is computed from the link.
    """
    if rx.experienced_sinr is not None:
        return rx.experienced_sinr * rx.noise
    return serving_tx.tx_power * link_gain(serving_tx, rx, prop)


def interference_margin(rx: ReceiverSpec, serving_tx: TransmitterSpec, prop: PropagationModel) -> float:
    if rx.served_by != serving_tx.id:
        raise ValueError(f"receiver {rx.id} is served by {rx.served_by}, not {serving_tx.id}")
    s = signal_power(rx, serving_tx, prop)
    return max(0.0, s / rx.beta_min - rx.noise)


def is_starved(rx: ReceiverSpec, serving_tx: TransmitterSpec, prop: PropagationModel) -> bool:
    return signal_power(rx, serving_tx, prop) / rx.beta_min < rx.noise


def _rx_path(rx: ReceiverSpec, point, prop: PropagationModel):
    g = rx.antenna.gain_toward(rx.location, point) * prop.gain(distance(rx.location, point))
    return np.asarray(g, dtype=float)


def interferer_power_bound(rx: ReceiverSpec, im: float, point, prop: PropagationModel, literal: bool = False):
    """Largest transmit power an interferer at ``point`` may use against ``rx``.

    The interferer is assumed to point straight at the receiver.  Points the
    receiver antenna cannot see are unconstrained (``inf``).  ``literal=True``
    multiplies the margin by the path gain instead of dividing by it.
    """
    if im < 0:
        raise ValueError("interference margin must be non-negative")
    g = _rx_path(rx, point, prop)
    if literal:
        out = np.where(g > 0, im * g, np.inf)
    else:
        with np.errstate(divide="ignore"):
            out = np.where(g > 0, im / np.where(g > 0, g, 1.0), np.inf)
    return out if out.ndim else float(out)


def interference_opportunity(rx: ReceiverSpec, im: float, point, aggregate_interference: float,
                             prop: PropagationModel, literal: bool = False):
    """Bound minus the existing interference translated to ``point``; negative on incursion."""
    if aggregate_interference < 0:
        raise ValueError("aggregate interference must be non-negative")
    g = _rx_path(rx, point, prop)
    safe = np.where(g > 0, g, 1.0)
    if literal:
        out = np.where(g > 0, (im - aggregate_interference) * safe, np.inf)
    else:
        out = np.where(g > 0, (im - aggregate_interference) / safe, np.inf)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ReceiverState:
    """A receiver together with the link quantities it imposes on the map."""

    rx: ReceiverSpec
    signal: float
    aggregate_interference: float

    @property
    def margin(self) -> float:
        return max(0.0, self.signal / self.rx.beta_min - self.rx.noise)

    @property
    def sinr(self) -> float:
        den = self.rx.noise + self.aggregate_interference
        return math.inf if den == 0 else self.signal / den

    @property
    def starved(self) -> bool:
        return self.signal / self.rx.beta_min < self.rx.noise

    @property
    def harmed(self) -> bool:
        return self.sinr < self.rx.beta_min * (1.0 - SINR_RTOL)


SINR_RTOL = 1e-9


def receiver_states(txs: Sequence[TransmitterSpec], rxs: Sequence[ReceiverSpec],
                    prop: PropagationModel) -> list:
    """Signal and aggregate cochannel interference for every receiver.

    Receivers whose serving transmitter is not in ``txs`` are skipped (their
    network is not active).
    """
    by_id = {t.id: t for t in txs}
    out = []
    for rx in rxs:
        serving = by_id.get(rx.served_by)
        if serving is None:
            continue
        agg = math.fsum(t.tx_power * link_gain(t, rx, prop) for t in txs if t.id != rx.served_by)
        out.append(ReceiverState(rx, signal_power(rx, serving, prop), agg))
    return out


def opportunity_at(point, states: Sequence[ReceiverState], occupancy, prop: PropagationModel,
                   bounds: PowerBounds = PowerBounds(), literal: bool = False):
    gamma = bounds.p_max - np.asarray(occupancy, dtype=float)
    gamma = np.broadcast_to(gamma, np.asarray(point, dtype=float).shape[:-1]).copy()
    for st in states:
        opp = interference_opportunity(st.rx, st.margin, point, st.aggregate_interference, prop, literal)
        gamma = np.minimum(gamma, opp)
    return gamma if gamma.ndim else float(gamma)


def liability_at(occupancy, opportunity, bounds: PowerBounds = PowerBounds()):
    out = bounds.p_max - (np.asarray(occupancy, dtype=float) + np.asarray(opportunity, dtype=float))
    return out if out.ndim else float(out)


def consumption_at(points, txs: Sequence[TransmitterSpec], rxs: Sequence[ReceiverSpec],
                   prop: PropagationModel, bounds: PowerBounds = PowerBounds(),
                   ambient_noise: float = 0.0, literal: bool = False):
    """Vectorised (occupancy, opportunity, liability) at ``points``."""
    states = receiver_states(txs, rxs, prop)
    omega = np.asarray(occupancy_at(points, txs, ambient_noise, prop), dtype=float)
    gamma = np.asarray(opportunity_at(points, states, omega, prop, bounds, literal), dtype=float)
    phi = np.asarray(liability_at(omega, gamma, bounds), dtype=float)
    return omega, gamma, phi


def point_consumption(point, txs, rxs, prop, bounds=PowerBounds(), ambient_noise=0.0,
                      literal: bool = False) -> PointConsumption:
    w, g, f = consumption_at(np.asarray(point, dtype=float), txs, rxs, prop, bounds, ambient_noise, literal)
    return PointConsumption(float(w), float(g), float(f))
