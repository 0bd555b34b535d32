"""Spectrum-access mechanisms: admission, power allocation and comparison metrics.

Five mechanisms are supported:

``underlay``  fixed low power, always admitted.
``overlay``   fixed high power, admitted only when the primary is not sensed.
``stov``      not sensed -> minimum power giving own receivers beta_min + margin,
              provided previously admitted secondary receivers stay above beta_min.
``stppov``    as ``stov`` but independent of sensing; instead the power is capped so
              the primary receivers keep a guarded share of their margin.
``nsccx``     requests sorted by minimal stand-alone consumption, admitted greedily
              with the admitted set's powers re-solved jointly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (SINR_RTOL, PowerBounds, TransmitterSpec, consumption_at, db_to_ratio, dbm_to_watt,
                   interference_opportunity, link_gain, occupancy_at, received_power, receiver_states)
from .grid import HexGrid, SpectrumFrame

MECHANISMS = ("underlay", "overlay", "stov", "stppov", "nsccx")
UNDERLAY_POWER_DBM = -76.0


@dataclass(frozen=True)
class SamConfig:
    mechanism: str
    su_sensitivity_dbm: float = -80.0
    underlay_power_w: float = dbm_to_watt(UNDERLAY_POWER_DBM)
    overlay_power_w: float = 1.0
    guard_margin_db: Optional[float] = None
    knows_pu_receivers: bool = True
    target_margin_db: float = 10.0
    max_su_power_w: Optional[float] = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; choose from {', '.join(MECHANISMS)}")
        if self.guard_margin_db is not None and self.guard_margin_db < 0:
            raise ValueError("guard_margin_db must be non-negative")

    def guard_db(self, n_potential: int) -> float:
        if self.guard_margin_db is not None:
            return self.guard_margin_db
        return 10.0 * math.log10(max(n_potential, 1))


@dataclass(frozen=True)
class AccessRequest:
    network: object
    bands: Optional[tuple] = None
    quanta: Optional[tuple] = None

    @property
    def id(self) -> str:
        return self.network.id


def requests_for(scenario) -> list:
    return [AccessRequest(n) for n in scenario.secondaries()]


@dataclass
class ScheduleResult:
    mechanism: str
    admitted: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    sinr: dict = field(default_factory=dict)

    @property
    def admitted_ids(self) -> list:
        return [r.id for r, _ in self.admitted]

    @property
    def n_scheduled(self) -> int:
        return len(self.admitted)

    def power_of(self, request_id: str) -> float:
        for r, p in self.admitted:
            if r.id == request_id:
                return p
        raise KeyError(request_id)

    def admitted_networks(self) -> list:
        return [r.network.with_power(p) for r, p in self.admitted]


def sensing_radius(p_tx: float, sensitivity: float, alpha: float) -> float:
    """Distance at which ``p_tx`` decays to ``sensitivity`` under the clamped path gain."""
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return max(1.0, (p_tx / sensitivity) ** (1.0 / alpha))


def pu_detected(su_location, pu_tx: Optional[TransmitterSpec], sensitivity: float, prop) -> bool:
    if pu_tx is None:
        return False
    return received_power(pu_tx, np.asarray(su_location, dtype=float), prop) >= sensitivity


def gain_matrix(txs: Sequence[TransmitterSpec], rxs: Sequence, prop) -> np.ndarray:
    """``link_gain`` for every (tx, rx) pair, vectorised per device."""
    if not txs or not rxs:
        return np.zeros((len(txs), len(rxs)))
    tloc = np.array([t.location for t in txs])
    rloc = np.array([r.location for r in rxs])
    d = np.hypot(tloc[:, None, 0] - rloc[None, :, 0], tloc[:, None, 1] - rloc[None, :, 1])
    g_tx = np.stack([np.broadcast_to(t.antenna.gain_toward(t.location, rloc), (len(rxs),)) for t in txs])
    g_rx = np.stack([np.broadcast_to(r.antenna.gain_toward(r.location, tloc), (len(txs),)) for r in rxs])
    return g_tx * g_rx.T * prop.gain(d)


class LinkTable:
    """Gains between every transmitter and receiver of the incumbents and the requests."""

    def __init__(self, incumbents: Sequence, requests: Sequence[AccessRequest], prop):
        nets = list(incumbents) + [r.network for r in requests]
        self.prop = prop
        self.txs = [n.transmitter for n in nets]
        self.tx_index = {t.id: i for i, t in enumerate(self.txs)}
        self.rxs = [rx for n in nets for rx in n.receivers]
        self.rx_of = {}
        k = 0
        for i, n in enumerate(nets):
            self.rx_of[i] = list(range(k, k + len(n.receivers)))
            k += len(n.receivers)
        self.n_incumbent_tx = len(incumbents)
        self.primary_rx = [r for i, n in enumerate(incumbents) if n.role == "primary" for r in self.rx_of[i]]
        self.gain = gain_matrix(self.txs, self.rxs, prop)
        self.serving = np.array([self.tx_index[r.served_by] for r in self.rxs], dtype=int)
        self.noise = np.array([r.noise for r in self.rxs])
        self.beta = np.array([r.beta_min for r in self.rxs])
        self.fixed_signal = np.array([np.nan if r.experienced_sinr is None else r.experienced_sinr * r.noise
                                      for r in self.rxs])

    def signal_interference(self, power: np.ndarray):
        received = power[:, None] * self.gain
        total = received.sum(axis=0)
        own = received[self.serving, np.arange(len(self.rxs))]
        interference = np.maximum(total - own, 0.0)
        signal = np.where(np.isnan(self.fixed_signal), own, self.fixed_signal)
        return signal, interference

    def sinr(self, power: np.ndarray) -> np.ndarray:
        s, i = self.signal_interference(power)
        den = self.noise + i
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, s / np.where(den > 0, den, 1.0), np.inf)

    def margins(self, power: np.ndarray) -> np.ndarray:
        """Noise-only interference margins (signal / beta - noise, clamped at 0)."""
        s, _ = self.signal_interference(power)
        return np.maximum(s / self.beta - self.noise, 0.0)

    def required_power(self, tx: int, power: np.ndarray, target: np.ndarray) -> float:
        """Smallest power for ``tx`` meeting ``target`` SINR at all its receivers, given the others."""
        rxs = self.rx_of[tx]
        if not rxs:
            return 0.0
        others = power.copy()
        others[tx] = 0.0
        _, interference = self.signal_interference(others)
        need = 0.0
        for r in rxs:
            g = self.gain[tx, r]
            if g <= 0:
                return math.inf
            need = max(need, target[r] * (self.noise[r] + interference[r]) / g)
        return need


class ScheduleState:
    """Cumulative interference state shared by sequential admissions."""

    def __init__(self, scenario, requests: Sequence[AccessRequest]):
        self.scenario = scenario
        self.requests = list(requests)
        self.incumbents = [n for n in scenario.networks if n.id not in {r.id for r in self.requests}]
        self.links = LinkTable(self.incumbents, self.requests, scenario.prop)
        self.power = np.zeros(len(self.links.txs))
        for i, n in enumerate(self.incumbents):
            self.power[i] = n.transmitter.tx_power
        self.admitted: list = []
        self.pu_txs = [n.transmitter for n in self.incumbents if n.role == "primary"]
        self.pu_margin = self.links.margins(self.power)
        # receivers of secondaries admitted earlier (e.g. by a policy store) stay protected
        self.incumbent_su_rx = [r for i, n in enumerate(self.incumbents) if n.role == "secondary"
                                for r in self.links.rx_of[i]]

    def index(self, request: AccessRequest) -> int:
        return self.links.tx_index[request.network.transmitter.id]

    def admitted_rx(self) -> list:
        return self.incumbent_su_rx + [r for i in self.admitted for r in self.links.rx_of[i]]

    def detected(self, request: AccessRequest, sensitivity: float) -> bool:
        loc = request.network.transmitter.location
        return any(pu_detected(loc, t, sensitivity, self.scenario.prop) for t in self.pu_txs)


@dataclass(frozen=True)
class Allocation:
    power: Optional[float]
    reason: str = ""

    @property
    def admitted(self) -> bool:
        return self.power is not None


def _secondary_ok(state: ScheduleState, power: np.ndarray, rx_ids) -> bool:
    if not rx_ids:
        return True
    sinr = state.links.sinr(power)[rx_ids]
    return bool(np.all(sinr >= state.links.beta[rx_ids] * (1.0 - SINR_RTOL)))


def _primary_ok(state: ScheduleState, power: np.ndarray, guard: float = 1.0) -> bool:
    rx = state.links.primary_rx
    if not rx:
        return True
    _, interference = state.links.signal_interference(power)
    return bool(np.all(interference[rx] <= state.pu_margin[rx] / guard * (1 + SINR_RTOL)))


def allocate_power(request: AccessRequest, config: SamConfig, state: ScheduleState) -> Allocation:
    """Power the mechanism grants ``request`` against the current state (``nsccx`` excluded)."""
    bounds: PowerBounds = state.scenario.bounds
    cap = bounds.p_max if config.max_su_power_w is None else min(config.max_su_power_w, bounds.p_max)
    mech = config.mechanism
    j = state.index(request)
    sens = dbm_to_watt(config.su_sensitivity_dbm)
    if mech == "underlay":
        return Allocation(min(config.underlay_power_w, cap))
    if mech in ("overlay", "stov") and state.detected(request, sens):
        return Allocation(None, "primary transmitter sensed")
    if mech == "overlay":
        return Allocation(min(config.overlay_power_w, cap))
    if mech == "nsccx":
        raise ValueError("nsccx allocates jointly; use schedule_nsccx")
    links = state.links
    target = links.beta * db_to_ratio(config.target_margin_db)
    need = max(links.required_power(j, state.power, target), bounds.p_min)
    if need > cap:
        return Allocation(None, f"required power {need:.3e} W exceeds cap {cap:.3e} W")
    if mech == "stppov":
        guard = db_to_ratio(config.guard_db(len(state.requests)))
        share = len(state.admitted) + 1
        for k in links.primary_rx:
            g = links.gain[j, k]
            if g > 0 and need * g > state.pu_margin[k] / guard / share:
                return Allocation(None, f"guarded primary cap exceeded at {links.rxs[k].id}")
    trial = state.power.copy()
    trial[j] = need
    if not _secondary_ok(state, trial, state.admitted_rx()):
        return Allocation(None, "would push an admitted receiver below beta_min")
    if mech == "stppov" and not _primary_ok(state, trial):
        return Allocation(None, "aggregate interference at a primary receiver exceeds its margin")
    return Allocation(need)


def _sinr_report(state: ScheduleState) -> dict:
    sinr = state.links.sinr(state.power)
    active_tx = set(range(state.links.n_incumbent_tx)) | set(state.admitted)
    return {state.links.rxs[r].id: float(sinr[r]) for t in sorted(active_tx) for r in state.links.rx_of[t]}


def _ordered(requests: Sequence[AccessRequest]) -> list:
    return sorted(requests, key=lambda r: r.id)


def schedule(requests: Sequence[AccessRequest], config: SamConfig, scenario, grid: Optional[HexGrid] = None) -> ScheduleResult:
    """Sequential admission in request-id order against cumulative interference."""
    if config.mechanism == "nsccx":
        return schedule_nsccx(requests, config, scenario, grid or scenario.grid)
    state = ScheduleState(scenario, requests)
    result = ScheduleResult(config.mechanism)
    for req in _ordered(requests):
        alloc = allocate_power(req, config, state)
        if alloc.admitted:
            j = state.index(req)
            state.power[j] = alloc.power
            state.admitted.append(j)
            result.admitted.append((req, alloc.power))
        else:
            result.rejected.append((req, alloc.reason))
    result.sinr = _sinr_report(state)
    return result


def minimal_power(network, prop, headroom_db: float = 0.0) -> float:
    """Least power meeting beta_min (plus ``headroom_db``) at every receiver, noise only."""
    need = 0.0
    for rx in network.receivers:
        g = link_gain(network.transmitter, rx, prop)
        if g <= 0:
            return math.inf
        need = max(need, rx.beta_min * db_to_ratio(headroom_db) * rx.noise / g)
    return need


def minimal_consumption(request: AccessRequest, grid: HexGrid, frame: SpectrumFrame, scenario,
                        headroom_db: float = 10.0) -> float:
    """Utilized plus forbidden space of the request's network alone, at its minimal power.

    The power meets beta_min with ``headroom_db`` to spare.  At exactly
    beta_min a receiver has no interference margin and forbids the whole
    region, which would make every request look alike.  A network without
    receivers has no power requirement and is quantified at its declared
    transmit power.
    """
    if request.network.receivers:
        p = max(minimal_power(request.network, scenario.prop, headroom_db), scenario.bounds.p_min)
    else:
        p = request.network.transmitter.tx_power
    if p > scenario.bounds.p_max:
        return math.inf
    net = request.network.with_power(p)
    omega, _, phi = consumption_at(grid.centers, [net.transmitter], list(net.receivers),
                                   scenario.prop, scenario.bounds, 0.0)
    n_slots = (frame.n_quanta if request.quanta is None else len(request.quanta)) * \
              (frame.n_bands if request.bands is None else len(request.bands))
    return n_slots * math.fsum(np.concatenate([omega, phi]))


def _joint_powers(links: LinkTable, base: np.ndarray, members: Sequence[int], cap: float,
                  max_iter: int = 5000):
    """Least powers for ``members`` meeting beta_min at their receivers; ``None`` if infeasible.

    Jacobi iteration of the standard interference function started from zero
    increases monotonically to the least feasible point when one exists.
    """
    members = np.asarray(members, dtype=int)
    power = base.copy()
    power[members] = 0.0
    rx = np.asarray([r for m in members for r in links.rx_of[int(m)]], dtype=int)
    if rx.size == 0:
        return power
    own = links.serving[rx]
    g_own = links.gain[own, rx]
    if np.any(g_own <= 0):
        return None
    gain_rx = links.gain[:, rx]
    beta, noise = links.beta[rx], links.noise[rx]
    for _ in range(max_iter):
        interference = power @ gain_rx - power[own] * g_own
        need = np.zeros_like(power)
        np.maximum.at(need, own, beta * (noise + interference) / g_own)
        new = power.copy()
        new[members] = need[members]
        if np.any(new[members] > cap):
            return None
        if np.allclose(new[members], power[members], rtol=1e-12, atol=0.0):
            return new
        power = new
    return None


def schedule_nsccx(requests: Sequence[AccessRequest], config: SamConfig, scenario,
                   grid: Optional[HexGrid] = None) -> ScheduleResult:
    if config.mechanism != "nsccx":
        raise ValueError("schedule_nsccx needs an nsccx config")
    if not config.knows_pu_receivers:
        raise ValueError("nsccx requires knowledge of the primary receiver positions")
    grid = grid or scenario.grid
    bounds = scenario.bounds
    cap = bounds.p_max if config.max_su_power_w is None else min(config.max_su_power_w, bounds.p_max)
    guard = db_to_ratio(config.guard_db(len(requests)))
    weight = {r.id: minimal_consumption(r, grid, scenario.frame, scenario, config.target_margin_db)
              for r in requests}
    order = sorted(requests, key=lambda r: (weight[r.id], r.id))
    # link table built in sorted order so the result does not depend on input order
    state = ScheduleState(scenario, order)
    result = ScheduleResult("nsccx")
    for req in order:
        j = state.index(req)
        members = state.admitted + [j]
        trial = _joint_powers(state.links, state.power, members, cap)
        if trial is None:
            result.rejected.append((req, "no feasible joint power allocation"))
            continue
        trial[members] = np.maximum(trial[members], bounds.p_min)
        rx_ids = state.incumbent_su_rx + [r for m in members for r in state.links.rx_of[m]]
        if not _secondary_ok(state, trial, rx_ids):
            result.rejected.append((req, "joint allocation leaves a receiver below beta_min"))
            continue
        if not _primary_ok(state, trial, guard):
            result.rejected.append((req, "guarded primary margin exceeded"))
            continue
        state.power = trial
        state.admitted.append(j)
    power_by_id = {state.links.txs[m].id: float(state.power[m]) for m in state.admitted}
    result.admitted = [(r, power_by_id[r.network.transmitter.id]) for r in order
                       if r.network.transmitter.id in power_by_id]
    result.sinr = _sinr_report(state)
    return result


# -------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class SamMetrics:
    mechanism: str
    n_requests: int
    n_scheduled: int
    n_harmed_receivers: int
    n_harmed_primary: int
    pct_exploited: float
    pct_available: float
    lost_available: float
    potentially_degraded: float
    unexploited: float
    degraded: float
    available_before: float
    recovered: float


METRIC_FIELDS = [f for f in SamMetrics.__dataclass_fields__]


def spectrum_buckets(gamma_before, phi_before, gamma_after, judged_available) -> dict:
    """Recovery / exploitation buckets from per-cell arrays (W per cell).

    A cell is truly available when its opportunity before secondary access is
    positive; ``judged_available`` is the mechanism's view of the same cells.
    """
    gb = np.asarray(gamma_before, dtype=float)
    fb = np.asarray(phi_before, dtype=float)
    ga = np.asarray(gamma_after, dtype=float)
    judged = np.asarray(judged_available, dtype=bool)
    truly = gb > 0
    hit = truly & judged
    return {
        "available_before": math.fsum(np.where(truly, gb, 0.0)),
        "recovered": math.fsum(gb[hit]),
        "lost_available": math.fsum(gb[truly & ~judged]),
        "potentially_degraded": math.fsum(fb[~truly & judged]),
        "unexploited": math.fsum(np.minimum(gb, np.maximum(ga, 0.0))[hit]),
        "exploited": math.fsum(np.maximum(0.0, np.where(truly, gb, 0.0) - np.maximum(ga, 0.0))),
        "degraded": math.fsum(np.maximum(0.0, -ga)),
    }


def judged_available(config: SamConfig, scenario, grid: HexGrid, n_potential: int) -> np.ndarray:
    """Cells the mechanism would treat as open to secondary transmission."""
    pts = grid.centers
    prim = scenario.primaries()
    if config.mechanism == "underlay":
        return np.ones(grid.n_cells, dtype=bool)
    if config.mechanism in ("overlay", "stov"):
        sens = dbm_to_watt(config.su_sensitivity_dbm)
        seen = np.zeros(grid.n_cells, dtype=bool)
        for n in prim:
            seen |= np.asarray(received_power(n.transmitter, pts, scenario.prop)) >= sens
        return ~seen
    guard = db_to_ratio(config.guard_db(n_potential))
    txs = [n.transmitter for n in prim]
    rxs = [r for n in prim for r in n.receivers]
    omega = np.asarray(occupancy_at(pts, txs, scenario.ambient_noise, scenario.prop))
    gamma = scenario.bounds.p_max - omega
    for st in receiver_states(txs, rxs, scenario.prop):
        gamma = np.minimum(gamma, interference_opportunity(
            st.rx, st.margin / guard, pts, st.aggregate_interference, scenario.prop))
    return gamma > 0


def evaluate(config: SamConfig, scenario, grid: HexGrid, result: ScheduleResult,
             n_requests: Optional[int] = None) -> SamMetrics:
    n_req = len(scenario.secondaries()) if n_requests is None else n_requests
    pts = grid.centers
    incumbents = [n for n in scenario.networks if n.role == "primary"]
    admitted = result.admitted_networks()

    def _map(nets):
        txs = [n.transmitter for n in nets]
        rxs = [r for n in nets for r in n.receivers]
        return consumption_at(pts, txs, rxs, scenario.prop, scenario.bounds, scenario.ambient_noise)

    _, gb, fb = _map(incumbents)
    _, ga, _ = _map(incumbents + admitted)
    total = scenario.bounds.p_max * grid.n_cells
    judged = judged_available(config, scenario, grid, n_req)
    b = spectrum_buckets(gb, fb, ga, judged)

    prim_rx = {r.id for n in incumbents for r in n.receivers}
    beta = {r.id: r.beta_min for n in incumbents + admitted for r in n.receivers}
    harmed = [rid for rid, s in result.sinr.items() if s < beta[rid] * (1.0 - SINR_RTOL)]
    avail = b["available_before"]
    return SamMetrics(
        mechanism=config.mechanism,
        n_requests=n_req,
        n_scheduled=result.n_scheduled,
        n_harmed_receivers=len(harmed),
        n_harmed_primary=sum(1 for h in harmed if h in prim_rx),
        pct_exploited=0.0 if avail <= 0 else 100.0 * b["exploited"] / avail,
        pct_available=100.0 * math.fsum(ga) / total,
        lost_available=b["lost_available"],
        potentially_degraded=b["potentially_degraded"],
        unexploited=b["unexploited"],
        degraded=b["degraded"],
        available_before=avail,
        recovered=b["recovered"],
    )
