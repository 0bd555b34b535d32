import dataclasses
import json
import math

import pytest

from spectrum_quant import experiments as ex
from spectrum_quant.core import ReceiverSpec, TransmitterSpec, dbm_to_watt, link_gain, receiver_states
from spectrum_quant.estimation import (build_sensor_grid, estimate_maps, exact_fit, simulate_measurements)
from spectrum_quant.policy import (CONFORMANT, INDETERMINATE, VIOLATION, PolicyRecord, PolicyStore, Rejection,
                                   Verdict, check_conformance, replay, request_footprint, write_verdicts)
from spectrum_quant.sam import AccessRequest, SamConfig
from spectrum_quant.scenario import Network, Scenario, reproduction_grid

W_R = dbm_to_watt(-106.0)


def su(name, tx_xy, rx_xy, beta=2.0):
    tx = TransmitterSpec(f"{name}-tx", tx_xy, 1e-3)
    return Network(name, "secondary", tx, (ReceiverSpec(f"{name}-rx", rx_xy, beta, W_R, tx.id),))


def empty():
    return Scenario(reproduction_grid())


def test_feasible_request_gets_an_active_record():
    out = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    assert isinstance(out, PolicyRecord) and out.status == "active"
    fp = out.footprint
    assert fp.tx_power == pytest.approx(2.0 * W_R * 50 ** 3.5, rel=1e-9)
    assert len(fp.cells) == len(fp.occupancy) == len(fp.liability) > 0


def test_request_beyond_p_max_is_rejected():
    out = request_footprint(AccessRequest(su("a", (100, 100), (3800, 4400), beta=100.0)), SamConfig("nsccx"), empty())
    assert isinstance(out, Rejection) and out.reason


def test_second_request_blocked_by_the_first():
    # b's receiver sits next to a's transmitter; alone b is fine
    a = su("a", (1500, 1500), (1700, 1500))
    b = su("b", (1490, 1500), (1290, 1500))
    cfg = SamConfig("stppov")
    assert isinstance(request_footprint(AccessRequest(b), cfg, empty()), PolicyRecord)
    store = PolicyStore(empty(), cfg)
    ra = store.request(AccessRequest(a))
    rb = store.request(AccessRequest(b))
    assert isinstance(ra, PolicyRecord) and isinstance(rb, Rejection)
    # brute-force: with both at their stand-alone powers someone falls below beta_min
    pb = 2.0 * 10 * W_R / link_gain(b.transmitter, b.receivers[0], empty().prop)
    pa = ra.footprint.tx_power
    sinr_a = pa * link_gain(a.transmitter, a.receivers[0], empty().prop) / (
        W_R + pb * link_gain(b.transmitter, a.receivers[0], empty().prop))
    sinr_b = pb * link_gain(b.transmitter, b.receivers[0], empty().prop) / (
        W_R + pa * link_gain(a.transmitter, b.receivers[0], empty().prop))
    assert sinr_a < 2.0 or sinr_b < 2.0
    with pytest.raises(ValueError):
        store.request(AccessRequest(a))


def test_record_json_replays_to_the_same_status():
    rec = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    rec.record_violation(Verdict("a", VIOLATION, 1.0, 20.0, 13.0, 3.0))
    rec.revoke("repeat offender")
    back = PolicyRecord.from_json(rec.to_json())
    assert back.status == rec.status == "revoked"
    assert back.log == rec.log and back.footprint == rec.footprint
    assert back.to_json() == rec.to_json()


def test_log_is_append_only():
    rec = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    view = rec.log
    view[0]["event"] = "tampered"
    assert rec.log[0]["event"] == "granted"
    with pytest.raises(ValueError):
        rec.record_violation(Verdict("a", CONFORMANT, 1.0, 1.0, 0.0, 3.0))
    rec.revoke()
    with pytest.raises(ValueError):
        rec.revoke()


@pytest.mark.parametrize("log", [[], [{"event": "revoked"}], [{"event": "granted"}, {"event": "granted"}],
                                 [{"event": "granted"}, {"event": "paused"}]])
def test_replay_rejects_broken_logs(log):
    with pytest.raises(ValueError):
        replay(log)


def _estimate(world, sigma=0.0, seed=0):
    sg = build_sensor_grid(world.grid, 4)
    meas = simulate_measurements(world, sg, sigma, seed)
    return estimate_maps(meas, exact_fit(sg, 3.5), world.receivers, sg, world.transmitters, world.bounds)


def test_conformance_verdicts_at_zero_noise():
    rec = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    honest = empty().with_networks([rec.footprint.network()])
    v = check_conformance(rec, _estimate(honest))
    assert v.status == CONFORMANT and abs(v.excess_db) < 1e-9

    loud = honest.with_networks([rec.footprint.network().with_power(rec.footprint.tx_power * 10.0)])
    v = check_conformance(rec, _estimate(loud), tolerance_db=3.0)
    assert v.status == VIOLATION and v.excess_db == pytest.approx(10.0, abs=1e-9)

    with pytest.raises(ValueError):
        check_conformance(rec, _estimate(honest), tolerance_db=0.0)


def test_moved_receiver_raises_no_violation():
    rec = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    net = rec.footprint.network()
    moved = dataclasses.replace(net, receivers=(dataclasses.replace(net.receivers[0], location=(1500.0, 1900.0)),))
    v = check_conformance(rec, _estimate(empty().with_networks([moved])))
    assert v.status == CONFORMANT


def test_unobserved_transmitter_is_indeterminate():
    rec = request_footprint(AccessRequest(su("a", (1500, 1500), (1550, 1500))), SamConfig("nsccx"), empty())
    v = check_conformance(rec, _estimate(empty()))
    assert v.status == INDETERMINATE and math.isnan(v.excess_db)


@pytest.mark.parametrize("tolerance", [0.01, 0.5, 3.0])
@pytest.mark.parametrize("seed", range(4))
def test_no_false_violations_without_noise(seed, tolerance):
    row = ex.enforcement_trial(seed, 0.0, 0.0, tolerance_db=tolerance)
    assert row.false_violations == 0 and row.verdict == CONFORMANT


@pytest.mark.parametrize("seed", range(3))
def test_injected_violation_without_noise(seed):
    row = ex.enforcement_trial(seed, 0.0, 10.0)
    assert row.verdict == VIOLATION and row.excess_db == pytest.approx(10.0, abs=1e-6)


def test_verdict_csv(tmp_path):
    p = write_verdicts(tmp_path / "v.csv", [Verdict("a", CONFORMANT, 1e-3, 1.1e-3, 0.41, 3.0)])
    lines = p.read_text().splitlines()
    assert lines[0] == "network_id,status,allocated_w,estimated_w,excess_db,tolerance_db"
    assert lines[1].split(",")[:2] == ["a", "conformant"]


def test_store_protects_earlier_grants():
    store = PolicyStore(empty(), SamConfig("nsccx"))
    nets = [su(f"n{k}", (600 + 300 * k, 1500), (640 + 300 * k, 1500)) for k in range(6)]
    for n in nets:
        store.request(AccessRequest(n))
    world = store.current()
    for s in receiver_states(world.transmitters, world.receivers, world.prop):
        assert s.sinr >= s.rx.beta_min * (1 - 1e-9)
    assert json.loads(next(iter(store.records.values())).to_json())["log"][0]["event"] == "granted"
