import json
import math

import numpy as np
import pytest
from scipy import stats

from spectrum_quant.core import dbm_to_watt
from spectrum_quant.scenario import (PrimaryParams, ScenarioError, TopologyParams, generate_topology,
                                     load_scenario, save_scenario, scenario_from_dict, scenario_to_dict)

SCENARIOS = __import__("pathlib").Path(__file__).resolve().parents[1] / "scenarios"


def base_doc():
    return json.loads((SCENARIOS / "single_link.json").read_text())


def test_single_transmitter_file():
    sc = load_scenario(SCENARIOS / "single_transmitter.json")
    assert len(sc.networks) == 1 and sc.receivers == []
    t = sc.transmitters[0]
    assert t.location == (1000.0, 2000.0)
    assert t.tx_power == pytest.approx(dbm_to_watt(15.0), rel=1e-15)


def test_empty_scenario_is_valid():
    sc = load_scenario(SCENARIOS / "empty.json")
    assert sc.networks == () and sc.grid.n_cells == 676


def test_dangling_served_by_names_its_pointer():
    doc = base_doc()
    doc["networks"][0]["receivers"][0]["served_by"] = "ghost"
    with pytest.raises(ScenarioError) as ei:
        scenario_from_dict(doc)
    assert ei.value.pointer == "/networks/0/receivers/0/served_by"


@pytest.mark.parametrize("mutate, pointer", [
    (lambda d: d["grid"].__setitem__("side_m", -5), "/grid/side_m"),
    (lambda d: d["networks"][0]["transmitter"].pop("id"), "/networks/0/transmitter"),
    (lambda d: d["networks"][0]["receivers"][0].__setitem__("beta_min_db", "six"),
     "/networks/0/receivers/0/beta_min_db"),
])
def test_schema_errors_carry_json_pointer(mutate, pointer):
    doc = base_doc()
    mutate(doc)
    with pytest.raises(ScenarioError) as ei:
        scenario_from_dict(doc)
    assert ei.value.pointer == pointer
    assert str(ei.value).startswith(pointer)


def test_devices_outside_grid_rejected():
    doc = base_doc()
    doc["networks"][0]["transmitter"]["location_m"] = [1e6, 0.0]
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_save_load_round_trip(tmp_path):
    sc = generate_topology(TopologyParams(4300, 3700, 5, 100, seed=3, rx_per_network=2,
                                          pu=PrimaryParams(range_m=400)))
    p = save_scenario(sc, tmp_path / "s.json")
    back = load_scenario(p)
    assert [n.id for n in back.networks] == [n.id for n in sc.networks]
    for a, b in zip(sc.transmitters + sc.receivers, back.transmitters + back.receivers):
        assert a.location == b.location and a.id == b.id
        assert a.antenna.mode == b.antenna.mode
        assert a.antenna.boresight == pytest.approx(b.antenna.boresight, abs=1e-12)
        assert getattr(a, "tx_power", 1.0) == pytest.approx(getattr(b, "tx_power", 1.0), rel=1e-14)
    # after one trip through dBm the file form is a fixed point
    again = load_scenario(save_scenario(back, tmp_path / "t.json"))
    assert scenario_to_dict(again) == scenario_to_dict(back)


def test_generation_is_deterministic():
    p = TopologyParams(4300, 3700, 16, 400, seed=1, rx_per_network=6)
    a = json.dumps(scenario_to_dict(generate_topology(p)), sort_keys=True)
    b = json.dumps(scenario_to_dict(generate_topology(p)), sort_keys=True)
    assert a == b
    c = json.dumps(scenario_to_dict(generate_topology(TopologyParams(4300, 3700, 16, 400, seed=2,
                                                                     rx_per_network=6))), sort_keys=True)
    assert a != c


def test_seventeen_networks_keep_the_first_sixteen():
    a = generate_topology(TopologyParams(4300, 3700, 16, 400, seed=9, rx_per_network=6))
    b = generate_topology(TopologyParams(4300, 3700, 17, 400, seed=9, rx_per_network=6))
    assert [n.transmitter.location for n in a.networks] == [n.transmitter.location for n in b.networks[:16]]


def test_appendix_a_shape():
    sc = generate_topology(TopologyParams(4300, 3700, 16, 400, seed=0, rx_per_network=6))
    assert len(sc.transmitters) + len(sc.receivers) == 112
    for n in sc.networks:
        for r in n.receivers:
            assert math.dist(r.location, n.transmitter.location) <= n.range_m + 1e-9


def test_primary_receivers_on_the_range_circle():
    sc = generate_topology(TopologyParams(3900, 4500, 0, 100, seed=0, pu=PrimaryParams(range_m=500)))
    pu = sc.network("pu")
    c = pu.transmitter.location
    angles = []
    for r in pu.receivers:
        assert math.dist(r.location, c) == pytest.approx(500.0)
        angles.append(math.degrees(math.atan2(r.location[1] - c[1], r.location[0] - c[0])) % 360)
    assert np.allclose(np.diff(sorted(angles)), 60.0)
    # each receiver points back at the tower
    for r in pu.receivers:
        assert r.antenna.gain_toward(r.location, c) == 1.0


def test_impossible_placement():
    with pytest.raises(ScenarioError):
        generate_topology(TopologyParams(600, 600, 0, 50, seed=0, pu=PrimaryParams(range_m=500)))
    with pytest.raises(ScenarioError):
        generate_topology(TopologyParams(100, 100, 2, 500, seed=0))
    with pytest.raises(ScenarioError):
        TopologyParams(100, 100, -1, 10, seed=0)


def test_transmitters_are_uniform():
    sc = generate_topology(TopologyParams(1000, 1000, 10_000, 10, seed=5, rx_per_network=0))
    xy = np.array([t.location for t in sc.transmitters])
    counts, _, _ = np.histogram2d(xy[:, 0], xy[:, 1], bins=10, range=[[0, 1000], [0, 1000]])
    _, p = stats.chisquare(counts.ravel())
    assert p > 0.01
