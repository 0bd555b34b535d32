import csv
import json
from pathlib import Path

import pytest

from spectrum_quant import cli
from spectrum_quant.grid import InvariantError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_quantify_single_transmitter(tmp_path):
    assert run("quantify", "--scenario", SCENARIOS / "single_transmitter.json", "--out", tmp_path) == 0
    totals = {r["quantity"]: r for r in read_csv(tmp_path / "totals.csv")}
    util = float(totals["utilized"]["w_cell"])
    assert 1.8e-8 / 3 <= util <= 1.8e-8 * 3
    assert float(totals["total"]["w_cell"]) == 676.0
    assert len((tmp_path / "map.csv").read_text().splitlines()) == 677
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "quantify" and manifest["seed"] == 0
    assert manifest["scenario"].endswith("single_transmitter.json")


def test_quantify_empty(tmp_path):
    assert run("quantify", "--scenario", SCENARIOS / "empty.json", "--out", tmp_path) == 0
    totals = {r["quantity"]: float(r["w_cell"]) for r in read_csv(tmp_path / "totals.csv")}
    assert totals["available"] == totals["total"] == 676.0


def test_malformed_scenario_exits_2_with_pointer(tmp_path, capsys):
    doc = json.loads((SCENARIOS / "single_link.json").read_text())
    doc["grid"]["cols"] = "many"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("quantify", "--scenario", bad, "--out", tmp_path / "o") == 2
    assert "/grid/cols" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["compare-sams", "--mechanism", "auction"],
    ["compare-sams", "--sweep", "n=x"],
    ["compare-sams", "--sweep", "depth=1"],
    ["recovery", "--seeds", "-1"],
    ["quantify"],
    ["quantify", "--scenario", "does-not-exist.json"],
    ["quantify", "--scenario", str(SCENARIOS / "empty.json"), "--side-m", "0"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "o") == 2


def test_invariant_breach_exits_3(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise InvariantError("identity off")
    monkeypatch.setattr(cli, "aggregate", broken)
    assert run("quantify", "--scenario", SCENARIOS / "empty.json", "--out", tmp_path) == 3


def test_zero_seeds_gives_header_only(tmp_path):
    assert run("compare-sams", "--seeds", 0, "--out", tmp_path) == 0
    lines = (tmp_path / "sam_metrics.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("mechanism,n_secondary,seed")


def _replay(manifest, out):
    argv = [manifest["subcommand"], "--seed", manifest["seed"], "--seeds", manifest["seeds"], "--out", out]
    if manifest["scenario"]:
        argv += ["--scenario", manifest["scenario"]]
    o = manifest["overrides"]
    if o["side_m"] is not None:
        argv += ["--side-m", o["side_m"]]
    for m in o["mechanism"] or []:
        argv += ["--mechanism", m]
    for name, values in o["sweeps"].items():
        argv += ["--sweep", f"{name}=" + ",".join(repr(v) for v in values)]
    return run(*argv)


@pytest.mark.parametrize("argv, outputs", [
    (["compare-sams", "--seeds", 2, "--sweep", "n=4,8", "--mechanism", "stov,nsccx"], ["sam_metrics.csv"]),
    (["recovery", "--sweep", "sensitivity=-120", "--sweep", "cap=10,30"], ["recovery.csv"]),
    (["discretization", "--sweep", "side=50,100"], ["discretization.csv"]),
    (["estimate", "--seeds", 2, "--sweep", "density=1,4"], ["estimation.csv"]),
    (["enforce", "--seeds", 2, "--sweep", "sigma=0", "--sweep", "injected=0,10"], ["enforcement.csv"]),
    (["quantify", "--scenario", str(SCENARIOS / "single_link.json"), "--side-m", 200], ["map.csv", "totals.csv"]),
])
def test_runs_reproduce_from_manifest(tmp_path, argv, outputs):
    first = tmp_path / "first"
    assert run(*argv, "--out", first) == 0
    assert sorted(p.name for p in first.iterdir()) == sorted(outputs + ["manifest.json"])
    manifest = json.loads((first / "manifest.json").read_text())
    second = tmp_path / "second"
    assert _replay(manifest, second) == 0
    for name in outputs:
        assert (first / name).read_bytes() == (second / name).read_bytes()
    # nothing escapes the output directories
    assert sorted(p.name for p in tmp_path.iterdir()) == ["first", "second"]


def test_enforce_rows(tmp_path):
    assert run("enforce", "--seeds", 2, "--sweep", "sigma=0", "--sweep", "injected=10", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "enforcement.csv")
    assert [r["verdict"] for r in rows] == ["violation", "violation"]
    assert all(r["false_violations"] == "0" for r in rows)
