from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from gtr import cli, presets, scenario


def write(tmp_path: Path, doc: dict, name: str = "s.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def small_doc(**extra) -> dict:
    doc = {
        "version": "gtr-scenario/1",
        "seed": 11,
        "entities": {"e": {"dim": 2}},
        "measurements": {
            "A": {"entity": "e", "simplex": {"angle": 0.0}, "density": {"kind": "uniform"}},
            "B": {"entity": "e", "simplex": {"angle": {"expr": "theta"}}, "density": {"kind": "epsilon", "eps": {"expr": "eps"}}},
        },
        "params": {"theta": math.pi / 4, "eps": 0.5},
        "states": {"x": {"entity": "e", "angle": 2.2}, "a": {"vertex_of": "A", "outcome": 0}},
        "requests": [
            {"id": "ab", "kind": "probabilities", "measurement": "B", "state": "a", "mc": True, "trials": 5000},
            {"id": "seq", "kind": "sequence", "chain": [["A", 0], ["B", 1]], "state": "x", "mc": True, "trials": 5000},
        ],
    }
    doc.update(extra)
    return doc


def test_expression_grammar():
    assert scenario.eval_expr("1/sqrt(2)") == 1 / math.sqrt(2)
    assert scenario.eval_expr("cos(pi/4) + 2**3 - -1") == pytest.approx(math.cos(math.pi / 4) + 9)
    assert scenario.eval_expr("2*eps", {"eps": 0.25}) == 0.5
    for bad in ("__import__('os')", "x", "1 if 1 else 2", "[1]", "abs(-1)"):
        with pytest.raises(ValueError):
            scenario.eval_expr(bad)
    with pytest.raises(scenario.ScenarioError, match="a.b"):
        scenario.resolve_exprs({"a": {"b": {"expr": "nope"}}}, {})


@pytest.mark.parametrize("name", presets.NAMES)
def test_presets_are_schema_valid(name, tmp_path):
    out = tmp_path / f"{name}.json"
    assert cli.main(["preset", name, "--out", str(out)]) == 0
    doc = scenario.load(out.read_text())
    scenario.build_context(doc)


def test_nonhilbert_preset_uses_exact_eps():
    doc = presets.preset("fig3-nonhilbert")
    text = json.dumps(doc)
    assert "1/sqrt(2)" in text


def test_unknown_preset():
    with pytest.raises(SystemExit):
        cli.main(["preset", "nope"])
    with pytest.raises(KeyError):
        presets.preset("nope")


@pytest.mark.parametrize("name", ["coin-nickel", "fig2-classical-violation", "coin-degenerate", "ensemble-break"])
def test_fast_presets_pass(name, tmp_path):
    src = tmp_path / "p.json"
    cli.main(["preset", name, "--out", str(src)])
    out = tmp_path / "r.json"
    assert cli.main(["run", str(src), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["passed"] and res["format"] == "gtr-result/1"
    assert res["provenance"]["generator_basis"] == "gell-mann-v1"


def test_classical_violation_values(tmp_path):
    src = tmp_path / "p.json"
    cli.main(["preset", "fig2-classical-violation", "--out", str(src)])
    res = scenario.execute(scenario.load(src.read_text()))
    cc = res["results"]["commutativity"] if "commutativity" in res["results"] else next(
        r for r in res["results"].values() if r["kind"] == "commutativity")
    assert cc["P(a->b)"] == 1.0
    assert cc["P(b->a)"] == pytest.approx((1 + math.cos(math.pi / 4)) / 2, abs=1e-15)


def test_malformed_density_exit_2(tmp_path, caplog):
    doc = small_doc()
    del doc["measurements"]["B"]["density"]["eps"]
    assert cli.main(["run", write(tmp_path, doc)]) == 2
    assert "measurements.B.density" in caplog.text


def test_bad_json_reports_line(tmp_path, caplog):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "version": "gtr-scenario/1",\n  "requests": [,]\n}')
    assert cli.main(["run", str(p)]) == 2
    assert "line 3" in caplog.text


def test_dangling_reference_exit_2(tmp_path, caplog):
    doc = small_doc()
    doc["requests"][0]["measurement"] = "Z"
    assert cli.main(["run", write(tmp_path, doc)]) == 2
    assert "requests[0].measurement" in caplog.text


def test_wrong_version_exit_2(tmp_path):
    doc = small_doc(version="gtr-scenario/9")
    assert cli.main(["run", write(tmp_path, doc)]) == 2


def test_missing_file_exit_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 2


def test_state_outside_ball_exit_2(tmp_path):
    doc = small_doc()
    doc["states"]["x"] = {"entity": "e", "coords": [1.5, 0.0]}
    assert cli.main(["run", write(tmp_path, doc)]) == 2


def test_seed_required(tmp_path, monkeypatch, caplog):
    doc = small_doc()
    del doc["seed"]
    monkeypatch.delenv(scenario.SEED_ENV, raising=False)
    path = write(tmp_path, doc)
    assert cli.main(["run", path, "--out", str(tmp_path / "o.json")]) == 2
    monkeypatch.setenv(scenario.SEED_ENV, "5")
    assert cli.main(["run", path, "--out", str(tmp_path / "o.json")]) == 0
    assert scenario.SEED_ENV in caplog.text
    assert json.loads((tmp_path / "o.json").read_text())["provenance"]["seed"] == 5


def test_exact_only_scenario_needs_no_seed(tmp_path):
    doc = small_doc()
    del doc["seed"]
    for r in doc["requests"]:
        r["mc"] = False
    assert not scenario.needs_seed(scenario.load(json.dumps(doc), env_seed="1"))
    assert cli.main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o.json")]) == 0


def test_failed_expectation_exit_1(tmp_path):
    doc = small_doc()
    doc["requests"][0]["expect"] = [{"path": "exact.0", "equals": 0.25}]
    assert cli.main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o.json")]) == 1


def test_runtime_error_exit_3(tmp_path):
    doc = small_doc()
    # membrane breakable only where the state projects
    doc["measurements"]["B"]["density"] = {"kind": "atomic", "locs": [1.0], "masses": [1.0]}
    doc["requests"] = [{"id": "p", "kind": "probabilities", "measurement": "B", "state": "b"}]
    doc["states"]["b"] = {"vertex_of": "B", "outcome": 0}
    assert cli.main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o.json")]) == 3


def test_byte_identical_across_workers(tmp_path):
    path = write(tmp_path, small_doc())
    outs = []
    for w in (1, 3):
        o = tmp_path / f"o{w}.json"
        assert cli.main(["run", path, "--out", str(o), "--workers", str(w)]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    o2 = tmp_path / "again.json"
    cli.main(["run", path, "--out", str(o2)])
    assert o2.read_bytes() == outs[0]


def test_different_seed_changes_output(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    cli.main(["run", write(tmp_path, small_doc(), "1.json"), "--out", str(a)])
    cli.main(["run", write(tmp_path, small_doc(seed=12), "2.json"), "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_every_mc_number_has_error(tmp_path):
    res = scenario.execute(scenario.load(json.dumps(small_doc())))
    for r in res["results"].values():
        assert "trials" in r
        assert "se" in r
        assert "tolerance" in r


def test_csv_format(tmp_path):
    o = tmp_path / "o.csv"
    assert cli.main(["run", write(tmp_path, small_doc()), "--format", "csv", "--out", str(o)]) == 0
    rows = list(csv.reader(io.StringIO(o.read_text())))
    assert rows[0] == ["request", "field", "value"]
    assert {r[0] for r in rows[1:]} == {"ab", "seq"}


def test_trace_output(tmp_path):
    o = tmp_path / "o.json"
    assert cli.main(["run", write(tmp_path, small_doc()), "--trace", "--out", str(o)]) == 0
    res = json.loads(o.read_text())
    runs = res["results"]["seq"]["trace"]
    assert len(runs) == scenario.TRACE_RUNS
    step = runs[0][0]
    assert {"state", "on_membrane", "breakpoint", "final_state"} <= set(step)


def test_eps_sweep_limits(tmp_path):
    doc = small_doc()
    doc["requests"] = [{"id": "ab", "kind": "probabilities", "measurement": "A", "state": "b"}]
    doc["measurements"]["A"]["density"] = {"kind": "epsilon", "eps": {"expr": "eps"}}
    doc["states"]["b"] = {"vertex_of": "B", "outcome": 0}
    o = tmp_path / "sweep.csv"
    rc = cli.main(["sweep", "--param", "eps", "--from", "0.05", "--to", "1.0", "--steps", "5",
                   "--out", str(o), write(tmp_path, doc)])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(o.read_text())))
    assert len(rows) == 5
    c = math.cos(math.pi / 4)
    assert float(rows[0]["ab.exact.0"]) == 1.0
    assert float(rows[-1]["ab.exact.0"]) == pytest.approx((1 + c) / 2, abs=1e-12)


def test_n_sweep_universal(tmp_path):
    doc = {
        "version": "gtr-scenario/1",
        "params": {"n": 4},
        "requests": [{"id": "u", "kind": "universal_average", "cos": [0.2, 0.7], "n": [{"expr": "n"}]}],
    }
    o = tmp_path / "n.csv"
    assert cli.main(["sweep", "--param", "n", "--from", "4", "--to", "16", "--steps", "4",
                     "--out", str(o), write(tmp_path, doc)]) == 0
    rows = list(csv.DictReader(io.StringIO(o.read_text())))
    assert [r["n"] for r in rows] == ["4", "8", "12", "16"]
    for r in rows:
        assert float(r["u.max_exact_gap"]) < 1e-15


def test_theta_sweep_uniform_reciprocity(tmp_path):
    doc = small_doc(seed=None)
    del doc["seed"]
    doc["measurements"]["B"]["density"] = {"kind": "uniform"}
    doc["requests"] = [{"id": "c", "kind": "commutativity", "a": "A", "b": "B"}]
    o = tmp_path / "t.csv"
    assert cli.main(["sweep", "--param", "theta", "--from", "0.1", "--to", "3.0", "--steps", "6",
                     "--out", str(o), write(tmp_path, doc)]) == 0
    for r in csv.DictReader(io.StringIO(o.read_text())):
        assert float(r["c.reciprocity_residual"]) < 1e-12


def test_sweep_bad_steps(tmp_path):
    assert cli.main(["sweep", "--param", "eps", "--from", "0", "--to", "1", "--steps", "0",
                     write(tmp_path, small_doc())]) == 2


def test_workers_must_be_positive(tmp_path):
    assert cli.main(["run", write(tmp_path, small_doc()), "--workers", "0"]) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gtr.cli", "preset", "coin-nickel"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["version"] == "gtr-scenario/1"
