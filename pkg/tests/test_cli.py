from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from slsp import cli
from slsp.scenario import (
    EXIT_ASSERTION,
    EXIT_OK,
    ScenarioError,
    bundled_scenarios,
    evaluate,
    load_bundled,
    parse_scenario_text,
    run_scenario,
)

BASIC = """\
name: t
seed: 1
duration: 5
topology:
  generator: line
  n: 3
"""


def write(tmp_path: Path, text: str) -> Path:
    p = tmp_path / "s.yaml"
    p.write_text(text)
    return p


def test_bundled_scenarios_are_listed_and_parse():
    names = bundled_scenarios()
    for required in ("two_node_basic", "single_forger", "colluder_pair", "replay", "flooder", "rekey"):
        assert required in names
    for name in names:
        sc = load_bundled(name)
        assert sc.name == name


def test_parse_minimal():
    sc = parse_scenario_text(BASIC)
    assert sc.graph.number_of_nodes() == 3 and sc.seed == 1 and sc.adversaries == []


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        (BASIC + "bogus: 1\n", 7, "unknown field 'bogus'"),
        (BASIC.replace("seed: 1\n", ""), None, "missing required field 'seed'"),
        (BASIC + "node_defaults:\n  lsu_period: 2\n  lost_neighbor: 3\n", 9, "lost_neighbor"),
        (BASIC + "node_defaults:\n  radus: 2\n", 8, "unknown field 'radus'"),
        (BASIC + "adversaries:\n  - node: 9\n    kind: Dropper\n", 8, "node 9 does not exist"),
        (BASIC + "adversaries:\n  - node: 1\n    kind: LinkForger\n    params: {targets: [0, 7]}\n", 10, "node 7"),
        (BASIC + "adversaries:\n  - node: 1\n    kind: Wizard\n", 9, "unknown adversary kind"),
        (BASIC + "\tfoo: 1\n", 7, "syntax error"),
        (BASIC + "seed: 2\n", 7, "duplicate key 'seed'"),
        (BASIC.replace("generator: line", "generator: torus"), 5, "topology.generator"),
        (BASIC + "nodes:\n  1: {radius: 0}\n", 8, "radius"),
        (BASIC + "sim:\n  loss: 1.5\n", 8, "loss"),
        (BASIC + "seq_start:\n  1: 4294967296\n", 8, "sequence number"),
    ],
)
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ScenarioError) as err:
        parse_scenario_text(text, "x.yaml")
    assert fragment in str(err.value)
    assert err.value.source == "x.yaml"
    if line is not None:
        assert err.value.line == line


def test_colluder_partner_must_collude():
    text = BASIC + "adversaries:\n  - node: 0\n    kind: ColluderPair\n    params: {partner: 2}\n"
    with pytest.raises(ScenarioError, match="ColluderPair"):
        parse_scenario_text(text)


def test_node_overrides_inherit_defaults():
    sc = parse_scenario_text(BASIC + "node_defaults:\n  radius: 3\nnodes:\n  1: {lsu_period: 4}\n")
    assert sc.defaults.radius == 3
    assert sc.overrides[1].radius == 3 and sc.overrides[1].lsu_period == 4


def test_explicit_edges_and_generators():
    sc = parse_scenario_text(BASIC.replace("generator: line\n  n: 3", "edges: [[0, 1], [1, 2], [2, 0]]"))
    assert sc.graph.number_of_edges() == 3
    sc = parse_scenario_text(BASIC.replace("generator: line\n  n: 3", "generator: grid\n  rows: 2\n  cols: 3"))
    assert sc.graph.number_of_nodes() == 6


def test_evaluate_operators():
    summary = {"a": 1, "b": {"c": 3}, "l": [1, 2]}
    from slsp.scenario import Expectation as E

    assert evaluate([E("a", "eq", 1), E("b.c", "min", 3), E("b.c", "max", 3), E("l", "len_eq", 2)], summary) == []
    assert len(evaluate([E("a", "min", 2), E("l", "len_min", 3), E("missing", "eq", 5)], summary)) == 3
    assert evaluate([E("missing", "eq", 0)], summary) == []


def test_run_scenario_exit_codes(tmp_path):
    ok = parse_scenario_text(BASIC + "expect:\n  recall: {min: 0}\n")
    assert run_scenario(ok).exit_code == EXIT_OK
    bad = parse_scenario_text(BASIC + "expect:\n  transmissions: {eq: -1}\n")
    result = run_scenario(bad, out=tmp_path / "m.jsonl")
    assert result.exit_code == EXIT_ASSERTION
    last = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[-1])
    assert last["assertions_failed"]


def test_cli_run_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(["run", "two_node_basic", "--out", str(a)]) == 0
    assert cli.main(["run", "two_node_basic", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "two_node_basic seed=1 ok" in capsys.readouterr().out


def test_cli_overrides_and_check(tmp_path):
    out = tmp_path / "m.jsonl"
    assert cli.main(["run", "two_node_basic", "--seed", "5", "--duration", "8", "--check", "--out", str(out)]) == 0
    summary = json.loads(out.read_text().splitlines()[-1])
    assert summary["seed"] == 5 and summary["t"] == 8.0 and "nlp_events" in summary


def test_cli_scenario_error_exit_code(tmp_path, capsys):
    p = write(tmp_path, BASIC + "oops: 1\n")
    assert cli.main(["run", str(p)]) == 1
    assert f"{p}:7" in capsys.readouterr().err
    assert cli.main(["run", "no_such_scenario"]) == 1


def test_cli_batch(tmp_path, capsys):
    assert cli.main(["run", "two_node_basic", "--seeds", "1-3", "--jobs", "3", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"two_node_basic-{s}.jsonl" for s in (1, 2, 3)]
    assert capsys.readouterr().out.count(" ok ") == 3


def test_cli_list_and_generate(tmp_path, capsys):
    assert cli.main(["list-scenarios"]) == 0
    assert "single_forger" in capsys.readouterr().out.split()
    assert cli.main(["list-scenarios", "-v"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["name"]
    out = tmp_path / "g.yaml"
    assert cli.main(["generate", "random", "n=12", "seed=4", "--duration", "10", "--out", str(out)]) == 0
    assert cli.main(["run", str(out)]) == 0
    assert cli.main(["generate", "grid", "rows=2"]) == 1
    assert cli.main(["generate", "line", "n"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "slsp", "list-scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "two_node_basic" in proc.stdout


def test_invariant_violation_exit_code(monkeypatch):
    import itertools

    from slsp.engine import SlspNode
    from slsp.scenario import EXIT_INVARIANT

    counter = itertools.count()
    monkeypatch.setattr(SlspNode, "state_digest", lambda self: str(next(counter)))
    sc = load_bundled("nlp_self_mac")
    result = run_scenario(sc, duration=17.0, check=True)
    assert result.exit_code == EXIT_INVARIANT
    assert any("NLP-discarded packet changed state" in v for v in result.violations)
