"""Scenario files: parsing, validation and execution.

A scenario is a YAML mapping. Every key is checked against a fixed schema so
typos fail loudly, and every error carries the file name and line number of
the offending entry. The full grammar is documented in ``README.md``;
a minimal file looks like::

    name: two_node_basic
    seed: 1
    duration: 20
    topology:
      generator: line
      n: 2

Running a scenario writes one JSON record per benign node per sampling
interval plus a final summary record, then evaluates the ``expect`` block
against the summary.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import networkx as nx
import yaml

from . import topology
from .adversary import AdversaryBehavior, AdversaryKind
from .engine import SEQ_LIMIT, ConfigError, NodeConfig
from .sim import Metrics, MobilityKind, MobilityModel, SimWorld

EXIT_OK = 0
EXIT_SCENARIO_ERROR = 1
EXIT_INVARIANT = 2
EXIT_ASSERTION = 3

TOP_LEVEL = {
    "name", "description", "seed", "duration", "topology", "node_defaults", "nodes",
    "adversaries", "mobility", "sim", "seq_start", "output", "expect",
}
TOPOLOGY_FIELDS = {
    "edges": {"generator", "edges", "n"},
    "line": {"generator", "n"},
    "ring": {"generator", "n"},
    "grid": {"generator", "rows", "cols"},
    "random": {"generator", "n", "seed", "avg_degree"},
}
SIM_FIELDS = {"latency", "loss", "sample_interval", "boot_spread"}
MOBILITY_FIELDS = {"kind", "churn_rate", "keep_connected"}
ADVERSARY_FIELDS = {"node", "kind", "params"}
ADVERSARY_PARAMS = {
    AdversaryKind.LINK_FORGER: {"targets"},
    AdversaryKind.IP_SPOOFER: {"mode", "victim", "start", "new_ip"},
    AdversaryKind.MAC_SPOOFER: {"victim", "start"},
    AdversaryKind.REPLAYER: {"copies", "delay", "gap"},
    AdversaryKind.FLOODER: {"rate", "start", "payload"},
    AdversaryKind.HOP_EXTENDER: {"mode"},
    AdversaryKind.DROPPER: set(),
    AdversaryKind.COLLUDER_PAIR: {"partner", "tunnel"},
}
NODE_ID_PARAMS = {"victim", "partner"}
EXPECT_OPS = {"eq", "min", "max", "len_eq", "len_min"}
CONFIG_FIELDS = {f.name for f in dataclasses.fields(NodeConfig)}


class ScenarioError(Exception):
    def __init__(self, message: str, source: str = "<scenario>", line: Optional[int] = None):
        self.message = message
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class AdversarySpec:
    node: int
    behavior: AdversaryBehavior


@dataclass
class Expectation:
    path: str
    op: str
    value: Any
    line: Optional[int] = None


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    graph: nx.Graph
    defaults: NodeConfig = field(default_factory=NodeConfig)
    overrides: dict[int, NodeConfig] = field(default_factory=dict)
    adversaries: list[AdversarySpec] = field(default_factory=list)
    mobility: MobilityModel = field(default_factory=MobilityModel)
    sim: dict[str, float] = field(default_factory=dict)
    seq_start: dict[int, int] = field(default_factory=dict)
    output: Optional[str] = None
    expect: list[Expectation] = field(default_factory=list)
    description: str = ""
    source: str = "<scenario>"


# -- YAML with line numbers ---------------------------------------------------------------


class _Doc:
    """Plain Python data plus a map from key path to 1-based line number."""

    def __init__(self, data: Any, lines: dict[tuple, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, *path) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def error(self, message: str, *path) -> ScenarioError:
        return ScenarioError(message, self.source, self.line(*path))


def _load_yaml(text: str, source: str) -> _Doc:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"syntax error: {problem}", source, line) from None
    finally:
        loader.dispose()
    lines: dict[tuple, int] = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for knode, vnode in node.value:
                key = loader.construct_object(knode, deep=True)
                if key in out:
                    raise ScenarioError(f"duplicate key {key!r}", source, knode.start_mark.line + 1)
                lines[path + (key,)] = knode.start_mark.line + 1
                out[key] = walk(vnode, path + (key,))
                lines[path + (key,)] = knode.start_mark.line + 1
            return out
        if isinstance(node, yaml.SequenceNode):
            return [walk(v, path + (i,)) for i, v in enumerate(node.value)]
        return loader.construct_object(node, deep=True)

    if root is None:
        raise ScenarioError("empty scenario file", source, 1)
    return _Doc(walk(root, ()), lines, source)


# -- field helpers ------------------------------------------------------------------------


def _mapping(doc: _Doc, value, allowed: set[str], *path) -> dict:
    if not isinstance(value, dict):
        raise doc.error(f"{'.'.join(map(str, path)) or 'scenario'} must be a mapping", *path)
    for key in value:
        if key not in allowed:
            raise doc.error(f"unknown field {key!r} (allowed: {', '.join(sorted(map(str, allowed)))})", *path, key)
    return value


def _int(doc: _Doc, value, *path, lo: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise doc.error(f"{path[-1]} must be an integer, got {value!r}", *path)
    if lo is not None and value < lo:
        raise doc.error(f"{path[-1]} must be >= {lo}", *path)
    return value


def _number(doc: _Doc, value, *path, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise doc.error(f"{path[-1]} must be a number, got {value!r}", *path)
    if positive and value <= 0:
        raise doc.error(f"{path[-1]} must be positive", *path)
    return float(value)


def _node_id(doc: _Doc, value, graph: nx.Graph, *path) -> int:
    nid = _int(doc, value, *path)
    if nid not in graph:
        raise doc.error(f"node {nid} does not exist in the topology", *path)
    return nid


def _config(doc: _Doc, raw, base: Optional[dict], *path) -> tuple[NodeConfig, dict]:
    raw = _mapping(doc, raw, CONFIG_FIELDS, *path)
    merged = dict(base or {})
    merged.update(raw)
    for key in ("rate_bands", "quanta"):
        if key in merged and isinstance(merged[key], list):
            merged[key] = tuple(merged[key])
    try:
        return NodeConfig(**merged), merged
    except ConfigError as exc:
        where = path + (exc.field_name,) if exc.field_name in raw else path
        raise doc.error(f"invalid node config: {exc}", *where) from None
    except (TypeError, ValueError) as exc:
        raise doc.error(f"invalid node config: {exc}", *path) from None


def _topology(doc: _Doc, raw) -> nx.Graph:
    if not isinstance(raw, dict):
        raise doc.error("topology must be a mapping", "topology")
    gen = raw.get("generator", "edges" if "edges" in raw else None)
    if gen not in TOPOLOGY_FIELDS:
        raise doc.error(
            f"topology.generator must be one of {', '.join(sorted(TOPOLOGY_FIELDS))}", "topology", "generator"
        )
    _mapping(doc, raw, TOPOLOGY_FIELDS[gen], "topology")
    p = ("topology",)
    try:
        if gen == "edges":
            edges = raw.get("edges")
            if not isinstance(edges, list) or not edges:
                raise doc.error("topology.edges must be a non-empty list of [a, b] pairs", *p, "edges")
            pairs = []
            for i, e in enumerate(edges):
                if not (isinstance(e, list) and len(e) == 2):
                    raise doc.error("each edge must be a pair [a, b]", *p, "edges", i)
                pairs.append((_int(doc, e[0], *p, "edges", i, lo=0), _int(doc, e[1], *p, "edges", i, lo=0)))
            n = _int(doc, raw["n"], *p, "n", lo=1) if "n" in raw else None
            g = topology.from_edges(pairs, n)
            if n is not None and max(g.nodes()) >= n:
                raise doc.error(f"edge endpoint exceeds n={n}", *p, "edges")
            return g
        if gen == "line":
            return topology.line(_int(doc, raw.get("n"), *p, "n", lo=1))
        if gen == "ring":
            return topology.ring(_int(doc, raw.get("n"), *p, "n", lo=3))
        if gen == "grid":
            return topology.grid(_int(doc, raw.get("rows"), *p, "rows", lo=1),
                                 _int(doc, raw.get("cols"), *p, "cols", lo=1))
        n = _int(doc, raw.get("n"), *p, "n", lo=1)
        gseed = _int(doc, raw.get("seed", 0), *p, "seed")
        deg = _number(doc, raw.get("avg_degree", 5.0), *p, "avg_degree", positive=True)
        return topology.random_connected(n, gseed, deg)
    except (ValueError, RuntimeError) as exc:
        raise doc.error(str(exc), *p) from None


def _adversaries(doc: _Doc, raw, graph: nx.Graph) -> list[AdversarySpec]:
    if not isinstance(raw, list):
        raise doc.error("adversaries must be a list", "adversaries")
    specs: list[AdversarySpec] = []
    seen: set[int] = set()
    for i, item in enumerate(raw):
        p = ("adversaries", i)
        item = _mapping(doc, item, ADVERSARY_FIELDS, *p)
        if "node" not in item or "kind" not in item:
            raise doc.error("adversary needs 'node' and 'kind'", *p)
        nid = _node_id(doc, item["node"], graph, *p, "node")
        if nid in seen:
            raise doc.error(f"node {nid} has more than one adversary behavior", *p, "node")
        seen.add(nid)
        try:
            kind = AdversaryKind(item["kind"])
        except ValueError:
            names = ", ".join(k.value for k in AdversaryKind)
            raise doc.error(f"unknown adversary kind {item['kind']!r} (one of {names})", *p, "kind") from None
        params = dict(_mapping(doc, item.get("params", {}) or {}, ADVERSARY_PARAMS[kind], *p, "params"))
        for key in NODE_ID_PARAMS & params.keys():
            _node_id(doc, params[key], graph, *p, "params", key)
        if "targets" in params:
            if not isinstance(params["targets"], list):
                raise doc.error("targets must be a list of node ids", *p, "params", "targets")
            for j, t in enumerate(params["targets"]):
                _node_id(doc, t, graph, *p, "params", "targets", j)
        specs.append(AdversarySpec(nid, AdversaryBehavior(kind, params)))
    by_node = {s.node: s for s in specs}
    for i, s in enumerate(specs):
        if s.behavior.kind is AdversaryKind.COLLUDER_PAIR:
            partner = by_node.get(s.behavior.params.get("partner"))
            if partner is None or partner.behavior.kind is not AdversaryKind.COLLUDER_PAIR:
                raise doc.error("a ColluderPair partner must itself be a ColluderPair", "adversaries", i)
    return specs


def _expectations(doc: _Doc, raw) -> list[Expectation]:
    if not isinstance(raw, dict):
        raise doc.error("expect must be a mapping", "expect")
    out = []
    for key, cond in raw.items():
        p = ("expect", key)
        cond = _mapping(doc, cond, EXPECT_OPS, *p)
        for op, value in cond.items():
            out.append(Expectation(str(key), op, value, doc.line(*p, op)))
    return out


# -- public API ---------------------------------------------------------------------------


def parse_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    doc = _load_yaml(text, source)
    raw = _mapping(doc, doc.data, TOP_LEVEL)
    for key in ("name", "seed", "duration", "topology"):
        if key not in raw:
            raise doc.error(f"missing required field {key!r}")
    name = raw["name"]
    if not isinstance(name, str) or not name:
        raise doc.error("name must be a non-empty string", "name")
    seed = _int(doc, raw["seed"], "seed", lo=0)
    duration = _number(doc, raw["duration"], "duration", positive=True)
    graph = _topology(doc, raw["topology"])

    defaults, base = _config(doc, raw.get("node_defaults", {}) or {}, None, "node_defaults")
    overrides: dict[int, NodeConfig] = {}
    nodes_raw = raw.get("nodes", {}) or {}
    if not isinstance(nodes_raw, dict):
        raise doc.error("nodes must be a mapping of node id to config overrides", "nodes")
    for key, cfg in nodes_raw.items():
        nid = _node_id(doc, key, graph, "nodes", key)
        overrides[nid], _ = _config(doc, cfg or {}, base, "nodes", key)

    adversaries = _adversaries(doc, raw.get("adversaries", []) or [], graph)

    mobility = MobilityModel()
    if "mobility" in raw:
        m = _mapping(doc, raw["mobility"], MOBILITY_FIELDS, "mobility")
        try:
            mobility = MobilityModel(
                MobilityKind(m.get("kind", "Static")),
                _number(doc, m.get("churn_rate", 0.0), "mobility", "churn_rate"),
                bool(m.get("keep_connected", True)),
            )
        except ValueError as exc:
            raise doc.error(f"invalid mobility: {exc}", "mobility") from None

    sim = {}
    for key, value in _mapping(doc, raw.get("sim", {}) or {}, SIM_FIELDS, "sim").items():
        sim[key] = _number(doc, value, "sim", key)
    if sim.get("latency", 1.0) <= 0:
        raise doc.error("latency must be positive", "sim", "latency")
    if not 0.0 <= sim.get("loss", 0.0) < 1.0:
        raise doc.error("loss must be in [0, 1)", "sim", "loss")

    seq_start = {}
    seq_raw = raw.get("seq_start", {}) or {}
    if not isinstance(seq_raw, dict):
        raise doc.error("seq_start must be a mapping of node id to sequence number", "seq_start")
    for key, value in seq_raw.items():
        nid = _node_id(doc, key, graph, "seq_start", key)
        seq = _int(doc, value, "seq_start", key, lo=0)
        if seq >= SEQ_LIMIT:
            raise doc.error(f"sequence number must be < {SEQ_LIMIT}", "seq_start", key)
        seq_start[nid] = seq

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise doc.error("output must be a path string", "output")

    return Scenario(
        name=name,
        seed=seed,
        duration=duration,
        graph=graph,
        defaults=defaults,
        overrides=overrides,
        adversaries=adversaries,
        mobility=mobility,
        sim=sim,
        seq_start=seq_start,
        output=output,
        expect=_expectations(doc, raw.get("expect", {}) or {}),
        description=str(raw.get("description", "")),
        source=source,
    )


def parse_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(path)) from None
    return parse_scenario_text(text, str(path))


def bundled_scenarios() -> list[str]:
    root = resources.files("slsp") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled(name: str) -> Scenario:
    res = resources.files("slsp") / "scenarios" / f"{name}.yaml"
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}", name)
    return parse_scenario_text(res.read_text(encoding="utf-8"), f"{name}.yaml")


def resolve(ref: str) -> Scenario:
    """Load ``ref`` as a file path if it exists, otherwise as a bundled name."""
    if Path(ref).is_file():
        return parse_scenario(ref)
    return load_bundled(ref)


# -- execution ----------------------------------------------------------------------------


@dataclass
class RunResult:
    exit_code: int
    metrics: Metrics
    failures: list[str]
    violations: list[str]
    world: SimWorld


def build_world(scenario: Scenario, check: bool = False) -> SimWorld:
    world = SimWorld(
        scenario.graph,
        scenario.defaults,
        seed=scenario.seed,
        node_configs=scenario.overrides,
        mobility=scenario.mobility,
        check=check,
        **scenario.sim,
    )
    for spec in scenario.adversaries:
        world.inject_adversary(spec.node, spec.behavior)
    for nid, seq in scenario.seq_start.items():
        world.nodes[nid].seq.next_seq = seq
    return world


def _lookup(summary: dict, path: str):
    value: Any = summary
    for part in path.split("."):
        if not isinstance(value, dict) or part not in value:
            return None
        value = value[part]
    return value


def evaluate(expect: list[Expectation], summary: dict) -> list[str]:
    """Return a description of every failed expectation."""
    failures = []
    for e in expect:
        actual = _lookup(summary, e.path)
        if e.op == "eq":
            ok = actual == e.value or (actual is None and e.value == 0)
        elif e.op in ("min", "max"):
            actual = 0 if actual is None else actual
            ok = isinstance(actual, (int, float)) and (actual >= e.value if e.op == "min" else actual <= e.value)
        else:
            n = len(actual) if isinstance(actual, (list, dict)) else 0
            ok = n == e.value if e.op == "len_eq" else n >= e.value
            actual = f"{n} items"
        if not ok:
            failures.append(f"{e.path} {e.op} {e.value!r} failed (actual {actual!r})")
    return failures


def run_scenario(
    scenario: Scenario,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
    out: Optional[Union[str, Path]] = None,
    check: bool = False,
) -> RunResult:
    """Run a scenario and write its metrics. Exit codes: 0 ok, 2 an internal
    invariant was violated (``check`` runs only), 3 an ``expect`` assertion
    failed."""
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    world = build_world(scenario, check=check)
    metrics = world.run(scenario.duration if duration is None else duration)
    metrics.summary["scenario"] = scenario.name
    if check:
        metrics.summary["nlp_events"] = world.nlp_events
    failures = evaluate(scenario.expect, metrics.summary)
    metrics.summary["assertions_failed"] = failures
    target = out if out is not None else scenario.output
    if target is not None:
        metrics.write(target)
    if world.violations:
        code = EXIT_INVARIANT
    elif failures:
        code = EXIT_ASSERTION
    else:
        code = EXIT_OK
    return RunResult(code, metrics, failures, list(world.violations), world)


def scenario_to_json(scenario: Scenario) -> str:
    """A compact description, used by ``list-scenarios --verbose``."""
    return json.dumps(
        {
            "name": scenario.name,
            "nodes": scenario.graph.number_of_nodes(),
            "edges": scenario.graph.number_of_edges(),
            "duration": scenario.duration,
            "adversaries": [[s.node, s.behavior.kind.value] for s in scenario.adversaries],
        },
        sort_keys=True,
    )
