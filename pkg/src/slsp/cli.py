"""Command-line scenario runner.

    slsp run <file-or-bundled-name> [--seed N] [--duration S] [--out PATH] [--check]
    slsp run <scenario> --seeds 0-9 --jobs 4      # batch over seeds
    slsp list-scenarios [--verbose]
    slsp generate {line,ring,grid,random} key=value ... [--duration S] [--seed N]
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .scenario import (
    EXIT_SCENARIO_ERROR,
    TOPOLOGY_FIELDS,
    ScenarioError,
    bundled_scenarios,
    load_bundled,
    parse_scenario_text,
    resolve,
    run_scenario,
    scenario_to_json,
)


def _seed_list(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _summary_line(name: str, seed: int, result) -> str:
    s = result.metrics.summary
    status = {0: "ok", 2: "INVARIANT-VIOLATION", 3: "ASSERTION-FAILED"}.get(result.exit_code, "error")
    return (
        f"{name} seed={seed} {status} precision={s['precision']} recall={s['recall']} "
        f"fabricated_benign={s['fabricated_links_with_benign_endpoint']} tx={s['transmissions']}"
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = resolve(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    if args.seeds is None:
        result = run_scenario(scenario, seed=args.seed, duration=args.duration, out=args.out, check=args.check)
        seed = scenario.seed if args.seed is None else args.seed
        print(_summary_line(scenario.name, seed, result))
        for line in result.violations[:20]:
            print(f"  violation: {line}", file=sys.stderr)
        for line in result.failures:
            print(f"  assertion: {line}", file=sys.stderr)
        return result.exit_code

    def one(seed: int):
        out = None
        if args.out is not None:
            out = Path(args.out) / f"{scenario.name}-{seed}.jsonl"
        return seed, run_scenario(scenario, seed=seed, duration=args.duration, out=out, check=args.check)

    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, args.seeds))
    worst = 0
    for seed, result in results:
        print(_summary_line(scenario.name, seed, result))
        worst = max(worst, result.exit_code)
    return worst


def cmd_list(args: argparse.Namespace) -> int:
    for name in bundled_scenarios():
        if args.verbose:
            print(scenario_to_json(load_bundled(name)))
        else:
            print(name)
    return 0


def _coerce(value: str):
    loaded = yaml.safe_load(value)
    return loaded if isinstance(loaded, (int, float, str, list)) else value


def cmd_generate(args: argparse.Namespace) -> int:
    topo: dict = {"generator": args.kind}
    for item in args.params:
        if "=" not in item:
            print(f"error: expected key=value, got {item!r}", file=sys.stderr)
            return EXIT_SCENARIO_ERROR
        key, value = item.split("=", 1)
        topo[key] = _coerce(value)
    doc = {
        "name": args.name or f"generated_{args.kind}",
        "seed": args.seed,
        "duration": args.duration,
        "topology": topo,
        "node_defaults": {"radius": args.radius},
    }
    text = yaml.safe_dump(doc, sort_keys=False)
    try:
        parse_scenario_text(text, "<generated>")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slsp", description="Secure link-state protocol simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file or bundled scenario")
    run.add_argument("scenario", help="path to a scenario file, or the name of a bundled scenario")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--seeds", type=_seed_list, help="batch mode: seeds like 0-9 or 1,5,7")
    run.add_argument("--jobs", type=int, default=4, help="threads for batch mode")
    run.add_argument("--duration", type=float, help="override the simulated duration (s)")
    run.add_argument("--out", help="metrics file (a directory in batch mode)")
    run.add_argument("--check", action="store_true", help="assert protocol invariants while running")
    run.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.add_argument("--verbose", "-v", action="store_true")
    ls.set_defaults(func=cmd_list)

    gen = sub.add_parser("generate", help="emit a scenario file for a generated topology")
    gen.add_argument("kind", choices=sorted(k for k in TOPOLOGY_FIELDS if k != "edges"))
    gen.add_argument("params", nargs="*", help="generator parameters as key=value (e.g. n=20 seed=3)")
    gen.add_argument("--name")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--duration", type=float, default=60.0)
    gen.add_argument("--radius", type=int, default=2)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
