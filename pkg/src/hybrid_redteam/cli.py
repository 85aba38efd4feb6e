"""Command-line interface: generate-scenario, train, eval, replay, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from .harness import (
    BASELINES,
    format_record,
    load_topology,
    plot_metrics,
    replay,
    run_baseline,
    run_eval,
)
from .metrics import read_traces, report_from_traces
from .planner import backend_from_config
from .topology import ConfigError, generate_scenario
from .trainer import train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("hybrid_redteam")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set train.max_episodes=500 (repeatable)")


def _emit(report, json_path: Optional[str]) -> None:
    print(report.table())
    if json_path:
        Path(json_path).write_text(report.to_json())


def cmd_generate(args) -> int:
    rc = cfgmod.load(args.config, args.overrides)
    topo = generate_scenario(rc.scenario)
    text = topo.to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}: {len(topo.subnets)} subnets, {len(topo.hosts)} hosts")
    else:
        print(text)
    return EXIT_OK


def cmd_train(args) -> int:
    rc = cfgmod.load(args.config, args.overrides)
    backend = backend_from_config(rc.planner) if rc.agent.use_planner else None
    result = train(
        rc.train, agent=rc.agent, reward_config=rc.reward, backend=backend,
        scenario=rc.scenario, out_dir=args.out,
    )
    print(f"stopped after {result.episodes} episodes ({result.stop_reason}), stage {result.stage}")
    if result.scripted_fallback_mode:
        print("WARNING: planner was unreachable; this run used the scripted fallback", file=sys.stderr)
    if result.last_report is not None:
        print(result.last_report.table())
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = cfgmod.load(args.config, args.overrides)
    n = args.episodes or rc.eval.episodes
    seed = rc.eval.seed if args.seed is None else args.seed
    topology = load_topology(args.scenario) if args.scenario else None
    if args.baseline:
        backend = backend_from_config(rc.planner) if args.baseline == "planner_only" else None
        topo = topology or generate_scenario(rc.scenario)
        report = run_baseline(args.baseline, topo, n, seed, rc.reward, backend, args.traces)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --baseline")
        backend = backend_from_config(rc.planner)
        report = run_eval(
            args.checkpoint, n, seed, topology=topology, backend=backend,
            greedy=args.greedy, trace_dir=args.traces,
            reward_config=rc.reward if args.config else None,
        )
    _emit(report, args.json)
    return EXIT_OK


def cmd_replay(args) -> int:
    traces = read_traces(args.traces)
    if args.episode is not None:
        traces = [t for t in traces if t and t[0]["episode"] == args.episode]
        if not traces:
            raise ConfigError(f"episode {args.episode} not in {args.traces}")
    for trace in traces:
        for rec in trace:
            print(format_record(rec))
    if args.scenario:
        topo = load_topology(args.scenario)
        problems = [p for t in traces for p in replay(t, topo)]
        for p in problems:
            print("DIVERGED:", p, file=sys.stderr)
        if problems:
            return EXIT_RUNTIME
        print(f"replayed {len(traces)} episode(s): all observations reproduced")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.traces and not args.metrics:
        raise ConfigError("report needs --traces and/or --metrics")
    if args.traces:
        _emit(report_from_traces(args.traces, args.label), args.json)
    if args.metrics:
        out = plot_metrics(args.metrics, args.plot or Path(args.metrics).with_suffix(".png"))
        print(f"plot: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-redteam", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-scenario", help="write a seeded scenario topology as JSON")
    _add_config_args(p)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the controller")
    _add_config_args(p)
    p.add_argument("-o", "--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a baseline agent")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=sorted(BASELINES))
    p.add_argument("--scenario", help="scenario JSON (defaults to the checkpoint's or the config's)")
    p.add_argument("-n", "--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--greedy", action="store_true", help="argmax instead of stochastic sampling")
    p.add_argument("--traces", help="directory to write traces.jsonl into")
    p.add_argument("--json", help="write the report as JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="print a trace file and optionally re-simulate it")
    p.add_argument("traces")
    p.add_argument("--episode", type=int)
    p.add_argument("--scenario", help="scenario JSON to re-execute the actions against")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="re-aggregate traces and/or plot a training metrics CSV")
    p.add_argument("--traces")
    p.add_argument("--label", default="agent")
    p.add_argument("--json")
    p.add_argument("--metrics", help="metrics.csv from a training run")
    p.add_argument("--plot", help="output PNG path")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
