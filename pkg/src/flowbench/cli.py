"""Command-line entry points: serve, run, sample, eval, replay, report.

Exit codes: 0 success, 1 check failure (e.g. divergent replay), 2 config
error, 3 protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .agents import AGENTS
from .environment import Environment, load_tasks
from .errors import FlowbenchError, ProtocolError
from .evaluation import read_jsonl, write_jsonl
from .fixtures import load_fixture
from .rules import load_dynamics
from .runner import (
    eval_prediction_files,
    replay_corpus,
    run_suite,
    sample_and_record,
    slice_prediction_instances,
)
from .server import ToolService, serve_stdio, serve_tcp
from .tools import load_tools

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3


def build_environment(args) -> Environment:
    fixture = load_fixture(args.fixture)
    rules, workflows = load_dynamics(args.dynamics)
    registry = load_tools(fixture.schemas, args.tools)
    suite = load_tasks(fixture.schemas, args.tasks)
    return Environment(fixture, rules, workflows, registry, suite,
                       max_steps=args.max_steps)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fixture", default=None, help="fixture document path")
    parser.add_argument("--dynamics", default=None, help="rules/workflows document path")
    parser.add_argument("--tools", default=None, help="tool registry document path")
    parser.add_argument("--tasks", default=None, help="task suite document path")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-steps", type=int, default=40)


def cmd_serve(args) -> int:
    env = build_environment(args)
    service = ToolService(env)
    if args.stdio:
        serve_stdio(service)
        return EXIT_OK

    def announce(server):
        host, port = server.address
        print(f"listening on {host}:{port}", flush=True)

    serve_tcp(service, args.host, args.port, ready_callback=announce)
    return EXIT_OK


def cmd_run(args) -> int:
    env = build_environment(args)
    agent = AGENTS[args.agent]()
    tasks = None
    if args.task_ids:
        tasks = [env.suite.get(t) for t in args.task_ids.split(",") if t]
    report = run_suite(env, agent, mode=args.mode, tasks=tasks,
                       category=args.category, seed=args.seed)
    print(report.render_text())
    if args.out:
        with open(args.out, "w") as handle:
            json.dump(report.to_doc(), handle, indent=2)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    env = build_environment(args)
    records = sample_and_record(env, n=args.n, max_len=args.max_len,
                                seed=args.seed, out_path=args.out)
    completed = sum(1 for r in records if r["completed"])
    print(f"sampled {len(records)} trajectories ({completed} completed) -> {args.out}")
    if args.instances:
        instances = slice_prediction_instances(records)
        write_jsonl(args.instances, [i.to_doc() for i in instances])
        print(f"wrote {len(instances)} prediction instances -> {args.instances}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = eval_prediction_files(args.instances, args.predictions)
    print(report.render_text())
    if args.out:
        with open(args.out, "w") as handle:
            json.dump(report.to_doc(), handle, indent=2)
    return EXIT_OK


def cmd_replay(args) -> int:
    env = build_environment(args)
    records = read_jsonl(args.trajectories)
    verdicts = replay_corpus(env, records)
    divergent = [v for v in verdicts if not v.identical]
    for verdict in divergent:
        print(f"{verdict.trajectory_id}: divergent at step {verdict.first_divergent_step}")
    print(f"replayed {len(verdicts)} trajectories, {len(divergent)} divergent")
    return EXIT_OK if not divergent else EXIT_FAIL


def cmd_report(args) -> int:
    with open(args.infile) as handle:
        doc = json.load(handle)
    agg = doc.get("aggregates") or {}
    print(f"agent={doc.get('agent')} mode={doc.get('mode')} "
          f"tasks={agg.get('tasks')}")
    print(f"TSR   = {agg.get('tsr_float'):.3f}" if agg.get("tsr_float") is not None else "TSR = ?")
    print(f"TSRUC = {agg.get('tsruc_float'):.3f}"
          if agg.get("tsruc_float") is not None else "TSRUC = ?")
    print(f"{'task':<28} {'G':>2} {'V':>2} {'steps':>5}  status")
    for row in doc.get("rows") or []:
        print(f"{row['task_id']:<28} {row['G']:>2} {row['V']:>2} "
              f"{row['steps']:>5}  {row['status']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flowbench",
        description="Enterprise workflow environment simulator and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the wire-protocol tool service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=4727)
    p.add_argument("--stdio", action="store_true", help="frame over stdin/stdout")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="score a scripted agent on the task suite")
    _add_common(p)
    p.add_argument("--agent", choices=sorted(AGENTS), default="oracle")
    p.add_argument("--mode", choices=("tool", "audit"), default="tool")
    p.add_argument("--category", default="agentic",
                   choices=("agentic", "constraint_understanding"))
    p.add_argument("--task-ids", default="", help="comma-separated task ids")
    p.add_argument("--out", default="", help="write the JSON report here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sample", help="sample and record connected trajectories")
    _add_common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--out", default="corpus.jsonl")
    p.add_argument("--instances", default="", help="also write prediction instances")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score predictions against recorded instances")
    p.add_argument("--instances", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-execute a recorded corpus and diff it")
    _add_common(p)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="render a JSON run report as text")
    p.add_argument("infile")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except FlowbenchError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
