"""Command-line entry points.

Machine output is line-delimited JSON on stdout; human tables go to stderr
under --pretty. Exit statuses: 0 success, 2 unrecoverable run error, 3 budget
exhausted with an empty answer, 64 flag errors, 1 other failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import METHODS, load_tasks, run_benchmark
from .executor import RunConfig, run_task
from .exporter import export_kto, export_sft
from .graph import PlanParseError, parse_plan, validate_subgraph
from .planner import PlannerConfig
from .providers import ProviderRef, build_provider, cost_report
from .state import StopKind, read_trajectories
from .theory import dynamic_vs_static_sweep, residual_bound_sweep

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_UNRECOVERABLE = 2
EXIT_BUDGET_EMPTY = 3
EXIT_USAGE = 64


class CliParser(argparse.ArgumentParser):
    """argparse's default error exit (2) collides with the run-error status."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(record: dict, pretty_lines: list[str] | None, pretty: bool) -> None:
    print(json.dumps(record, ensure_ascii=False, sort_keys=True))
    if pretty and pretty_lines:
        for line in pretty_lines:
            print(line, file=sys.stderr)


def _provider_ref(raw: dict) -> ProviderRef:
    known = {"kind", "endpoint", "model", "model_name", "credential_env", "price"}
    price = raw.get("price")
    return ProviderRef(
        kind=raw.get("kind", "scripted"),
        endpoint=raw.get("endpoint"),
        model_name=raw.get("model") or raw.get("model_name"),
        credential_env=raw.get("credential_env"),
        price=tuple(price) if price else None,
        extra={k: v for k, v in raw.items() if k not in known},
    )


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def build_run_config(config: dict) -> RunConfig:
    providers = config.get("providers", {})
    if "designer" not in providers or "executor" not in providers:
        raise ValueError("config must define providers.designer and providers.executor")

    def make(role: str):
        raw = dict(providers[role])
        raw.setdefault("tag", role)
        return build_provider(_provider_ref(raw))

    planner_raw = config.get("planner", {})
    planner = PlannerConfig(
        designer=make("designer"),
        summarizer=make("summarizer") if "summarizer" in providers else None,
        max_stages=planner_raw.get("max_stages", 6),
        parse_retries=planner_raw.get("parse_retries", 2),
        summary_char_budget=planner_raw.get("summary_char_budget", 4000),
    )
    run_raw = config.get("run", {})
    return RunConfig(
        planner=planner,
        executor_provider=make("executor"),
        answer_extraction=run_raw.get("answer_extraction", "last_organize"),
        node_failure_policy=run_raw.get("node_failure_policy", "skip_dependents"),
    )


def _prices(config: dict) -> dict[str, tuple[float, float]]:
    return {model: (p[0], p[1]) for model, p in config.get("prices", {}).items()}


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    tasks = load_tasks(args.tasks)
    if args.task_id:
        tasks = [t for t in tasks if t.task_id == args.task_id]
        if not tasks:
            print(f"error: task {args.task_id!r} not found", file=sys.stderr)
            return EXIT_FAILURE
    exit_code = EXIT_OK
    log_lines: list[str] = []
    for task in tasks:
        cfg = build_run_config(config)
        if args.t_max:
            cfg.planner.max_stages = args.t_max
        result = run_task(task, cfg)
        _emit(
            result.machine_record(),
            [f"{task.task_id}: answer={result.final_answer!r} stop={result.stop.kind.value}"],
            args.pretty,
        )
        log_lines.extend(result.trajectory.to_log_lines())
        if result.stop.kind is StopKind.UNRECOVERABLE_ERROR:
            exit_code = max(exit_code, EXIT_UNRECOVERABLE)
        elif result.stop.kind is StopKind.BUDGET_EXHAUSTED and not result.final_answer:
            exit_code = max(exit_code, EXIT_BUDGET_EMPTY)
    if args.out:
        Path(args.out).write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
    return exit_code


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    tasks = load_tasks(args.tasks)
    cfg = build_run_config(config)
    if args.t_max:
        cfg.planner.max_stages = args.t_max
    seeds = list(range(args.seed, args.seed + args.samples))
    report = run_benchmark(
        tasks,
        args.method,
        cfg,
        n_samples=args.samples,
        seeds=seeds,
        workers=config.get("workers", 4),
    )
    body = report.to_dict()
    if args.k:
        body["pass_at_k"] = {str(k): v for k, v in report.pass_at_k.items() if k <= args.k}
    pretty = [f"method={report.method} accuracy={report.accuracy:.4f}"]
    pretty += [f"  {dom}: {acc:.4f}" for dom, acc in sorted(report.per_domain_accuracy.items())]
    pretty += [f"  pass@{k}: {v:.4f}" for k, v in sorted(report.pass_at_k.items())]
    _emit(body, pretty, args.pretty)
    if args.out:
        Path(args.out).write_text(
            "".join(line + "\n" for traj in report.trajectories for line in traj.to_log_lines()),
            encoding="utf-8",
        )
    return EXIT_OK


def _load_logs(paths: list[str]):
    trajectories = []
    for path in paths:
        trajectories.extend(read_trajectories(Path(path).read_text(encoding="utf-8")))
    return trajectories


def cmd_export_sft(args: argparse.Namespace) -> int:
    trajectories = _load_logs(args.logs)
    count = export_sft(trajectories, args.out)
    _emit({"written": count, "out": args.out}, [f"wrote {count} examples to {args.out}"], args.pretty)
    return EXIT_OK


def cmd_export_kto(args: argparse.Namespace) -> int:
    trajectories = _load_logs(args.logs)
    positives, negatives = export_kto(trajectories, args.out, seed=args.seed)
    _emit(
        {"positives": positives, "negatives": negatives, "out": args.out},
        [f"wrote {positives} positives / {negatives} negatives to {args.out}"],
        args.pretty,
    )
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    for trajectory in _load_logs([args.log]):
        print(f"=== {trajectory.task_id} [{trajectory.task.domain}] ===")
        print(f"prompt: {trajectory.task.prompt}")
        for stage in trajectory.stages:
            print(f"--- stage {stage.stage_index} ---")
            if stage.plan_doc:
                graph = parse_plan(stage.plan_doc, stage_index=stage.stage_index)
                print(f"subgoal: {graph.subgoal}")
                for node in graph.nodes:
                    print(f"  node {node.node_id} [{node.template.value}] inputs={list(node.input_keys)}")
            for execution in stage.outcome.executed_nodes:
                status = execution.key or f"ERROR: {execution.error}"
                print(f"  ran {execution.node_id} -> {status}")
            for skipped in stage.outcome.skipped_nodes:
                print(f"  skipped {skipped}")
            if stage.outcome.terminate_signaled:
                print("  terminate signaled")
            for record in stage.memory_deltas:
                preview = (record.content or "")[:200].replace("\n", " ")
                print(f"  memory {record.key}: {preview}")
        stop = trajectory.stop.kind.value if trajectory.stop else "?"
        print(f"final answer: {trajectory.final_answer!r} (stop: {stop}, success: {trajectory.success})")
    return EXIT_OK


def cmd_validate_plan(args: argparse.Namespace) -> int:
    text = Path(args.plan).read_text(encoding="utf-8")
    try:
        graph = parse_plan(text, stage_index=0)
    except PlanParseError as exc:
        print(str(exc))
        return EXIT_FAILURE
    report = validate_subgraph(graph)
    if report.valid:
        print("valid")
        return EXIT_OK
    for message in report.messages():
        print(message)
    return EXIT_FAILURE


def cmd_theory_sweep(args: argparse.Namespace) -> int:
    never_worse = dynamic_vs_static_sweep(n_instances=args.instances, seed=args.seed)
    bound = residual_bound_sweep(n_instances=args.instances, seed=args.seed)
    record = {"never_worse": never_worse.to_dict(), "residual_bound": bound.to_dict()}
    pretty = [
        f"never-worse: {never_worse.instances} instances, {never_worse.violations} violations, "
        f"strict witness: {never_worse.strict_witness}",
        f"residual-bound: {bound.instances} instances, {bound.violations} violations, "
        f"max gap {bound.max_gap:.6f} <= max bound {bound.max_bound:.6f}",
    ]
    _emit(record, pretty, args.pretty)
    ok = never_worse.violations == 0 and bound.violations == 0 and never_worse.strict_witness
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_cost(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    trajectories = _load_logs([args.log])
    rows = [
        (u.tag, u.model, u.prompt_tokens, u.completion_tokens)
        for traj in trajectories
        for stage in traj.stages
        for u in stage.usage
    ]
    summary = cost_report(rows, _prices(config))
    body = summary.to_dict()
    pretty = []
    for tag, usage in body["per_tag"].items():
        cost = "unknown" if usage["cost_usd"] is None else f"${usage['cost_usd']:.4f}"
        pretty.append(
            f"{tag}: {usage['calls']} calls, {usage['prompt_tokens']} prompt + "
            f"{usage['completion_tokens']} completion tokens, {cost}"
        )
    total_cost = body["total"]["cost_usd"]
    pretty.append(f"total: {'unknown' if total_cost is None else f'${total_cost:.4f}'}")
    _emit(body, pretty, args.pretty)
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="stageflow", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (providers, planner, run, prices)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--pretty", action="store_true", help="human-readable tables on stderr")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("run", parents=[common], help="run tasks end to end")
    p.add_argument("--tasks", required=True)
    p.add_argument("--task-id")
    p.add_argument("--t-max", type=int)
    p.add_argument("--out", help="trajectory log output path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="benchmark sweep over a task file")
    p.add_argument("--tasks", required=True)
    p.add_argument("--method", choices=METHODS, default="stageflow")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--k", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--out", help="trajectory log output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-sft", parents=[common], help="export preferred pairs from logs")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("export-kto", parents=[common], help="export balanced preference pairs")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_kto)

    p = sub.add_parser("replay", parents=[common], help="render a trajectory log for humans")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate-plan", parents=[common], help="parse and validate a plan document")
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_validate_plan)

    p = sub.add_parser("theory-sweep", parents=[common], help="randomized planning-bound checks")
    p.add_argument("--instances", type=int, default=1000)
    p.set_defaults(func=cmd_theory_sweep)

    p = sub.add_parser("cost", parents=[common], help="token/cost totals over a trajectory log")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_cost)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
