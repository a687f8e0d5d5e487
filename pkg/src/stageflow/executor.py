"""Stage execution and the per-task run loop.

A validated stage subgraph executes sequentially in deterministic topological
order: each node resolves its input keys against memory, renders its operator
prompt, calls the executor provider, and stores the output under its canonical
key. The loop (summarize -> plan -> execute -> update -> terminate check)
repeats until the designer signals completion, an end condition holds, the
stage budget runs out, or an unrecoverable error occurs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .graph import EndConditionKind, OperatorTemplate, StageSubgraph, memory_key, topological_order
from .planner import PlannedStage, PlannerConfig, PlanRejectedError, summarize, plan_stage
from .prompts import render_operator_prompt
from .providers import ChatRequest, Ledger, Provider, ProviderError, call
from .state import (
    CallUsage,
    ExecutionState,
    MemoryBuffer,
    MemoryRecord,
    NodeExecution,
    StageLog,
    StageOutcome,
    StopKind,
    StopReason,
    TaskSpec,
    TrajectoryRecord,
    init_state,
    update_state,
)

VERDICT_MARKER = re.compile(r"overall verdict", re.IGNORECASE)
VERDICT_TOKEN = re.compile(r"(accept|minor_issues|major_issues|reject)", re.IGNORECASE)


class Verdict(str, Enum):
    ACCEPT = "accept"
    MINOR_ISSUES = "minor_issues"
    MAJOR_ISSUES = "major_issues"
    REJECT = "reject"
    UNPARSEABLE = "unparseable"


@dataclass
class RunConfig:
    planner: PlannerConfig
    executor_provider: Provider | None = None
    answer_extraction: str = "last_organize"
    node_failure_policy: str = "skip_dependents"

    def __post_init__(self) -> None:
        if self.answer_extraction not in ("last_organize", "last_node"):
            raise ValueError(f"unknown answer_extraction {self.answer_extraction!r}")
        if self.node_failure_policy not in ("skip_dependents", "abort_stage"):
            raise ValueError(f"unknown node_failure_policy {self.node_failure_policy!r}")


@dataclass
class RunResult:
    final_answer: str
    stop: StopReason
    trajectory: TrajectoryRecord
    usage: dict = field(default_factory=dict)

    def machine_record(self) -> dict:
        return {
            "task_id": self.trajectory.task_id,
            "final_answer": self.final_answer,
            "stop": self.stop.to_dict(),
            "stages": len(self.trajectory.stages),
            "usage": self.usage,
        }


def _dependents(graph: StageSubgraph, node_id: str) -> set[str]:
    succ: dict[str, set[str]] = {n.node_id: set() for n in graph.nodes}
    for u, v in graph.edges:
        succ[u].add(v)
    seen: set[str] = set()
    frontier = [node_id]
    while frontier:
        for nxt in succ[frontier.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def _assemble_context(node_keys: tuple[str, ...], memory: MemoryBuffer) -> str:
    """Inputs resolved in listed order, each labeled by its memory key."""
    blocks = []
    for key in node_keys:
        record = memory.get(key)
        blocks.append(f"[{key}]\n{record.content or ''}")
    return "\n\n".join(blocks)


def execute_stage(
    graph: StageSubgraph,
    state: ExecutionState,
    memory: MemoryBuffer,
    cfg: RunConfig,
    ledger: Ledger | None = None,
) -> StageOutcome:
    """Run one validated stage against memory; node failures are data, not crashes."""
    if graph.stage_index != state.step:
        raise ValueError(f"graph stage_index {graph.stage_index} != state step {state.step}")
    if cfg.executor_provider is None:
        raise ValueError("run config has no executor provider")

    outcome = StageOutcome(stage_index=graph.stage_index)
    order = topological_order(graph)
    node_map = graph.node_map
    skipped: set[str] = set()
    abort = False

    for node_id in order:
        node = node_map[node_id]
        if node_id in skipped or abort:
            if node_id not in skipped:
                skipped.add(node_id)
            continue

        if node.template is OperatorTemplate.TERMINATE:
            outcome.terminate_signaled = True
            outcome.executed_nodes.append(NodeExecution(node_id))
            continue

        missing = [k for k in node.input_keys if k not in memory]
        if missing:
            error = f"UNRESOLVED_KEY: {', '.join(missing)}"
        else:
            error = None
            context = _assemble_context(node.input_keys, memory)
            prompt = render_operator_prompt(node.template, context, node.instruction)
            try:
                result = call(cfg.executor_provider, ChatRequest(user=prompt, tag="executor"), ledger)
            except ProviderError as exc:
                error = f"{type(exc).__name__}: {exc}"

        if error is not None:
            # Errors live on the outcome (and state.last_errors), never in memory:
            # a failed node's key must stay unresolvable for its dependents.
            outcome.executed_nodes.append(NodeExecution(node_id, error=error))
            if cfg.node_failure_policy == "abort_stage":
                abort = True
            else:
                skipped.update(_dependents(graph, node_id))
            continue

        key = memory_key(graph.stage_index, node_id, node.template)
        memory.add(
            MemoryRecord(
                key=key,
                producer_node=node_id,
                stage_index=graph.stage_index,
                template=node.template,
                content=result.text,
                token_usage=(result.prompt_tokens, result.completion_tokens),
            )
        )
        outcome.executed_nodes.append(NodeExecution(node_id, key=key))

    outcome.skipped_nodes = sorted(skipped)
    return outcome


def parse_review_verdict(review_text: str) -> Verdict:
    """Token after the last "Overall Verdict:" line; UNPARSEABLE when absent."""
    marker_line = None
    for line in review_text.splitlines():
        if VERDICT_MARKER.search(line):
            marker_line = line
    if marker_line is None:
        return Verdict.UNPARSEABLE
    remainder = marker_line[VERDICT_MARKER.search(marker_line).end() :]
    match = VERDICT_TOKEN.search(remainder)
    if not match:
        return Verdict.UNPARSEABLE
    return Verdict(match.group(1).lower())


def check_termination(
    outcome: StageOutcome,
    graph: StageSubgraph,
    state: ExecutionState,
    memory: MemoryBuffer,
    t: int,
    t_max: int,
) -> StopReason | None:
    """Decide whether the run stops after stage t. Terminate signal wins, then
    end conditions, then the stage budget; None means continue."""
    if outcome.terminate_signaled:
        return StopReason(StopKind.DESIGNER_TERMINATE)
    for condition in graph.end_conditions:
        if condition.kind is EndConditionKind.DESIGNER_TERMINATE:
            continue  # equivalent to the terminate signal, already checked
        if condition.kind is EndConditionKind.VERDICT_ACCEPT:
            node_id = condition.param("node")
            if node_id is None or node_id not in graph.node_map:
                continue
            key = graph.output_key(node_id)
            if key in memory and memory.get(key).content is not None:
                if parse_review_verdict(memory.get(key).content) is Verdict.ACCEPT:
                    return StopReason(StopKind.END_CONDITION, f"verdict_accept: {node_id}")
        elif condition.kind is EndConditionKind.ANSWER_PRESENT:
            key = condition.param("key")
            if key is not None and key in memory and memory.get(key).content is not None:
                return StopReason(StopKind.END_CONDITION, f"answer_present: {key}")
    if t + 1 >= t_max:
        return StopReason(StopKind.BUDGET_EXHAUSTED)
    return None


def extract_answer(memory: MemoryBuffer, mode: str) -> str:
    records = [r for r in memory.records() if r.content is not None]
    if mode == "last_organize":
        organized = [r for r in records if r.template is OperatorTemplate.ORGANIZE_SOLUTION]
        if organized:
            return organized[-1].content or ""
    non_control = [r for r in records if r.template is not OperatorTemplate.TERMINATE]
    if non_control:
        return non_control[-1].content or ""
    return ""


def run_task(task: TaskSpec, cfg: RunConfig) -> RunResult:
    """Drive one task end to end; total for arbitrary provider behavior.

    Designer failures become an unrecoverable stop, node failures surface as
    error signals the next plan can react to, and the stage budget bounds the
    loop unconditionally.
    """
    state, memory = init_state(task)
    ledger = Ledger()
    trajectory = TrajectoryRecord(task=task)
    t_max = cfg.planner.max_stages
    stop: StopReason | None = None

    while stop is None:
        t = state.step
        calls_before = len(ledger)
        records_before = len(memory)
        summary = summarize(state, memory, cfg.planner, ledger)
        try:
            planned: PlannedStage = plan_stage(
                summary, t, cfg.planner, ledger, frozenset(memory.keys())
            )
        except PlanRejectedError as exc:
            stop = StopReason(StopKind.UNRECOVERABLE_ERROR, f"plan rejected: {exc.detail}")
            break

        outcome = execute_stage(planned.graph, state, memory, cfg, ledger)
        update_state(state, planned.graph, outcome)

        new_records = memory.records()[records_before:]
        stage_usage = [
            CallUsage(e.tag, e.model, e.result.prompt_tokens, e.result.completion_tokens)
            for e in ledger.entries()[calls_before:]
        ]
        trajectory.stages.append(
            StageLog(
                stage_index=planned.graph.stage_index,
                summary=summary.text,
                plan_doc=_canonical_plan(planned.graph),
                outcome=outcome,
                memory_deltas=new_records,
                usage=stage_usage,
            )
        )

        stage_stored = any(n.key is not None for n in outcome.executed_nodes)
        if not stage_stored and not outcome.terminate_signaled:
            stop = StopReason(StopKind.UNRECOVERABLE_ERROR, "stage produced no output")
            break
        stop = check_termination(outcome, planned.graph, state, memory, t, t_max)

    state.terminated = stop
    final_answer = "" if stop.kind is StopKind.UNRECOVERABLE_ERROR else extract_answer(memory, cfg.answer_extraction)
    trajectory.final_answer = final_answer
    trajectory.stop = stop
    usage = trajectory.usage_totals()
    return RunResult(final_answer=final_answer, stop=stop, trajectory=trajectory, usage=usage)


def _canonical_plan(graph: StageSubgraph) -> str:
    from .graph import serialize_plan

    return serialize_plan(graph)
