"""Execution state, the keyed memory buffer, and trajectory persistence.

Each task run owns exactly one ExecutionState/MemoryBuffer pair. Memory is
append-only: operator outputs accumulate under canonical keys and are never
overwritten or evicted; runs are bounded by the planner's stage budget instead.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

from .graph import NODE_ID_RE, OperatorTemplate, StageSubgraph, memory_key

KEY_RE = re.compile(r"^s(\d+)\.([A-Za-z0-9_-]+)\.([A-Z_]+)$")

DOMAINS = ("social", "medical", "math", "logic", "code", "other")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    prompt: str
    domain: str = "other"
    gold: str | None = None
    grading_mode: str = "exact"

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be nonempty")
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")


@dataclass(frozen=True)
class MemoryRecord:
    key: str
    producer_node: str
    stage_index: int
    template: OperatorTemplate
    content: str | None = None
    token_usage: tuple[int, int] = (0, 0)
    error: str | None = None

    def __post_init__(self) -> None:
        if (self.content is None) == (self.error is None):
            raise ValueError("exactly one of content/error must be set")

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "producer_node": self.producer_node,
            "stage_index": self.stage_index,
            "template": self.template.value,
            "content": self.content,
            "prompt_tokens": self.token_usage[0],
            "completion_tokens": self.token_usage[1],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MemoryRecord":
        return cls(
            key=raw["key"],
            producer_node=raw["producer_node"],
            stage_index=raw["stage_index"],
            template=OperatorTemplate(raw["template"]),
            content=raw.get("content"),
            token_usage=(raw.get("prompt_tokens", 0), raw.get("completion_tokens", 0)),
            error=raw.get("error"),
        )


class MemoryBuffer:
    """Insertion-ordered key -> record store. Append-only; duplicate keys are a bug."""

    def __init__(self) -> None:
        self._records: dict[str, MemoryRecord] = {}

    def add(self, record: MemoryRecord) -> None:
        if record.key in self._records:
            raise KeyError(f"memory key {record.key!r} already exists (memory is append-only)")
        self._records[record.key] = record

    def get(self, key: str) -> MemoryRecord:
        return self._records[key]

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def keys(self) -> list[str]:
        return list(self._records)

    def records(self) -> list[MemoryRecord]:
        return list(self._records.values())

    def __iter__(self) -> Iterator[MemoryRecord]:
        return iter(self._records.values())


class StopKind(str, Enum):
    DESIGNER_TERMINATE = "designer_terminate"
    END_CONDITION = "end_condition"
    BUDGET_EXHAUSTED = "budget_exhausted"
    UNRECOVERABLE_ERROR = "unrecoverable_error"


@dataclass(frozen=True)
class StopReason:
    kind: StopKind
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail}


@dataclass(frozen=True)
class NodeExecution:
    """One executed node: either the memory key it stored, an error, or neither (TERMINATE)."""

    node_id: str
    key: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "key": self.key, "error": self.error}


@dataclass
class StageOutcome:
    stage_index: int
    executed_nodes: list[NodeExecution] = field(default_factory=list)
    skipped_nodes: list[str] = field(default_factory=list)
    terminate_signaled: bool = False

    def node_errors(self) -> list[str]:
        return [f"{n.node_id}: {n.error}" for n in self.executed_nodes if n.error is not None]

    def stored_keys(self) -> list[str]:
        return [n.key for n in self.executed_nodes if n.key is not None]

    def to_dict(self) -> dict:
        return {
            "stage_index": self.stage_index,
            "executed": [n.to_dict() for n in self.executed_nodes],
            "skipped": list(self.skipped_nodes),
            "terminate_signaled": self.terminate_signaled,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "StageOutcome":
        return cls(
            stage_index=raw["stage_index"],
            executed_nodes=[NodeExecution(e["node_id"], e.get("key"), e.get("error")) for e in raw["executed"]],
            skipped_nodes=list(raw.get("skipped", [])),
            terminate_signaled=raw.get("terminate_signaled", False),
        )


@dataclass
class ExecutionState:
    task: TaskSpec
    step: int = 0
    plan_history: list[StageSubgraph] = field(default_factory=list)
    stage_outcomes: list[StageOutcome] = field(default_factory=list)
    last_errors: list[str] = field(default_factory=list)
    terminated: StopReason | None = None


class StageMismatchError(Exception):
    pass


def init_state(task: TaskSpec) -> tuple[ExecutionState, MemoryBuffer]:
    return ExecutionState(task=task), MemoryBuffer()


def gen_memory_key(stage_index: int, node_id: str, template: OperatorTemplate) -> str:
    """Key a node's output is stored under; injective over (stage_index, node_id)."""
    if not NODE_ID_RE.match(node_id):
        raise ValueError(f"node id {node_id!r} may only contain [A-Za-z0-9_-]")
    return memory_key(stage_index, node_id, template)


def parse_memory_key(key: str) -> tuple[int, str, OperatorTemplate]:
    match = KEY_RE.match(key)
    if not match:
        raise ValueError(f"not a memory key: {key!r}")
    return int(match.group(1)), match.group(2), OperatorTemplate(match.group(3))


def update_state(state: ExecutionState, graph: StageSubgraph, outcome: StageOutcome) -> ExecutionState:
    """Advance the state by one executed stage; last_errors is whole-stage replacement."""
    if graph.stage_index != state.step:
        raise StageMismatchError(f"graph stage_index {graph.stage_index} != state step {state.step}")
    state.plan_history.append(graph)
    state.stage_outcomes.append(outcome)
    state.last_errors = outcome.node_errors()
    state.step += 1
    return state


# ---------------------------------------------------------------------------
# Trajectory persistence: one line-delimited record per stage, bracketed by a
# task header line and a result line. Files may hold several concatenated runs.


@dataclass
class CallUsage:
    tag: str
    model: str
    prompt_tokens: int
    completion_tokens: int

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "model": self.model,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CallUsage":
        return cls(raw["tag"], raw.get("model", ""), raw["prompt_tokens"], raw["completion_tokens"])


@dataclass
class StageLog:
    stage_index: int
    summary: str
    plan_doc: str
    outcome: StageOutcome
    memory_deltas: list[MemoryRecord] = field(default_factory=list)
    usage: list[CallUsage] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "type": "stage",
            "stage_index": self.stage_index,
            "summary": self.summary,
            "plan": self.plan_doc,
            "outcome": self.outcome.to_dict(),
            "memory_deltas": [r.to_dict() for r in self.memory_deltas],
            "usage": [u.to_dict() for u in self.usage],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "StageLog":
        return cls(
            stage_index=raw["stage_index"],
            summary=raw["summary"],
            plan_doc=raw["plan"],
            outcome=StageOutcome.from_dict(raw["outcome"]),
            memory_deltas=[MemoryRecord.from_dict(r) for r in raw.get("memory_deltas", [])],
            usage=[CallUsage.from_dict(u) for u in raw.get("usage", [])],
        )


@dataclass
class TrajectoryRecord:
    """One full task run: the unit trajectory logs and dataset exports work from."""

    task: TaskSpec
    stages: list[StageLog] = field(default_factory=list)
    final_answer: str = ""
    stop: StopReason | None = None
    success: bool | None = None

    @property
    def task_id(self) -> str:
        return self.task.task_id

    def usage_totals(self) -> dict[str, dict[str, int]]:
        totals: dict[str, dict[str, int]] = {}
        for stage in self.stages:
            for call in stage.usage:
                bucket = totals.setdefault(call.tag, {"prompt_tokens": 0, "completion_tokens": 0, "calls": 0})
                bucket["prompt_tokens"] += call.prompt_tokens
                bucket["completion_tokens"] += call.completion_tokens
                bucket["calls"] += 1
        return totals

    def to_log_lines(self) -> list[str]:
        lines = [
            json.dumps(
                {
                    "type": "task",
                    "task_id": self.task.task_id,
                    "domain": self.task.domain,
                    "prompt": self.task.prompt,
                    "gold": self.task.gold,
                    "grading_mode": self.task.grading_mode,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        ]
        for stage in self.stages:
            lines.append(json.dumps(stage.to_dict(), ensure_ascii=False, sort_keys=True))
        lines.append(
            json.dumps(
                {
                    "type": "result",
                    "final_answer": self.final_answer,
                    "stop": self.stop.to_dict() if self.stop else None,
                    "success": self.success,
                    "usage_totals": self.usage_totals(),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
        return lines

    def to_log_text(self) -> str:
        return "\n".join(self.to_log_lines()) + "\n"


def read_trajectories(text: str) -> list[TrajectoryRecord]:
    """Parse one or more concatenated run logs back into TrajectoryRecords."""
    runs: list[TrajectoryRecord] = []
    current: TrajectoryRecord | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        raw = json.loads(line)
        kind = raw.get("type")
        if kind == "task":
            current = TrajectoryRecord(
                task=TaskSpec(
                    task_id=raw["task_id"],
                    prompt=raw["prompt"],
                    domain=raw.get("domain", "other"),
                    gold=raw.get("gold"),
                    grading_mode=raw.get("grading_mode", "exact"),
                )
            )
            runs.append(current)
        elif kind == "stage":
            if current is None:
                raise ValueError(f"line {lineno}: stage record before any task header")
            current.stages.append(StageLog.from_dict(raw))
        elif kind == "result":
            if current is None:
                raise ValueError(f"line {lineno}: result record before any task header")
            current.final_answer = raw.get("final_answer", "")
            stop = raw.get("stop")
            current.stop = StopReason(StopKind(stop["kind"]), stop.get("detail", "")) if stop else None
            current.success = raw.get("success")
            current = None
        else:
            raise ValueError(f"line {lineno}: unknown record type {kind!r}")
    return runs
