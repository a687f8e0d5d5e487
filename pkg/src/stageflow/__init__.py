"""stageflow: feedback-driven staged reasoning workflows.

A designer policy plans each stage as a small DAG of operator instances, an
executor runs the DAG against an append-only keyed memory, and the loop
replans from intermediate outcomes until the designer terminates, an end
condition holds, or the stage budget runs out.
"""

from .graph import (
    EndCondition,
    EndConditionKind,
    GraphCycleError,
    OperatorInstance,
    OperatorTemplate,
    PlanParseError,
    StageSubgraph,
    ValidationReport,
    ViolationCode,
    parse_plan,
    serialize_plan,
    topological_order,
    validate_subgraph,
)
from .state import (
    ExecutionState,
    MemoryBuffer,
    MemoryRecord,
    StageOutcome,
    StopKind,
    StopReason,
    TaskSpec,
    TrajectoryRecord,
    gen_memory_key,
    init_state,
    parse_memory_key,
    read_trajectories,
    update_state,
)
from .planner import PlannedStage, PlannerConfig, PlanRejectedError, StateSummary, plan_stage, summarize
from .prompts import render_designer_prompt, render_operator_prompt
from .providers import (
    ChatRequest,
    CompletionResult,
    HttpChatProvider,
    Ledger,
    Provider,
    ProviderRef,
    ScriptedProvider,
    build_provider,
    cost_report,
)
from .executor import RunConfig, RunResult, Verdict, check_termination, execute_stage, parse_review_verdict, run_task
from .bench import (
    BenchReport,
    SampleOutcome,
    grade_answer,
    load_tasks,
    operator_usage_histogram,
    pass_at_k,
    run_benchmark,
)
from .exporter import PreferenceExample, export_kto, export_sft, label_trajectory

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "ChatRequest",
    "CompletionResult",
    "EndCondition",
    "EndConditionKind",
    "ExecutionState",
    "GraphCycleError",
    "HttpChatProvider",
    "Ledger",
    "MemoryBuffer",
    "MemoryRecord",
    "OperatorInstance",
    "OperatorTemplate",
    "PlanParseError",
    "PlanRejectedError",
    "PlannedStage",
    "PlannerConfig",
    "PreferenceExample",
    "Provider",
    "ProviderRef",
    "RunConfig",
    "RunResult",
    "SampleOutcome",
    "ScriptedProvider",
    "StageOutcome",
    "StageSubgraph",
    "StateSummary",
    "StopKind",
    "StopReason",
    "TaskSpec",
    "TrajectoryRecord",
    "ValidationReport",
    "Verdict",
    "ViolationCode",
    "build_provider",
    "check_termination",
    "cost_report",
    "execute_stage",
    "export_kto",
    "export_sft",
    "gen_memory_key",
    "grade_answer",
    "init_state",
    "label_trajectory",
    "load_tasks",
    "operator_usage_histogram",
    "parse_memory_key",
    "parse_plan",
    "parse_review_verdict",
    "pass_at_k",
    "plan_stage",
    "read_trajectories",
    "render_designer_prompt",
    "render_operator_prompt",
    "run_benchmark",
    "run_task",
    "serialize_plan",
    "summarize",
    "topological_order",
    "update_state",
    "validate_subgraph",
]
