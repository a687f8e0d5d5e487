"""State summarization and the designer interface.

The planner condenses the execution state into a summary, prompts the designer
for the next stage subgraph, and runs a parse/validate/repair loop: rejected
plans are re-requested with the violation messages appended, up to a bounded
number of retries.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import PlanParseError, StageSubgraph, ValidationReport, parse_plan, validate_subgraph
from .prompts import render_designer_prompt
from .providers import ChatRequest, Ledger, Provider, ProviderError, call
from .state import ExecutionState, MemoryBuffer

SUMMARIZER_PROMPT = """Condense the following problem-solving state into a short working summary. \
Keep the task, what has been produced so far, anything still missing, and any error signals. \
Plain text only.

{digest}"""

REPAIR_SUFFIX = """

Your previous plan was rejected:
{violations}

Previous attempt:
{previous}

Output one corrected plan document and nothing else."""


@dataclass(frozen=True)
class StateSummary:
    text: str
    char_budget: int
    truncated: bool = False

    def __post_init__(self) -> None:
        if len(self.text) > self.char_budget:
            raise ValueError("summary text exceeds its char budget")


@dataclass
class PlannerConfig:
    designer: Provider | None = None
    summarizer: Provider | None = None
    max_stages: int = 6
    parse_retries: int = 2
    summary_char_budget: int = 4000

    def __post_init__(self) -> None:
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")
        if self.parse_retries < 0:
            raise ValueError("parse_retries must be >= 0")


class PlanRejectedError(Exception):
    """Raised when every designer attempt failed to parse or validate."""

    def __init__(self, attempts: int, report: ValidationReport | None, detail: str) -> None:
        super().__init__(f"plan rejected after {attempts} attempts: {detail}")
        self.attempts = attempts
        self.report = report
        self.detail = detail


@dataclass
class PlannedStage:
    """A validated subgraph plus how it was obtained (attempt count, raw text)."""

    graph: StageSubgraph
    attempts: int
    raw_text: str


def _fit(text: str, budget: int) -> StateSummary:
    if len(text) > budget:
        return StateSummary(text[:budget], budget, truncated=True)
    return StateSummary(text, budget, truncated=False)


def structural_digest(state: ExecutionState, memory: MemoryBuffer) -> str:
    """Deterministic summary fallback: task, latest stage's records newest-first, errors."""
    parts = [f"Task: {state.task.prompt}"]
    if state.plan_history:
        latest = state.plan_history[-1]
        parts.append(f"Completed stages: {state.step}. Latest subgoal: {latest.subgoal or '(none)'}")
    if state.stage_outcomes:
        outcome = state.stage_outcomes[-1]
        records = [memory.get(key) for key in outcome.stored_keys() if key in memory]
        for record in reversed(records):
            parts.append(f"[{record.key}]\n{record.content or ''}")
        if outcome.terminate_signaled:
            parts.append("Designer signaled terminate last stage.")
    if state.last_errors:
        parts.append("Errors: " + "; ".join(state.last_errors))
    return "\n\n".join(parts)


def summarize(
    state: ExecutionState,
    memory: MemoryBuffer,
    cfg: PlannerConfig,
    ledger: Ledger | None = None,
) -> StateSummary:
    """Condense the state for the designer.

    At step 0 the summary is exactly the task prompt. Later steps use the
    summarizer provider when configured; provider failure (or no summarizer)
    falls back to the structural digest — summarization is never fatal.
    """
    budget = cfg.summary_char_budget
    if state.step == 0:
        return _fit(state.task.prompt, budget)
    digest = structural_digest(state, memory)
    if cfg.summarizer is not None:
        request = ChatRequest(user=SUMMARIZER_PROMPT.replace("{digest}", digest), tag="summarizer")
        try:
            result = call(cfg.summarizer, request, ledger)
            return _fit(result.text, budget)
        except ProviderError:
            pass
    return _fit(digest, budget)


def plan_stage(
    summary: StateSummary,
    state_step: int,
    cfg: PlannerConfig,
    ledger: Ledger | None = None,
    memory_keys: set[str] | frozenset[str] = frozenset(),
) -> PlannedStage:
    """Ask the designer for the next stage subgraph, repairing rejected output.

    Never returns an invalid graph: every attempt is parsed and validated, and the
    violation messages are appended to the re-prompt. After parse_retries + 1
    failed attempts, raises PlanRejectedError.
    """
    if cfg.designer is None:
        raise ValueError("planner has no designer provider configured")
    if state_step >= cfg.max_stages:
        raise ValueError(f"state step {state_step} is out of budget (max_stages={cfg.max_stages})")

    base_prompt = render_designer_prompt(summary.text)
    prompt = base_prompt
    attempts = cfg.parse_retries + 1
    last_report: ValidationReport | None = None
    last_detail = ""
    for attempt in range(1, attempts + 1):
        try:
            result = call(cfg.designer, ChatRequest(user=prompt, tag="designer"), ledger)
        except ProviderError as exc:
            last_detail = f"designer provider failure: {exc}"
            continue
        try:
            graph = parse_plan(result.text, stage_index=state_step)
        except (PlanParseError, ValueError) as exc:
            last_detail = str(exc)
            prompt = base_prompt + REPAIR_SUFFIX.replace("{violations}", f"- {exc}").replace(
                "{previous}", result.text
            )
            continue
        report = validate_subgraph(graph, memory_keys)
        if report.valid:
            return PlannedStage(graph=graph, attempts=attempt, raw_text=result.text)
        last_report = report
        last_detail = "; ".join(report.messages())
        violations = "\n".join(f"- {msg}" for msg in report.messages())
        prompt = base_prompt + REPAIR_SUFFIX.replace("{violations}", violations).replace(
            "{previous}", result.text
        )
    raise PlanRejectedError(attempts, last_report, last_detail)
