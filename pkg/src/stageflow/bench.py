"""Benchmark harness: task loading, answer grading, pass@k, and method sweeps.

Grading modes are deliberately simple, fixture-pinned reconstructions:
exact/numeric/choice/word_list cover the text domains, and code delegates to
the external sandbox runner when one is installed.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import sandbox
from .executor import RunConfig, run_task
from .providers import ChatRequest, Ledger, ScriptedProvider, call, cost_report
from .state import CallUsage, StageLog, StageOutcome, TaskSpec, TrajectoryRecord

GRADING_MODES = ("exact", "numeric", "choice", "word_list", "code")
METHODS = ("stageflow", "vanilla", "cot")

COT_PREFIX = "Think step by step to solve the following problem, then state the final answer.\n\n"

NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?(?:[eE][-+]?\d+)?")
CHOICE_RE = re.compile(r"\b([A-Ea-e]|yes|no|maybe)\b", re.IGNORECASE)
NUMERIC_TOLERANCE = 1e-6


class SchemaError(Exception):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class UngradeableError(Exception):
    pass


class DomainError(ValueError):
    pass


def load_tasks(path: str | Path) -> list[TaskSpec]:
    """One task per JSONL line, in file order; schema problems name the line."""
    tasks: list[TaskSpec] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise SchemaError(lineno, "record must be an object")
        for required in ("task_id", "prompt"):
            if required not in raw:
                raise SchemaError(lineno, f"missing required field {required!r}")
        mode = raw.get("grading_mode", "exact")
        if mode not in GRADING_MODES:
            raise SchemaError(lineno, f"unknown grading_mode {mode!r}")
        try:
            tasks.append(
                TaskSpec(
                    task_id=str(raw["task_id"]),
                    prompt=str(raw["prompt"]),
                    domain=raw.get("domain", "other"),
                    gold=None if raw.get("gold") is None else str(raw["gold"]),
                    grading_mode=mode,
                )
            )
        except ValueError as exc:
            raise SchemaError(lineno, str(exc)) from exc
    return tasks


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def _last_number(text: str) -> float:
    matches = NUMBER_RE.findall(text)
    if not matches:
        raise UngradeableError(f"no number found in {text!r}")
    return float(matches[-1].replace(",", ""))


def _word_tokens(text: str) -> list[str]:
    return [tok.casefold() for tok in re.split(r"[,\s]+", text.strip()) if tok]


def grade_answer(answer: str, task: TaskSpec) -> bool:
    """Grade one answer against the task's gold target by its grading mode."""
    if task.gold is None:
        raise UngradeableError(f"task {task.task_id} has no gold target")
    mode = task.grading_mode
    if mode == "exact":
        return _normalize(answer) == _normalize(task.gold)
    if mode == "numeric":
        return abs(_last_number(answer) - float(task.gold.replace(",", ""))) <= NUMERIC_TOLERANCE
    if mode == "choice":
        candidates = CHOICE_RE.findall(answer)
        if not candidates:
            raise UngradeableError(f"no option token found in {answer!r}")
        return candidates[-1].casefold() == task.gold.strip().casefold()
    if mode == "word_list":
        return _word_tokens(answer) == _word_tokens(task.gold)
    if mode == "code":
        return sandbox.grade_code(answer, task.gold)
    raise UngradeableError(f"unknown grading mode {mode!r}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k)/C(n, k), in overflow-safe product form."""
    if not (0 <= c <= n) or not (1 <= k <= n):
        raise DomainError(f"pass_at_k domain violated: n={n}, c={c}, k={k}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    product = 1.0
    for i in range(k):
        product *= (n - c - i) / (n - i)
    return 1.0 - product


@dataclass
class SampleOutcome:
    task_id: str
    sample_index: int
    correct: bool
    answer: str
    usage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "sample_index": self.sample_index,
            "correct": self.correct,
            "answer": self.answer,
            "usage": self.usage,
        }


@dataclass
class BenchReport:
    method: str
    per_domain_accuracy: dict[str, float] = field(default_factory=dict)
    accuracy: float = 0.0
    pass_at_k: dict[int, float] = field(default_factory=dict)
    totals: dict = field(default_factory=dict)
    outcomes: list[SampleOutcome] = field(default_factory=list)
    trajectories: list[TrajectoryRecord] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "per_domain_accuracy": dict(sorted(self.per_domain_accuracy.items())),
            "pass_at_k": {str(k): v for k, v in sorted(self.pass_at_k.items())},
            "totals": self.totals,
            "seeds": self.seeds,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }


def _single_call_method(task: TaskSpec, cfg: RunConfig, prefix: str, ledger: Ledger) -> TrajectoryRecord:
    """vanilla / cot baselines: one executor call over the (prefixed) raw prompt."""
    trajectory = TrajectoryRecord(task=task)
    result = call(cfg.executor_provider, ChatRequest(user=prefix + task.prompt, tag="executor"), ledger)
    usage = [CallUsage("executor", cfg.executor_provider.model_name, result.prompt_tokens, result.completion_tokens)]
    trajectory.stages.append(
        StageLog(
            stage_index=0,
            summary=task.prompt,
            plan_doc="",
            outcome=StageOutcome(stage_index=0),
            memory_deltas=[],
            usage=usage,
        )
    )
    trajectory.final_answer = result.text
    return trajectory


def _run_sample(task: TaskSpec, method: str, cfg: RunConfig) -> TrajectoryRecord:
    if method == "stageflow":
        return run_task(task, cfg).trajectory
    ledger = Ledger()
    prefix = COT_PREFIX if method == "cot" else ""
    return _single_call_method(task, cfg, prefix, ledger)


def _uses_scripted(cfg: RunConfig) -> bool:
    return any(
        isinstance(p, ScriptedProvider)
        for p in (cfg.executor_provider, cfg.planner.designer, cfg.planner.summarizer)
        if p is not None
    )


def run_benchmark(
    tasks: Sequence[TaskSpec],
    method: str,
    cfg: RunConfig,
    n_samples: int = 1,
    seeds: Sequence[int] | None = None,
    workers: int = 4,
) -> BenchReport:
    """Run each task n_samples times and aggregate accuracy and pass@k.

    Sample 0 defines headline accuracy. Task-level failures grade as incorrect
    and never abort the sweep. Scripted providers force sequential execution so
    FIFO queues stay aligned with the task order.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(n_samples))
    if len(seeds) < n_samples:
        raise ValueError("need at least one seed per sample")

    report = BenchReport(method=method, seeds=list(seeds[:n_samples]))
    results: dict[tuple[str, int], SampleOutcome] = {}
    trajectories: dict[tuple[str, int], TrajectoryRecord] = {}
    results_lock = threading.Lock()

    def one(task: TaskSpec, sample_index: int) -> None:
        answer = ""
        correct = False
        trajectory = None
        try:
            trajectory = _run_sample(task, method, cfg)
            answer = trajectory.final_answer
            correct = grade_answer(answer, task) if task.gold is not None else False
        except Exception:
            correct = False
        if trajectory is not None:
            trajectory.success = correct
        outcome = SampleOutcome(
            task_id=task.task_id,
            sample_index=sample_index,
            correct=correct,
            answer=answer,
            usage=trajectory.usage_totals() if trajectory is not None else {},
        )
        with results_lock:
            results[(task.task_id, sample_index)] = outcome
            if trajectory is not None:
                trajectories[(task.task_id, sample_index)] = trajectory

    jobs = [(task, i) for i in range(n_samples) for task in tasks]
    if _uses_scripted(cfg) or workers <= 1:
        for task, i in jobs:
            one(task, i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda job: one(*job), jobs))

    # Deterministic reduction: everything keyed and ordered by (task_id, sample).
    ordered_tasks = sorted({t.task_id: t for t in tasks}.items())
    report.outcomes = [
        results[(task_id, i)] for task_id, _ in ordered_tasks for i in range(n_samples) if (task_id, i) in results
    ]
    report.trajectories = [
        trajectories[(task_id, i)]
        for task_id, _ in ordered_tasks
        for i in range(n_samples)
        if (task_id, i) in trajectories
    ]

    by_domain: dict[str, list[bool]] = {}
    firsts: list[bool] = []
    for task_id, task in ordered_tasks:
        sample0 = results.get((task_id, 0))
        if sample0 is None:
            continue
        firsts.append(sample0.correct)
        by_domain.setdefault(task.domain, []).append(sample0.correct)
    report.accuracy = sum(firsts) / len(firsts) if firsts else 0.0
    report.per_domain_accuracy = {d: sum(v) / len(v) for d, v in by_domain.items()}

    for k in range(1, n_samples + 1):
        rates = []
        for task_id, _ in ordered_tasks:
            samples = [results[(task_id, i)] for i in range(n_samples) if (task_id, i) in results]
            if len(samples) < n_samples:
                continue
            c = sum(1 for s in samples if s.correct)
            rates.append(pass_at_k(n_samples, c, k))
        if rates:
            report.pass_at_k[k] = sum(rates) / len(rates)

    ledger_rows = [
        (u.tag, u.model, u.prompt_tokens, u.completion_tokens)
        for traj in report.trajectories
        for stage in traj.stages
        for u in stage.usage
    ]
    report.totals = cost_report(ledger_rows).to_dict()
    return report


def operator_usage_histogram(
    trajectories: Sequence[TrajectoryRecord], by_domain: bool = False
) -> dict[str, int] | dict[str, dict[str, int]]:
    """Count executed (not skipped) operator instances per template.

    Node templates come from each stage's plan document, so the histogram works
    directly off persisted logs. With by_domain=True, counts nest under the
    task's domain.
    """
    from .graph import OperatorTemplate, parse_plan

    def empty() -> dict[str, int]:
        return {t.value: 0 for t in OperatorTemplate}

    flat = empty()
    nested: dict[str, dict[str, int]] = {}
    for trajectory in trajectories:
        domain_counts = nested.setdefault(trajectory.task.domain, empty())
        for stage in trajectory.stages:
            if not stage.plan_doc:
                continue
            graph = parse_plan(stage.plan_doc, stage_index=stage.stage_index)
            templates = {n.node_id: n.template for n in graph.nodes}
            for execution in stage.outcome.executed_nodes:
                template = templates.get(execution.node_id)
                if template is None:
                    continue
                flat[template.value] += 1
                domain_counts[template.value] += 1
    return nested if by_domain else flat
