"""Task loading, grading modes, pass@k, benchmark sweeps, and usage histograms."""

from __future__ import annotations

import itertools
import json

import pytest

from stageflow import TaskSpec, grade_answer, load_tasks, operator_usage_histogram, pass_at_k, run_benchmark
from stageflow.bench import DomainError, SchemaError, UngradeableError
from stageflow import PlannerConfig, RunConfig, ScriptedProvider

from conftest import golden_run_config


def write_tasks(tmp_path, rows):
    path = tmp_path / "tasks.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


class TestLoadTasks:
    def test_three_line_file_in_order(self, tmp_path):
        rows = [
            {"task_id": f"t{i}", "domain": "math", "prompt": f"p{i}", "gold": "1", "grading_mode": "numeric"}
            for i in range(3)
        ]
        tasks = load_tasks(write_tasks(tmp_path, rows))
        assert [t.task_id for t in tasks] == ["t0", "t1", "t2"]

    def test_missing_prompt_names_line(self, tmp_path):
        rows = [{"task_id": "a", "prompt": "x"}, {"task_id": "b"}]
        with pytest.raises(SchemaError) as excinfo:
            load_tasks(write_tasks(tmp_path, rows))
        assert excinfo.value.line == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert load_tasks(path) == []


class TestGradeAnswer:
    def grade(self, answer, gold, mode):
        task = TaskSpec("t", "p", gold=gold, grading_mode=mode)
        return grade_answer(answer, task)

    def test_numeric_last_number(self):
        assert self.grade("The answer is 16", "16", "numeric")
        assert self.grade("first 3, then 5, finally 16.0", "16", "numeric")
        assert not self.grade("The answer is 15", "16", "numeric")

    def test_numeric_tolerance(self):
        assert self.grade("0.333335", str(1 / 3), "numeric") is False  # off by ~1.7e-6
        assert self.grade("0.3333335", str(1 / 3), "numeric") is True  # off by ~1.7e-7

    def test_word_list(self):
        assert self.grade("yes, yes, no", "yes, yes, no", "word_list")
        assert self.grade("Yes,  YES , no", "yes, yes, no", "word_list")
        assert not self.grade("yes, no, no", "yes, yes, no", "word_list")

    def test_choice(self):
        assert not self.grade("B", "C", "choice")
        assert self.grade("I think the answer is (C). Final: C", "C", "choice")
        assert self.grade("the study says yes", "yes", "choice")

    def test_exact_normalization(self):
        assert self.grade("  The   Answer ", "the answer", "exact")
        assert not self.grade("another answer", "the answer", "exact")

    def test_ungradeable(self):
        with pytest.raises(UngradeableError):
            self.grade("no numbers here", "4", "numeric")
        with pytest.raises(UngradeableError):
            grade_answer("x", TaskSpec("t", "p", gold=None))


class TestPassAtK:
    def enumerate_rate(self, n, c, k):
        """Oracle: fraction of k-subsets containing at least one correct sample."""
        outcomes = [1] * c + [0] * (n - c)
        subsets = list(itertools.combinations(range(n), k))
        hits = sum(1 for subset in subsets if any(outcomes[i] for i in subset))
        return hits / len(subsets)

    def test_all_correct(self):
        for k in range(1, 6):
            assert pass_at_k(5, 5, k) == 1.0

    def test_none_correct(self):
        for k in range(1, 6):
            assert pass_at_k(5, 0, k) == 0.0

    def test_matches_enumeration(self):
        assert pass_at_k(5, 2, 1) == pytest.approx(0.4, abs=1e-12)
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k(n, c, k) == pytest.approx(self.enumerate_rate(n, c, k), abs=1e-12)

    def test_monotonicity(self):
        for n in range(1, 9):
            for c in range(n + 1):
                rates = [pass_at_k(n, c, k) for k in range(1, n + 1)]
                assert rates == sorted(rates)
            for k in range(1, n + 1):
                by_c = [pass_at_k(n, c, k) for c in range(n + 1)]
                assert by_c == sorted(by_c)

    def test_domain_errors(self):
        for n, c, k in [(5, 6, 1), (5, -1, 1), (5, 2, 0), (5, 2, 6)]:
            with pytest.raises(DomainError):
                pass_at_k(n, c, k)


def fixture_tasks():
    return [
        TaskSpec("q1", "1+1?", domain="math", gold="2", grading_mode="numeric"),
        TaskSpec("q2", "2+2?", domain="math", gold="4", grading_mode="numeric"),
        TaskSpec("q3", "cap of France?", domain="other", gold="paris", grading_mode="exact"),
        TaskSpec("q4", "yes or no?", domain="logic", gold="yes", grading_mode="choice"),
    ]


def vanilla_cfg(answers):
    return RunConfig(
        planner=PlannerConfig(designer=ScriptedProvider()),
        executor_provider=ScriptedProvider({"executor": list(answers)}),
    )


class TestRunBenchmark:
    def test_vanilla_all_correct(self):
        report = run_benchmark(fixture_tasks(), "vanilla", vanilla_cfg(["2", "4", "Paris", "yes"]))
        assert report.accuracy == 1.0
        assert report.per_domain_accuracy == {"math": 1.0, "other": 1.0, "logic": 1.0}

    def test_half_correct(self):
        report = run_benchmark(fixture_tasks(), "vanilla", vanilla_cfg(["2", "5", "London", "yes"]))
        assert report.accuracy == 0.5

    def test_cot_prefixes_prompt(self):
        executor = ScriptedProvider({"executor": ["2", "4", "Paris", "yes"]})
        cfg = RunConfig(planner=PlannerConfig(designer=ScriptedProvider()), executor_provider=executor)
        run_benchmark(fixture_tasks(), "cot", cfg)
        assert executor.calls[0].user.startswith("Think step by step")
        assert "1+1?" in executor.calls[0].user

    def test_engine_method_runs_full_loop(self, math_task):
        report = run_benchmark([math_task], "stageflow", golden_run_config())
        assert report.accuracy == 1.0
        assert report.trajectories[0].success is True
        assert len(report.trajectories[0].stages) == 2

    def test_failures_grade_incorrect_without_aborting(self):
        report = run_benchmark(fixture_tasks(), "vanilla", vanilla_cfg(["2"]))  # queue starves after q1
        assert report.accuracy == 0.25

    def test_pass_at_k_column(self):
        # 3 samples per task; per-task correct counts c = (3, 0, 1, 2).
        tasks = fixture_tasks()
        answers = {
            "q1": ["2", "2", "2"],
            "q2": ["x", "x", "x"],
            "q3": ["paris", "no", "no"],
            "q4": ["yes", "yes", "maybe"],
        }
        # Queue order: sample-major (all tasks sample 0, then sample 1, ...).
        queue = [answers[t.task_id][i] for i in range(3) for t in tasks]
        report = run_benchmark(tasks, "vanilla", vanilla_cfg(queue), n_samples=3)
        expected = {
            k: sum(pass_at_k(3, c, k) for c in (3, 0, 1, 2)) / 4 for k in (1, 2, 3)
        }
        for k, want in expected.items():
            assert report.pass_at_k[k] == pytest.approx(want, abs=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_benchmark(fixture_tasks(), "self-consistency", vanilla_cfg([]))

    def test_accuracy_matches_independent_recomputation(self, math_task):
        report = run_benchmark([math_task], "stageflow", golden_run_config())
        regraded = [
            grade_answer(o.answer, t)
            for o in report.outcomes
            if o.sample_index == 0
            for t in [math_task]
            if t.task_id == o.task_id
        ]
        assert report.accuracy == sum(regraded) / len(regraded)


class TestOperatorUsageHistogram:
    def test_empty(self):
        counts = operator_usage_histogram([])
        assert set(counts) == {t.value for t in __import__("stageflow").OperatorTemplate}
        assert all(v == 0 for v in counts.values())

    def test_counts_executed_not_skipped(self, math_task):
        report = run_benchmark([math_task], "stageflow", golden_run_config())
        counts = operator_usage_histogram(report.trajectories)
        assert counts["GENERATE_ANSWER"] == 1
        assert counts["ORGANIZE_SOLUTION"] == 1
        assert counts["TERMINATE"] == 1
        assert counts["REVIEW_SOLUTION"] == 0

    def test_matches_bruteforce_log_scan(self, math_task):
        from stageflow import parse_plan

        trajectories = [run_benchmark([math_task], "stageflow", golden_run_config()).trajectories[0] for _ in range(3)]
        counts = operator_usage_histogram(trajectories)
        brute: dict[str, int] = {}
        for trajectory in trajectories:
            for stage in trajectory.stages:
                graph = parse_plan(stage.plan_doc, stage.stage_index)
                templates = {n.node_id: n.template.value for n in graph.nodes}
                for execution in stage.outcome.executed_nodes:
                    brute[templates[execution.node_id]] = brute.get(templates[execution.node_id], 0) + 1
        for template, count in brute.items():
            assert counts[template] == count

    def test_by_domain_grouping(self, math_task):
        report = run_benchmark([math_task], "stageflow", golden_run_config())
        nested = operator_usage_histogram(report.trajectories, by_domain=True)
        assert nested["math"]["GENERATE_ANSWER"] == 1
