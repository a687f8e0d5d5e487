"""Trajectory labeling and SFT/KTO dataset export."""

from __future__ import annotations

import json

import pytest

from stageflow import TaskSpec, export_kto, export_sft, label_trajectory, parse_plan
from stageflow.exporter import DISCARDED, PREFERRED
from stageflow.state import StageLog, StageOutcome, TrajectoryRecord

from conftest import STAGE0_PLAN, golden_run_config
from stageflow import run_task


def make_trajectory(task_id: str, n_stages: int, success: bool) -> TrajectoryRecord:
    trajectory = TrajectoryRecord(task=TaskSpec(task_id, f"prompt {task_id}"))
    plan = parse_plan(STAGE0_PLAN, stage_index=0)
    from stageflow import serialize_plan

    for i in range(n_stages):
        trajectory.stages.append(
            StageLog(
                stage_index=i,
                summary=f"summary {task_id} {i}",
                plan_doc=serialize_plan(parse_plan(STAGE0_PLAN, stage_index=i)),
                outcome=StageOutcome(stage_index=i),
            )
        )
    trajectory.success = success
    return trajectory


class TestLabelTrajectory:
    def test_success_yields_preferred(self):
        examples = label_trajectory(make_trajectory("a", 3, True))
        assert len(examples) == 3
        assert all(ex.label == PREFERRED for ex in examples)

    def test_failure_yields_discarded(self):
        examples = label_trajectory(make_trajectory("a", 2, False))
        assert len(examples) == 2
        assert all(ex.label == DISCARDED for ex in examples)

    def test_zero_stage_trajectory(self):
        assert label_trajectory(make_trajectory("a", 0, False)) == []

    def test_ungraded_trajectory_rejected(self):
        trajectory = make_trajectory("a", 1, True)
        trajectory.success = None
        with pytest.raises(ValueError):
            label_trajectory(trajectory)

    def test_partition_counts(self):
        trajectories = [
            make_trajectory("a", 3, True),
            make_trajectory("b", 2, False),
            make_trajectory("c", 4, True),
        ]
        examples = [ex for t in trajectories for ex in label_trajectory(t)]
        total_stages = sum(len(t.stages) for t in trajectories)
        preferred = [ex for ex in examples if ex.label == PREFERRED]
        discarded = [ex for ex in examples if ex.label == DISCARDED]
        assert len(preferred) + len(discarded) == total_stages


class TestExportSft:
    def test_only_preferred_written(self, tmp_path):
        out = tmp_path / "sft.jsonl"
        count = export_sft([make_trajectory("a", 2, True), make_trajectory("b", 2, False)], out)
        assert count == 2
        lines = out.read_text().splitlines()
        assert len(lines) == 2
        assert set(json.loads(lines[0])) == {"input", "output"}

    def test_all_failures_writes_nothing(self, tmp_path):
        out = tmp_path / "sft.jsonl"
        assert export_sft([make_trajectory("a", 2, False)], out) == 0
        assert out.read_text() == ""

    def test_reexport_byte_identical(self, tmp_path):
        trajectories = [make_trajectory("a", 2, True), make_trajectory("b", 3, True)]
        first, second = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
        export_sft(trajectories, first)
        export_sft(trajectories, second)
        assert first.read_bytes() == second.read_bytes()

    def test_outputs_round_trip_through_parse(self, tmp_path):
        out = tmp_path / "sft.jsonl"
        export_sft([make_trajectory("a", 2, True)], out)
        for line in out.read_text().splitlines():
            parse_plan(json.loads(line)["output"])

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "sft.jsonl"
        export_sft([make_trajectory("a", 1, True)], out)
        manifest = json.loads((tmp_path / "sft.jsonl.manifest.json").read_text())
        assert manifest["examples"] == 1
        assert "source_digest" in manifest
        assert manifest["training_reference"]["learning_rate"] == 5e-6


class TestExportKto:
    def test_six_two_downsamples_to_two_two(self, tmp_path):
        trajectories = [make_trajectory("a", 6, True), make_trajectory("b", 2, False)]
        out = tmp_path / "kto.jsonl"
        positives, negatives = export_kto(trajectories, out, seed=11)
        assert (positives, negatives) == (2, 2)
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 4
        assert sum(1 for l in lines if l["label"] == PREFERRED) == 2
        assert sum(1 for l in lines if l["label"] == DISCARDED) == 2

    def test_already_balanced(self, tmp_path):
        trajectories = [make_trajectory("a", 3, True), make_trajectory("b", 3, False)]
        assert export_kto(trajectories, tmp_path / "kto.jsonl", seed=0) == (3, 3)

    def test_empty_class_writes_nothing(self, tmp_path):
        out = tmp_path / "kto.jsonl"
        assert export_kto([make_trajectory("a", 5, True)], out, seed=0) == (0, 0)
        assert out.read_text() == ""
        manifest = json.loads((tmp_path / "kto.jsonl.manifest.json").read_text())
        assert manifest["empty_class"] == DISCARDED

    def test_balanced_for_any_seed(self, tmp_path):
        trajectories = [make_trajectory("a", 7, True), make_trajectory("b", 3, False)]
        for seed in range(10):
            positives, negatives = export_kto(trajectories, tmp_path / f"kto{seed}.jsonl", seed=seed)
            assert positives == negatives == 3

    def test_fixed_seed_byte_identical(self, tmp_path):
        trajectories = [make_trajectory("a", 6, True), make_trajectory("b", 2, False)]
        first, second = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
        export_kto(trajectories, first, seed=42)
        export_kto(trajectories, second, seed=42)
        assert first.read_bytes() == second.read_bytes()

    def test_different_seeds_can_differ(self, tmp_path):
        trajectories = [make_trajectory("a", 8, True), make_trajectory("b", 1, False)]
        outputs = set()
        for seed in range(8):
            out = tmp_path / f"kto{seed}.jsonl"
            export_kto(trajectories, out, seed=seed)
            outputs.add(out.read_bytes())
        assert len(outputs) > 1

    def test_kto_outputs_round_trip_through_parse(self, tmp_path):
        out = tmp_path / "kto.jsonl"
        export_kto([make_trajectory("a", 2, True), make_trajectory("b", 2, False)], out, seed=0)
        for line in out.read_text().splitlines():
            parse_plan(json.loads(line)["output"])


class TestEndToEndExport:
    def test_real_run_exports(self, tmp_path, math_task):
        result = run_task(math_task, golden_run_config())
        trajectory = result.trajectory
        from stageflow import grade_answer

        trajectory.success = grade_answer(result.final_answer, math_task)
        assert trajectory.success is True
        out = tmp_path / "sft.jsonl"
        assert export_sft([trajectory], out) == 2
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert rows[0]["input"] == math_task.prompt  # step-0 summary is the prompt
