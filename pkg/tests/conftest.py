"""Shared fixtures: golden plan documents and scripted provider bundles."""

from __future__ import annotations

import json

import pytest

from stageflow import PlannerConfig, RunConfig, ScriptedProvider, TaskSpec

STAGE0_PLAN = json.dumps(
    {
        "subgoal": "produce a candidate answer",
        "nodes": [
            {
                "id": "a1",
                "template": "GENERATE_ANSWER",
                "instruction": "Compute 2 + 2 and reply with just the number.",
                "input_keys": [],
            }
        ],
        "edges": [],
        "start": "a1",
        "end_conditions": [],
    }
)

STAGE1_PLAN = json.dumps(
    {
        "subgoal": "organize and finish",
        "nodes": [
            {
                "id": "org",
                "template": "ORGANIZE_SOLUTION",
                "instruction": "Present the final answer as a bare number.",
                "input_keys": ["s0.a1.GENERATE_ANSWER"],
            },
            {"id": "zz-end", "template": "TERMINATE", "instruction": "", "input_keys": []},
        ],
        "edges": [["org", "zz-end"]],
        "start": "org",
        "end_conditions": [],
    }
)


def golden_run_config() -> RunConfig:
    """Fresh scripted two-stage fixture: plan -> answer "4" -> organize+terminate."""
    designer = ScriptedProvider({"designer": [STAGE0_PLAN, STAGE1_PLAN]})
    executor = ScriptedProvider({"executor": ["4", "4"]})
    return RunConfig(
        planner=PlannerConfig(designer=designer, max_stages=6, parse_retries=2),
        executor_provider=executor,
    )


@pytest.fixture
def golden_cfg() -> RunConfig:
    return golden_run_config()


@pytest.fixture
def math_task() -> TaskSpec:
    return TaskSpec(task_id="add-1", prompt="What is 2 + 2?", domain="math", gold="4", grading_mode="numeric")
