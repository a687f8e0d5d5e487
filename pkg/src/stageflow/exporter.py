"""Dataset export: turn graded trajectories into SFT and preference files.

Labeling is trajectory-level: every (summary, plan) stage pair from a
successful run is "preferred", every pair from a failed run is "discarded".
The preference export balances classes 1:1 by downsampling the majority class
with a seeded RNG, so a fixed seed reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .state import TrajectoryRecord

PREFERRED = "preferred"
DISCARDED = "discarded"

# Reference optimizer settings for downstream trainers; recorded in manifests
# as passive metadata, never consumed by this engine.
TRAINING_REFERENCE = {
    "sft": {
        "cutoff_len": 2048,
        "batch_size": 1,
        "gradient_accumulation_steps": 4,
        "learning_rate": 5e-6,
        "scheduler": "cosine",
        "warmup_ratio": 0.1,
        "precision": "bf16",
        "epochs": 3,
        "validation_split": 0.1,
    },
    "kto": {
        "cutoff_len": 4096,
        "batch_size": 1,
        "gradient_accumulation_steps": 8,
        "learning_rate": 2e-4,
        "beta": 0.1,
        "scheduler": "cosine",
        "precision": "bf16",
        "epochs": 3,
        "eval_every_steps": 500,
        "positive_to_negative_ratio": "1:1",
    },
}


@dataclass(frozen=True)
class PreferenceExample:
    input: str
    output: str
    label: str
    task_id: str
    stage_index: int

    def __post_init__(self) -> None:
        if self.label not in (PREFERRED, DISCARDED):
            raise ValueError(f"label must be preferred/discarded, got {self.label!r}")


def label_trajectory(trajectory: TrajectoryRecord) -> list[PreferenceExample]:
    """Emit one example per stage, all sharing the trajectory's success label."""
    if trajectory.success is None:
        raise ValueError(f"trajectory {trajectory.task_id} has no success label yet")
    label = PREFERRED if trajectory.success else DISCARDED
    return [
        PreferenceExample(
            input=stage.summary,
            output=stage.plan_doc,
            label=label,
            task_id=trajectory.task_id,
            stage_index=stage.stage_index,
        )
        for stage in trajectory.stages
    ]


def _sorted_examples(trajectories: Sequence[TrajectoryRecord]) -> list[PreferenceExample]:
    examples = [ex for traj in trajectories for ex in label_trajectory(traj)]
    examples.sort(key=lambda ex: (ex.task_id, ex.stage_index))
    return examples


def _source_digest(trajectories: Sequence[TrajectoryRecord]) -> str:
    digest = hashlib.sha256()
    for trajectory in sorted(trajectories, key=lambda t: t.task_id):
        digest.update(trajectory.to_log_text().encode("utf-8"))
    return digest.hexdigest()


def _write_manifest(path: Path, body: dict) -> None:
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def export_sft(trajectories: Sequence[TrajectoryRecord], path: str | Path) -> int:
    """Write preferred (summary, plan) pairs as JSONL; returns the line count."""
    path = Path(path)
    preferred = [ex for ex in _sorted_examples(trajectories) if ex.label == PREFERRED]
    lines = [json.dumps({"input": ex.input, "output": ex.output}, ensure_ascii=False, sort_keys=True) for ex in preferred]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    _write_manifest(
        path,
        {
            "kind": "sft",
            "examples": len(preferred),
            "source_digest": _source_digest(trajectories),
            "training_reference": TRAINING_REFERENCE["sft"],
        },
    )
    return len(preferred)


def export_kto(trajectories: Sequence[TrajectoryRecord], path: str | Path, seed: int = 0) -> tuple[int, int]:
    """Write label-balanced preference pairs as JSONL; returns (positives, negatives).

    The majority class is downsampled uniformly with the given seed to an exact
    1:1 ratio. If either class is empty nothing is written and the manifest
    reports EMPTY_CLASS.
    """
    path = Path(path)
    examples = _sorted_examples(trajectories)
    positives = [ex for ex in examples if ex.label == PREFERRED]
    negatives = [ex for ex in examples if ex.label == DISCARDED]

    empty_class = None
    if not positives or not negatives:
        kept_pos: list[PreferenceExample] = []
        kept_neg: list[PreferenceExample] = []
        empty_class = DISCARDED if not negatives else PREFERRED
    else:
        rng = random.Random(seed)
        target = min(len(positives), len(negatives))
        kept_pos = positives if len(positives) == target else sorted(
            rng.sample(positives, target), key=lambda ex: (ex.task_id, ex.stage_index)
        )
        kept_neg = negatives if len(negatives) == target else sorted(
            rng.sample(negatives, target), key=lambda ex: (ex.task_id, ex.stage_index)
        )

    rows = sorted(kept_pos + kept_neg, key=lambda ex: (ex.task_id, ex.stage_index, ex.label))
    lines = [
        json.dumps({"input": ex.input, "output": ex.output, "label": ex.label}, ensure_ascii=False, sort_keys=True)
        for ex in rows
    ]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    manifest = {
        "kind": "kto",
        "positives": len(kept_pos),
        "negatives": len(kept_neg),
        "seed": seed,
        "source_digest": _source_digest(trajectories),
        "training_reference": TRAINING_REFERENCE["kto"],
    }
    if empty_class is not None:
        manifest["empty_class"] = empty_class
    _write_manifest(path, manifest)
    return len(kept_pos), len(kept_neg)
