"""Client for the external code-evaluation sandbox.

The sandbox is a separate package invoked as a child process per evaluation:
one JSON request line on stdin, one JSON response line on stdout. The engine
works fine without it — code-mode grading reports UNGRADEABLE and everything
else is unaffected.
"""

from __future__ import annotations

import importlib.util
import json
import os
import re
import shutil
import subprocess
import sys
from dataclasses import dataclass

GRACE_SECONDS = 2.0
SANDBOX_ENV_VAR = "STAGEFLOW_SANDBOX_CMD"
SANDBOX_MODULE = "stageflow_sandbox"
SANDBOX_SCRIPT = "stageflow-sandbox"

CODE_FENCE_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class SandboxRequest:
    code: str
    tests: tuple[str, ...] = ()
    timeout_s: float = 10.0
    max_output_bytes: int = 16384

    def __post_init__(self) -> None:
        if not self.code:
            raise ValueError("code must be nonempty")
        if not (0 < self.timeout_s <= 60):
            raise ValueError("timeout_s must be in (0, 60]")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "code": self.code,
                "tests": list(self.tests),
                "timeout_s": self.timeout_s,
                "max_output_bytes": self.max_output_bytes,
            }
        )


@dataclass(frozen=True)
class SandboxResponse:
    status: str
    result: str | None = None
    stderr: str = ""
    duration_ms: int = 0

    @classmethod
    def from_json_line(cls, line: str) -> "SandboxResponse":
        raw = json.loads(line)
        return cls(
            status=raw["status"],
            result=raw.get("result"),
            stderr=raw.get("stderr", ""),
            duration_ms=raw.get("duration_ms", 0),
        )


class SandboxUnavailableError(Exception):
    pass


def sandbox_command() -> list[str] | None:
    """Resolve the runner command, or None when no sandbox is installed."""
    override = os.environ.get(SANDBOX_ENV_VAR)
    if override:
        return override.split()
    script = shutil.which(SANDBOX_SCRIPT)
    if script:
        return [script]
    if importlib.util.find_spec(SANDBOX_MODULE) is not None:
        return [sys.executable, "-m", SANDBOX_MODULE]
    return None


def sandbox_available() -> bool:
    return sandbox_command() is not None


def evaluate(request: SandboxRequest) -> SandboxResponse:
    """Run one evaluation in a fresh sandbox process.

    The runner enforces the request timeout internally; this side adds a grace
    window and kills the process if it overstays. A process that dies without
    emitting a response becomes status=error.
    """
    command = sandbox_command()
    if command is None:
        raise SandboxUnavailableError("no sandbox runner installed")
    try:
        completed = subprocess.run(
            command,
            input=request.to_json_line() + "\n",
            capture_output=True,
            text=True,
            timeout=request.timeout_s + GRACE_SECONDS,
        )
    except subprocess.TimeoutExpired:
        return SandboxResponse(status="timeout", stderr="runner exceeded its grace window")
    line = completed.stdout.strip().splitlines()
    if not line:
        return SandboxResponse(status="error", stderr=f"runner emitted no response (exit {completed.returncode})")
    try:
        return SandboxResponse.from_json_line(line[-1])
    except (json.JSONDecodeError, KeyError) as exc:
        return SandboxResponse(status="error", stderr=f"unreadable runner response: {exc}")


def extract_code(answer: str) -> str:
    """Pull the last fenced code block out of an answer, or use it verbatim."""
    blocks = CODE_FENCE_RE.findall(answer)
    if blocks:
        return blocks[-1].strip()
    return answer.strip()


def grade_code(answer: str, gold: str, timeout_s: float = 10.0) -> bool:
    """Code-mode grading: the gold target is newline-separated test snippets."""
    from .bench import UngradeableError  # local import avoids a module cycle

    if not sandbox_available():
        raise UngradeableError("code grading needs the sandbox runner, which is not installed")
    code = extract_code(answer)
    if not code:
        raise UngradeableError("answer contains no code")
    tests = tuple(line for line in gold.splitlines() if line.strip())
    response = evaluate(SandboxRequest(code=code, tests=tests, timeout_s=timeout_s))
    return response.status == "pass"
