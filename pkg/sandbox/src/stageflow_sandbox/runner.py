"""The evaluation runner: one request line in, one response line out.

Request fields:  code, tests (list of snippets), timeout_s in (0, 60],
                 max_output_bytes.
Response fields: status (pass | fail | error | timeout), result (str(solve())
                 for pass/fail), stderr (truncated), duration_ms.

The candidate program runs in a dedicated worker subprocess with its working
directory jailed to a temporary directory and socket creation disabled. The
runner kills the worker at the deadline, so any loop shape times out — signal
delivery inside the program is irrelevant. Crash containment: a worker that
dies without a verdict (segfault, os._exit) becomes status=error, and the
runner still emits its response and exits 0.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import time

WORKER_MODULE = "stageflow_sandbox._worker"
STATUSES = ("pass", "fail", "error", "timeout")


def _truncate(text: str, limit: int) -> str:
    encoded = text.encode("utf-8", errors="replace")
    if len(encoded) <= limit:
        return text
    return encoded[:limit].decode("utf-8", errors="replace")


def _validate(raw: dict) -> tuple[str, list[str], float, int]:
    code = raw.get("code")
    if not isinstance(code, str) or not code:
        raise ValueError("'code' must be nonempty text")
    tests = raw.get("tests") or []
    if not isinstance(tests, list) or not all(isinstance(t, str) for t in tests):
        raise ValueError("'tests' must be a list of snippets")
    timeout_s = float(raw.get("timeout_s", 10.0))
    if not (0 < timeout_s <= 60):
        raise ValueError("'timeout_s' must be in (0, 60]")
    max_output = int(raw.get("max_output_bytes", 16384))
    if max_output <= 0:
        raise ValueError("'max_output_bytes' must be positive")
    return code, tests, timeout_s, max_output


def _last_verdict_line(stdout: str) -> dict | None:
    for line in reversed(stdout.splitlines()):
        if not line.strip():
            continue
        try:
            parsed = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, dict) and parsed.get("status") in STATUSES:
            return parsed
    return None


def evaluate_request(raw: dict) -> dict:
    """Evaluate one request dict into a response dict."""
    started = time.monotonic()

    def respond(status: str, result: str | None, stderr: str, limit: int = 16384) -> dict:
        return {
            "status": status,
            "result": result if status in ("pass", "fail") else None,
            "stderr": _truncate(stderr, limit),
            "duration_ms": int((time.monotonic() - started) * 1000),
        }

    try:
        code, tests, timeout_s, max_output = _validate(raw)
    except (ValueError, TypeError) as exc:
        return respond("error", None, str(exc))

    payload = json.dumps({"code": code, "tests": tests, "max_output_bytes": max_output})
    with tempfile.TemporaryDirectory(prefix="sandbox-") as jail:
        try:
            worker = subprocess.run(
                [sys.executable, "-m", WORKER_MODULE],
                input=payload + "\n",
                capture_output=True,
                text=True,
                timeout=timeout_s,
                cwd=jail,
            )
        except subprocess.TimeoutExpired:
            return respond("timeout", None, f"wall clock exceeded {timeout_s}s; worker killed", max_output)

    verdict = _last_verdict_line(worker.stdout)
    if verdict is None:
        return respond(
            "error", None, f"worker exited {worker.returncode} without a verdict", max_output
        )
    return respond(
        verdict["status"], verdict.get("result"), verdict.get("stderr", ""), max_output
    )


def main() -> int:
    """Stdio protocol; exit 0 whenever a response was emitted."""
    line = sys.stdin.readline()
    if not line.strip():
        print(json.dumps({"status": "error", "result": None, "stderr": "empty request", "duration_ms": 0}))
        return 0
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        print(json.dumps({"status": "error", "result": None, "stderr": f"bad request: {exc}", "duration_ms": 0}))
        return 0
    response = evaluate_request(raw if isinstance(raw, dict) else {})
    print(json.dumps(response))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
