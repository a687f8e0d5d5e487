"""Worker process: loads the candidate program, calls solve(), runs the tests.

Runs inside the runner's temporary-directory jail with its own lifetime bounded
by the runner; this module never handles timeouts itself. The verdict is one
JSON line on real stdout; the program's own prints are redirected away from it.
"""

from __future__ import annotations

import contextlib
import io
import json
import sys


def _disable_network() -> None:
    # Best-effort: candidate programs have no business opening sockets.
    import socket

    def blocked(*args, **kwargs):
        raise OSError("network access is disabled in the sandbox")

    socket.socket = blocked  # type: ignore[misc,assignment]
    socket.create_connection = blocked  # type: ignore[assignment]
    socket.getaddrinfo = blocked  # type: ignore[assignment]


def run_candidate(code: str, tests: list[str], max_output_bytes: int) -> dict:
    captured_err = io.StringIO()
    program_out = io.StringIO()  # discarded: the verdict line owns real stdout
    namespace: dict = {"__name__": "__sandbox__"}
    _disable_network()

    def verdict(status: str, result: str | None) -> dict:
        stderr = captured_err.getvalue()
        if len(stderr.encode("utf-8", errors="replace")) > max_output_bytes:
            stderr = stderr.encode("utf-8", errors="replace")[:max_output_bytes].decode(
                "utf-8", errors="replace"
            )
        return {"status": status, "result": result, "stderr": stderr}

    with contextlib.redirect_stdout(program_out), contextlib.redirect_stderr(captured_err):
        try:
            exec(compile(code, "<candidate>", "exec"), namespace)  # noqa: S102
        except BaseException as exc:
            captured_err.write(f"\nload failed: {exc!r}")
            return verdict("error", None)

        solve = namespace.get("solve")
        if not callable(solve):
            captured_err.write("program defines no callable `solve`")
            return verdict("error", None)

        try:
            result_text = str(solve())
        except BaseException as exc:
            captured_err.write(f"\nsolve() raised: {exc!r}")
            return verdict("fail", None)

        for snippet in tests:
            try:
                exec(compile(snippet, "<test>", "exec"), namespace)  # noqa: S102
            except BaseException as exc:
                captured_err.write(f"\ntest failed: {snippet!r}: {exc!r}")
                return verdict("fail", result_text)

    return verdict("pass", result_text)


def main() -> int:
    payload = json.loads(sys.stdin.readline())
    response = run_candidate(
        payload["code"], payload.get("tests", []), payload.get("max_output_bytes", 16384)
    )
    json.dump(response, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
