"""Full run loop over the HTTP provider against a local mock chat server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from stageflow import StopKind, TaskSpec, run_task
from stageflow.cli import build_run_config

from conftest import STAGE0_PLAN, STAGE1_PLAN


class _RoleAwareHandler(BaseHTTPRequestHandler):
    """Answers designer prompts with plan documents and executor prompts with '4'."""

    designer_plans: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        prompt = body["messages"][-1]["content"]
        if "plan document" in prompt:
            text = type(self).designer_plans.pop(0)
        else:
            text = "4"
        payload = {
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": len(prompt) // 4, "completion_tokens": len(text) // 4},
        }
        encoded = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(encoded)))
        self.end_headers()
        self.wfile.write(encoded)

    def log_message(self, *args):
        pass


@pytest.fixture
def mock_chat_url():
    server = HTTPServer(("127.0.0.1", 0), _RoleAwareHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _RoleAwareHandler.designer_plans = [STAGE0_PLAN, STAGE1_PLAN]
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()


def test_run_task_over_http_config(mock_chat_url):
    config = {
        "providers": {
            "designer": {"kind": "http_chat", "endpoint": mock_chat_url, "model": "mock-designer"},
            "executor": {"kind": "http_chat", "endpoint": mock_chat_url, "model": "mock-executor"},
        },
        "planner": {"max_stages": 6},
    }
    cfg = build_run_config(config)
    result = run_task(TaskSpec("http-1", "What is 2+2?", domain="math", gold="4"), cfg)
    assert result.final_answer == "4"
    assert result.stop.kind is StopKind.DESIGNER_TERMINATE
    assert len(result.trajectory.stages) == 2
    totals = result.trajectory.usage_totals()
    assert totals["designer"]["calls"] == 2
    assert totals["executor"]["calls"] == 2
    assert totals["executor"]["prompt_tokens"] > 0
