"""Shared fixtures: a scripted chat transport and an in-process sandbox."""

from __future__ import annotations

import json

import pytest

from mathforge.gateway import ChatClient
from mathforge.sandbox.protocol import DEFAULT_WHITELIST
from mathforge.sandbox.stub_executor import run_snippet


class FakeSupervisor:
    """In-process stand-in for SandboxSupervisor backed by the stub dialect."""

    def __init__(self):
        self.sessions: dict[str, dict] = {}

    def execute_code(self, session_id, code, timeout_ms=120000):
        from mathforge.sandbox.supervisor import ExecutionResult

        namespace = self.sessions.setdefault(session_id, {})
        body = run_snippet(code, namespace, timeout_ms, set(DEFAULT_WHITELIST))
        return ExecutionResult(
            status=body["status"], stdout=body["stdout"], stderr=body["stderr"],
            duration_ms=0, executor_id=0, latency_ms=0,
        )

    def reset_session(self, session_id):
        self.sessions[session_id] = {}

    def close(self):
        pass


def _usage(payload: dict, content: str) -> dict:
    prompt_chars = sum(len(m["content"]) for m in payload["messages"])
    return {
        "prompt_tokens": prompt_chars // 4,
        "completion_tokens": max(1, len(content) // 4),
    }


def _completion(payload: dict, content: str, finish: str = "stop") -> dict:
    return {
        "choices": [{"message": {"content": content}, "finish_reason": finish}],
        "usage": _usage(payload, content),
    }


class ScriptedTransport:
    """Deterministic stand-in for the HTTP transport.

    Routes on the system prompt to emulate each agent; behavior is a pure
    function of the request payload, so record/replay stays consistent.
    """

    def __init__(self, unsolvable_markers: tuple[str, ...] = (),
                 judge_reject_markers: tuple[str, ...] = ()):
        self.unsolvable_markers = unsolvable_markers
        self.judge_reject_markers = judge_reject_markers
        self.calls = 0

    def __call__(self, profile, payload, timeout_s):
        self.calls += 1
        system = payload["messages"][0]["content"]
        if "adapting mathematics problems" in system:
            return self._evolution(payload)
        if "strict auditor" in system:
            return self._solvability(payload)
        if "genuinely harder" in system:
            return self._difficulty(payload)
        if "independent reviewer" in system:
            return self._judge(payload)
        if "distinguished mathematician" in system:
            return self._solver(payload)
        if "strict mathematics examiner" in system:
            return self._scorer(payload)
        raise AssertionError(f"unrecognized system prompt: {system[:80]}")

    @staticmethod
    def _source_problem(payload: dict) -> str:
        user = payload["messages"][1]["content"]
        return user.split("Source problem:\n", 1)[1].split("\n\nSource solution:", 1)[0]

    def _evolution(self, payload):
        tool_turns = sum(1 for m in payload["messages"] if m["role"] == "tool")
        if tool_turns == 0:
            content = ("Let me probe the structure first.\n"
                       "```python\nx = 6\nprint(x * 7)\n```")
            return _completion(payload, content)
        problem = self._source_problem(payload)
        candidate = {
            "new_problem": f"Harder variant of: {problem}",
            "new_solution_steps": "1. Generalize the construction. 2. Verify the extremal case.",
            "new_answer": "42",
        }
        return _completion(payload, f"Confident now.\nfinal_answer({json.dumps(candidate)})")

    def _solvability(self, payload):
        user = payload["messages"][1]["content"]
        if any(marker in user for marker in self.unsolvable_markers):
            verdict = {"status": "FAIL",
                       "reason": "Step 2 commits a [Wrong Division] error: the case x = 0 is missed."}
        else:
            verdict = {"status": "PASS",
                       "reason": "Statement is consistent and every step verifies numerically."}
        return _completion(payload, f"final_answer({json.dumps(verdict)})")

    def _difficulty(self, payload):
        verdict = {"status": "PASS", "score": 4,
                   "reason": "Standard templates fail; the bound must be discovered."}
        return _completion(payload, f"final_answer({json.dumps(verdict)})")

    def _judge(self, payload):
        user = payload["messages"][1]["content"]
        invalid = any(marker in user for marker in self.judge_reject_markers)
        verdict = {
            "has_logic_error": invalid,
            "logic_error_description": "contradictory constraints" if invalid else None,
            "is_solvable": not invalid,
            "solution_correct": not invalid,
            "solution_issues": ["constraints are unsatisfiable"] if invalid else [],
            "overall_valid": not invalid,
            "reason": "rejected" if invalid else "sound and solvable",
        }
        return _completion(payload, json.dumps(verdict))

    def _solver(self, payload):
        solution = {
            "question_summary": "evolved problem",
            "solution_steps": [
                {"step_number": 1, "description": "set up", "calculation": "x = 6"},
                {"step_number": 2, "description": "conclude", "calculation": "6 \\cdot 7 = 42"},
            ],
            "final_answer": "42",
        }
        return _completion(payload, json.dumps(solution))

    def _scorer(self, payload):
        return _completion(payload, json.dumps({"score": 1, "reason": "correct"}))


@pytest.fixture
def fake_supervisor():
    return FakeSupervisor()


@pytest.fixture
def scripted_client():
    return ChatClient(mode="live", transport=ScriptedTransport())
