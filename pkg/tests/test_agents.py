"""Agent runtime: templates, code extraction, final-answer detection, loop."""

from __future__ import annotations

import json

import pytest

from mathforge.agents import (
    AgentSpec,
    TrajectoryLimits,
    detect_final_answer,
    extract_code_block,
    load_template,
    render_template,
    run_trajectory,
)
from mathforge.errors import MalformedFinalAnswer, SchemaError
from mathforge.gateway import ChatClient, ProviderProfile
from mathforge.model import validate_candidate

PROFILE = ProviderProfile(name="p", base_url="http://localhost:9", model="m")


# --- templates ---------------------------------------------------------------

def test_render_substitutes_and_rejects_missing():
    assert render_template("a {x} b {y}", {"x": "1", "y": "2"}) == "a 1 b 2"
    with pytest.raises(SchemaError):
        render_template("a {x}", {})


def test_render_leaves_json_braces_alone():
    template = 'Reply with {"status": "PASS", "reason": "..."} and use {problem}.'
    out = render_template(template, {"problem": "P"})
    assert '{"status": "PASS"' in out and "use P." in out


@pytest.mark.parametrize("name,placeholders", [
    ("evolution_system", {"demonstrations"}),
    ("evolution_user", {"problem", "solution"}),
    ("solvability_user", {"problem_text", "proposed_solution", "answer"}),
    ("difficulty_user", {"original_problem", "original_solution",
                         "new_problem", "new_solution_steps"}),
    ("judge_user", {"problem", "solution"}),
    ("solver_user", {"problem"}),
    ("scorer_user", {"problem", "solution_steps", "final_answer"}),
])
def test_packaged_templates_render(name, placeholders):
    template = load_template(name)
    rendered = render_template(template, {k: f"<{k}>" for k in placeholders})
    for key in placeholders:
        assert f"<{key}>" in rendered


# --- code extraction ---------------------------------------------------------

def test_extract_single_block():
    assert extract_code_block("before\n```python\nx = 1\n```\nafter") == "x = 1"


def test_extract_joins_multiple_blocks():
    text = "```python\na = 1\n```\nmid\n```\nprint(a)\n```"
    assert extract_code_block(text) == "a = 1\nprint(a)"


def test_extract_none_without_fence():
    assert extract_code_block("no code here, just x = 1") is None
    assert extract_code_block("```python\n\n```") is None


# --- final answer detection --------------------------------------------------

def _identity(raw):
    return raw


def test_detects_marker_with_json_payload():
    out = detect_final_answer('ok final_answer({"a": 1})', _identity)
    assert out == {"a": 1}


def test_detects_marker_with_python_literal():
    out = detect_final_answer("final_answer({'a': 'x)', 'b': 2})", _identity)
    assert out == {"a": "x)", "b": 2}


def test_detects_bare_json_object():
    assert detect_final_answer('{"a": 1}', _identity) == {"a": 1}


def test_marker_wins_even_with_prose_after():
    text = 'final_answer({"a": 1})\nsome trailing commentary'
    assert detect_final_answer(text, _identity) == {"a": 1}


def test_malformed_marker_payload_raises():
    with pytest.raises(MalformedFinalAnswer):
        detect_final_answer("final_answer(not a dict literal", _identity)
    with pytest.raises(MalformedFinalAnswer):
        detect_final_answer("final_answer([1, 2])", _identity)


def test_schema_error_under_marker_becomes_malformed():
    with pytest.raises(MalformedFinalAnswer):
        detect_final_answer('final_answer({"wrong": 1})', validate_candidate)


def test_bare_object_failing_schema_is_ignored():
    assert detect_final_answer('{"incidental": "json"}', validate_candidate) is None


def test_plain_prose_is_not_final():
    assert detect_final_answer("still thinking about it", _identity) is None


# --- trajectory loop ---------------------------------------------------------

def _spec(parse=_identity, expects_code=True):
    return AgentSpec(
        name="evolution",
        system_template="sys {problem}",
        user_template="user {problem}",
        expects_code_tool=expects_code,
        parse_final=parse,
    )


class SequenceTransport:
    """Replies with a fixed sequence of contents, one per chat call."""

    def __init__(self, contents):
        self.contents = list(contents)
        self.seen = []

    def __call__(self, profile, payload, timeout_s):
        self.seen.append(payload)
        content = self.contents.pop(0)
        return {
            "choices": [{"message": {"content": content}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5},
        }


def _run(contents, supervisor, parse=_identity, max_steps=30):
    client = ChatClient(mode="live", transport=SequenceTransport(contents))
    return run_trajectory(
        _spec(parse), {"problem": "P"}, TrajectoryLimits(max_steps=max_steps),
        client, PROFILE, supervisor, "t-session",
    )


def test_trajectory_code_then_final(fake_supervisor):
    outcome = _run(
        ["```python\nx = 2\nprint(x + 2)\n```", 'final_answer({"done": true})'],
        fake_supervisor,
    )
    assert outcome.kind == "final_answer"
    assert outcome.payload == {"done": True}
    assert len(outcome.steps) == 2
    assert outcome.steps[0].observation.stdout == "4\n"
    assert outcome.total_usage.completion_tokens == 10


def test_trajectory_feeds_observation_back(fake_supervisor):
    transport = SequenceTransport(
        ["```python\nprint(3 * 3)\n```", 'final_answer({"v": 9})'])
    client = ChatClient(mode="live", transport=transport)
    run_trajectory(_spec(), {"problem": "P"}, TrajectoryLimits(),
                   client, PROFILE, fake_supervisor, "obs-session")
    second_payload = transport.seen[1]
    tool_msgs = [m for m in second_payload["messages"] if m["role"] == "tool"]
    assert len(tool_msgs) == 1
    assert "9\n" in tool_msgs[0]["content"]
    assert "status: ok" in tool_msgs[0]["content"]


def test_trajectory_max_steps(fake_supervisor):
    outcome = _run(["```python\nprint(1)\n```"] * 5, fake_supervisor, max_steps=5)
    assert outcome.kind == "max_steps_exceeded"
    assert len(outcome.steps) == 5


def test_trajectory_protocol_failure_after_two_idle_turns(fake_supervisor):
    outcome = _run(["hmm", "still hmm"], fake_supervisor)
    assert outcome.kind == "protocol_failure"
    assert len(outcome.steps) == 2


def test_trajectory_corrective_reprompt_then_success(fake_supervisor):
    outcome = _run(
        ["final_answer(broken", 'final_answer({"ok": 1})'], fake_supervisor)
    assert outcome.kind == "final_answer"
    assert outcome.payload == {"ok": 1}


def test_trajectory_second_malformed_is_protocol_failure(fake_supervisor):
    outcome = _run(["final_answer(broken", "final_answer(broken"], fake_supervisor)
    assert outcome.kind == "protocol_failure"


def test_idle_streak_resets_after_code(fake_supervisor):
    outcome = _run(
        ["hmm", "```python\nprint(1)\n```", "hmm again",
         'final_answer({"ok": 1})'],
        fake_supervisor,
    )
    assert outcome.kind == "final_answer"
