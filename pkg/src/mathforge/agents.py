"""Agent trajectory runtime: prompt rendering, the think/code/observe loop,
final-answer detection, and the per-trajectory step cap."""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from .errors import MalformedFinalAnswer, SchemaError
from .gateway import ChatClient, ChatRequest, ProviderProfile
from .model import TokenUsage
from .sandbox.supervisor import ExecutionResult, SandboxSupervisor

OBSERVATION_CAP = 8000  # chars of stdout/stderr echoed back into the transcript


@dataclass(frozen=True)
class AgentSpec:
    name: str  # evolution | solvability | difficulty | judge | solver | scorer
    system_template: str
    user_template: str
    expects_code_tool: bool
    parse_final: Callable[[object], object]


@dataclass(frozen=True)
class TrajectoryLimits:
    max_steps: int = 30
    per_step_timeout_ms: int = 120000


@dataclass(frozen=True)
class TrajectoryStep:
    index: int
    model_output: str
    extracted_code: Optional[str]
    observation: Optional[ExecutionResult]
    usage: TokenUsage

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "model_output": self.model_output,
            "extracted_code": self.extracted_code,
            "observation": self.observation.to_dict() if self.observation else None,
            "usage": self.usage.to_dict(),
        }


@dataclass(frozen=True)
class AgentOutcome:
    kind: str  # final_answer | max_steps_exceeded | protocol_failure
    payload: Optional[object] = None
    detail: str = ""
    steps: tuple[TrajectoryStep, ...] = ()
    total_usage: TokenUsage = field(default_factory=TokenUsage)


_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


def render_template(template: str, inputs: dict[str, str]) -> str:
    """Substitute {name} placeholders; every placeholder must be supplied."""
    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in inputs:
            raise SchemaError(f"template placeholder {{{key}}} not supplied")
        return str(inputs[key])
    return _PLACEHOLDER.sub(sub, template)


def load_template(name: str, templates_dir: Optional[Path] = None) -> str:
    if templates_dir is not None:
        return (Path(templates_dir) / f"{name}.txt").read_text(encoding="utf-8")
    return resources.files("mathforge").joinpath(f"templates/{name}.txt").read_text(
        encoding="utf-8"
    )


_FENCE = re.compile(r"```(?:[A-Za-z0-9_+-]*)\n(.*?)```", re.DOTALL)


def extract_code_block(model_output: str) -> Optional[str]:
    """All fenced code blocks, in order, newline-joined; None when absent."""
    blocks = [b.strip("\n") for b in _FENCE.findall(model_output)]
    blocks = [b for b in blocks if b.strip()]
    if not blocks:
        return None
    return "\n".join(blocks)


_FINAL_MARKER = re.compile(r"final_answer\s*\(")


def _balanced_argument(text: str, open_index: int) -> Optional[str]:
    """Text between the paren at open_index and its matching close paren."""
    depth = 0
    in_string: Optional[str] = None
    escaped = False
    for i in range(open_index, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == in_string:
                in_string = None
            continue
        if ch in "\"'":
            in_string = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[open_index + 1:i]
    return None


def _parse_payload_text(text: str) -> dict:
    text = text.strip()
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(text)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, dict):
            return value
        raise MalformedFinalAnswer(f"payload is {type(value).__name__}, expected mapping")
    raise MalformedFinalAnswer(f"unparseable payload: {text[:200]}")


def detect_final_answer(model_output: str,
                        parse: Callable[[object], object]) -> Optional[object]:
    """Recognize a final_answer call or a lone top-level JSON object.

    A marker with an unparseable or schema-invalid payload raises
    MalformedFinalAnswer; a bare object that fails the schema is treated as
    absent (it may be an incidental JSON fragment, not a final answer).
    """
    match = _FINAL_MARKER.search(model_output)
    if match:
        argument = _balanced_argument(model_output, match.end() - 1)
        if argument is None:
            raise MalformedFinalAnswer("unbalanced final_answer call")
        raw = _parse_payload_text(argument)
        try:
            return parse(raw)
        except SchemaError as exc:
            raise MalformedFinalAnswer(str(exc)) from exc
    stripped = model_output.strip()
    if stripped.startswith("{") and stripped.endswith("}"):
        try:
            raw = _parse_payload_text(stripped)
            return parse(raw)
        except (MalformedFinalAnswer, SchemaError):
            return None
    return None


_CORRECTIVE_PROMPT = (
    "Your final answer could not be parsed or did not match the required "
    "schema ({error}). Reply with a single final_answer call whose argument "
    "is a dictionary with exactly the required keys."
)
_NUDGE_PROMPT = (
    "Your last message contained neither a code block nor a final answer. "
    "Either write a fenced code block to run, or finish with final_answer."
)


def run_trajectory(
    spec: AgentSpec,
    inputs: dict[str, str],
    limits: TrajectoryLimits,
    client: ChatClient,
    profile: ProviderProfile,
    supervisor: Optional[SandboxSupervisor],
    session_id: str,
) -> AgentOutcome:
    """Iterate model turn -> code extraction -> sandbox observation until a
    final answer, the step cap, or a protocol failure."""
    messages: list[dict] = [
        {"role": "system", "content": render_template(spec.system_template, inputs)},
        {"role": "user", "content": render_template(spec.user_template, inputs)},
    ]
    steps: list[TrajectoryStep] = []
    total = TokenUsage()
    idle_streak = 0
    reprompted = False

    for index in range(1, limits.max_steps + 1):
        response = client.chat_complete(
            profile,
            ChatRequest(
                model=profile.model,
                messages=tuple(messages),
                temperature=0.0,
                max_tokens=profile.max_tokens,
            ),
        )
        total = total + response.usage
        output = response.content
        try:
            payload = detect_final_answer(output, spec.parse_final)
        except MalformedFinalAnswer as exc:
            steps.append(TrajectoryStep(index, output, None, None, response.usage))
            if reprompted:
                return AgentOutcome("protocol_failure", detail=f"final answer invalid twice: {exc}",
                                    steps=tuple(steps), total_usage=total)
            reprompted = True
            messages.append({"role": "assistant", "content": output})
            messages.append({"role": "user",
                             "content": _CORRECTIVE_PROMPT.format(error=exc)})
            continue

        if payload is not None:
            steps.append(TrajectoryStep(index, output, None, None, response.usage))
            return AgentOutcome("final_answer", payload=payload,
                                steps=tuple(steps), total_usage=total)

        code = extract_code_block(output) if spec.expects_code_tool else None
        if code is None:
            steps.append(TrajectoryStep(index, output, None, None, response.usage))
            idle_streak += 1
            if idle_streak >= 2:
                return AgentOutcome("protocol_failure",
                                    detail="no code and no final answer for 2 turns",
                                    steps=tuple(steps), total_usage=total)
            messages.append({"role": "assistant", "content": output})
            messages.append({"role": "user", "content": _NUDGE_PROMPT})
            continue

        idle_streak = 0
        result = supervisor.execute_code(session_id, code, limits.per_step_timeout_ms)
        steps.append(TrajectoryStep(index, output, code, result, response.usage))
        messages.append({"role": "assistant", "content": output})
        messages.append({
            "role": "tool",
            "content": _format_observation(result),
        })

    return AgentOutcome("max_steps_exceeded", steps=tuple(steps), total_usage=total)


def _format_observation(result: ExecutionResult) -> str:
    stdout = result.stdout[:OBSERVATION_CAP]
    stderr = result.stderr[:OBSERVATION_CAP]
    return f"status: {result.status}\nstdout:\n{stdout}\nstderr:\n{stderr}"
