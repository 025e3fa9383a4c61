"""Solver evaluation under the retry/timeout protocol, external-judge
certification, rubric scoring, and metric computation (ESC, CSC, AR, SR,
ATC)."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from .agents import load_template, render_template
from .errors import EmptyInput, JudgeSchemaError, SchemaError, TransportError
from .gateway import ChatClient, ChatRequest, ProviderProfile
from .model import (
    EvolutionResult,
    GateStatus,
    GateVerdict,
    MetricsReport,
    ProposedCandidate,
)
from .pipeline import aggregate_failure_stats


@dataclass(frozen=True)
class SolverProfile:
    """One solver model under the evaluation protocol: temperature 0,
    bounded attempts, wall timeout, and a hard token cap used for timeout
    imputation."""

    name: str
    provider: ProviderProfile
    max_tokens: int
    wall_timeout_s: float = 30 * 60.0
    max_attempts: int = 3

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class SolverSolution:
    question_summary: str
    solution_steps: list
    final_answer: str

    def to_dict(self) -> dict:
        return {
            "question_summary": self.question_summary,
            "solution_steps": self.solution_steps,
            "final_answer": self.final_answer,
        }


@dataclass(frozen=True)
class SolverResult:
    problem_id: str
    solver: str
    attempts_used: int
    solution: Optional[SolverSolution]
    completion_tokens: int
    timed_out: bool

    def __post_init__(self) -> None:
        if self.timed_out and self.solution is not None:
            raise ValueError("a timed-out result cannot carry a solution")

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "solver": self.solver,
            "attempts_used": self.attempts_used,
            "solution": self.solution.to_dict() if self.solution else None,
            "completion_tokens": self.completion_tokens,
            "timed_out": self.timed_out,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SolverResult":
        solution = raw.get("solution")
        return cls(
            problem_id=raw["problem_id"],
            solver=raw["solver"],
            attempts_used=int(raw["attempts_used"]),
            solution=SolverSolution(**solution) if solution else None,
            completion_tokens=int(raw["completion_tokens"]),
            timed_out=bool(raw["timed_out"]),
        )


_JUDGE_KEYS = {
    "has_logic_error", "logic_error_description", "is_solvable",
    "solution_correct", "solution_issues", "overall_valid", "reason",
}


@dataclass(frozen=True)
class JudgeSolvabilityVerdict:
    has_logic_error: bool
    logic_error_description: Optional[str]
    is_solvable: bool
    solution_correct: bool
    solution_issues: list[str]
    overall_valid: bool
    reason: str

    @classmethod
    def from_dict(cls, raw: dict) -> "JudgeSolvabilityVerdict":
        if set(raw.keys()) != _JUDGE_KEYS:
            raise SchemaError(
                f"judge verdict keys {sorted(raw.keys())} != {sorted(_JUDGE_KEYS)}"
            )
        return cls(
            has_logic_error=bool(raw["has_logic_error"]),
            logic_error_description=raw["logic_error_description"],
            is_solvable=bool(raw["is_solvable"]),
            solution_correct=bool(raw["solution_correct"]),
            solution_issues=list(raw["solution_issues"]),
            overall_valid=bool(raw["overall_valid"]),
            reason=str(raw["reason"]),
        )


@dataclass(frozen=True)
class SolutionScore:
    score: float  # 0, 0.5, or 1
    reason: str

    def __post_init__(self) -> None:
        if self.score not in (0, 0.5, 1):
            raise SchemaError(f"score must be 0, 0.5, or 1, got {self.score}")


@dataclass(frozen=True)
class EvalRecord:
    """One (problem, solver) evaluation: the solver run plus its score."""

    problem_id: str
    dataset: str  # origin | evolution
    solver: str
    score: float
    result: SolverResult

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "dataset": self.dataset,
            "solver": self.solver,
            "score": self.score,
            "result": self.result.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalRecord":
        return cls(
            problem_id=raw["problem_id"],
            dataset=raw["dataset"],
            solver=raw["solver"],
            score=float(raw["score"]),
            result=SolverResult.from_dict(raw["result"]),
        )


_FENCED_JSON = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def parse_json_reply(content: str) -> dict:
    """Parse a model reply expected to be one JSON object, tolerating fences."""
    text = content.strip()
    match = _FENCED_JSON.search(text)
    if match:
        text = match.group(1)
    try:
        value = json.loads(text)
    except ValueError as exc:
        raise SchemaError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise SchemaError("reply JSON must be an object")
    return value


def single_turn_json(
    client: ChatClient,
    profile: ProviderProfile,
    system: str,
    user: str,
    validate: Callable[[dict], object],
    max_tokens: Optional[int] = None,
) -> object:
    """One no-tool turn expecting a JSON object; one corrective re-prompt."""
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]
    last_error: Optional[Exception] = None
    for attempt in range(2):
        response = client.chat_complete(
            profile,
            ChatRequest(
                model=profile.model,
                messages=tuple(messages),
                temperature=0.0,
                max_tokens=max_tokens if max_tokens is not None else profile.max_tokens,
            ),
        )
        try:
            return validate(parse_json_reply(response.content))
        except SchemaError as exc:
            last_error = exc
            messages.append({"role": "assistant", "content": response.content})
            messages.append({
                "role": "user",
                "content": f"Your reply was invalid ({exc}). Respond again with "
                           "only the required JSON object.",
            })
    raise JudgeSchemaError(f"malformed JSON after re-prompt: {last_error}")


def _parse_solver_solution(raw: dict) -> SolverSolution:
    expected = {"question_summary", "solution_steps", "final_answer"}
    if set(raw.keys()) != expected:
        raise SchemaError(
            f"solver reply keys {sorted(raw.keys())} != {sorted(expected)}"
        )
    if not isinstance(raw["solution_steps"], list):
        raise SchemaError("solution_steps must be a list")
    return SolverSolution(
        question_summary=str(raw["question_summary"]),
        solution_steps=raw["solution_steps"],
        final_answer=str(raw["final_answer"]),
    )


def solve_with_retries(
    problem_id: str,
    problem_text: str,
    profile: SolverProfile,
    client: ChatClient,
) -> SolverResult:
    """Up to max_attempts solver calls; first parseable attempt wins.

    Attempts failing by wall timeout or token-limit finish are timeout-class;
    a run where every attempt is timeout-class is recorded timed_out with the
    token cap imputed.
    """
    system = load_template("solver_system")
    user = render_template(load_template("solver_user"), {"problem": problem_text})
    timeout_class = 0
    last_tokens = 0
    for attempt in range(1, profile.max_attempts + 1):
        try:
            response = client.chat_complete(
                profile.provider,
                ChatRequest(
                    model=profile.provider.model,
                    messages=(
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ),
                    temperature=0.0,
                    max_tokens=profile.max_tokens,
                ),
            )
        except TransportError:
            timeout_class += 1
            continue
        last_tokens = response.usage.completion_tokens
        if response.finish == "length":
            timeout_class += 1
            continue
        try:
            solution = _parse_solver_solution(parse_json_reply(response.content))
        except SchemaError:
            continue
        return SolverResult(
            problem_id=problem_id,
            solver=profile.name,
            attempts_used=attempt,
            solution=solution,
            completion_tokens=response.usage.completion_tokens,
            timed_out=False,
        )
    if timeout_class == profile.max_attempts:
        return SolverResult(
            problem_id=problem_id,
            solver=profile.name,
            attempts_used=profile.max_attempts,
            solution=None,
            completion_tokens=profile.max_tokens,  # imputation at the cap
            timed_out=True,
        )
    return SolverResult(
        problem_id=problem_id,
        solver=profile.name,
        attempts_used=profile.max_attempts,
        solution=None,
        completion_tokens=last_tokens,
        timed_out=False,
    )


def certify_solvability(
    candidate: ProposedCandidate,
    internal_verdict: GateVerdict,
    client: ChatClient,
    judge_profile: ProviderProfile,
) -> bool:
    """Certified iff the internal gate passed AND the external judge agrees."""
    if internal_verdict.status is not GateStatus.PASS:
        return False
    system = load_template("judge_system")
    user = render_template(
        load_template("judge_user"),
        {"problem": candidate.new_problem, "solution": candidate.new_solution_steps},
    )
    verdict = single_turn_json(
        client, judge_profile, system, user, JudgeSolvabilityVerdict.from_dict
    )
    return verdict.overall_valid


def score_solution(
    problem_text: str,
    result: SolverResult,
    client: ChatClient,
    judge_profile: ProviderProfile,
) -> SolutionScore:
    """Rubric score for one solver result; timeouts score 0 without a judge
    call."""
    if result.timed_out:
        return SolutionScore(score=0, reason="timeout")
    if result.solution is None:
        return SolutionScore(score=0, reason="no parseable solution")
    system = load_template("scorer_system")
    user = render_template(
        load_template("scorer_user"),
        {
            "problem": problem_text,
            "solution_steps": json.dumps(result.solution.solution_steps, ensure_ascii=True),
            "final_answer": result.solution.final_answer,
        },
    )

    def validate(raw: dict) -> SolutionScore:
        if set(raw.keys()) != {"score", "reason"}:
            raise SchemaError(f"score reply keys {sorted(raw.keys())}")
        score = raw["score"]
        if score not in (0, 0.5, 1):
            raise SchemaError(f"score must be 0, 0.5, or 1, got {score!r}")
        return SolutionScore(score=float(score), reason=str(raw["reason"]))

    return single_turn_json(client, judge_profile, system, user, validate)


def compute_atc(results: list[SolverResult]) -> float:
    """Mean completion tokens; timed-out records are already imputed at cap."""
    if not results:
        raise EmptyInput("no solver results")
    return sum(r.completion_tokens for r in results) / len(results)


def _solve_rate(records: list[EvalRecord], threshold: float) -> Optional[Fraction]:
    if not records:
        return None
    solved = sum(1 for r in records if r.score >= threshold)
    return Fraction(solved, len(records)) * 100


def compute_metrics(
    evolution_results: list[EvolutionResult],
    certifications: dict[str, bool],
    origin_evals: list[EvalRecord],
    evolution_evals: list[EvalRecord],
    solved_threshold: float = 0.5,
) -> MetricsReport:
    esc = sum(1 for r in evolution_results if r.succeeded)
    csc = sum(
        1 for r in evolution_results
        if r.succeeded and certifications.get(r.seed_id, False)
    )
    ar = Fraction(csc, esc) if esc > 0 else None
    origin_sr = _solve_rate(origin_evals, solved_threshold)
    evolution_sr = _solve_rate(evolution_evals, solved_threshold)
    sr_delta = (
        evolution_sr - origin_sr
        if origin_sr is not None and evolution_sr is not None
        else None
    )
    failure_stats = (
        {k: v for k, v in aggregate_failure_stats(evolution_results).items()}
        if evolution_results
        else {}
    )
    return MetricsReport(
        esc=esc,
        csc=csc,
        ar=ar,
        origin_sr=origin_sr,
        evolution_sr=evolution_sr,
        sr_delta=sr_delta,
        atc_origin=compute_atc([r.result for r in origin_evals]) if origin_evals else None,
        atc_evolution=(
            compute_atc([r.result for r in evolution_evals]) if evolution_evals else None
        ),
        failure_stats=failure_stats,
    )


def per_problem_means(results: list[SolverResult]) -> dict[str, float]:
    """Mean completion tokens per problem across all solvers."""
    sums: dict[str, int] = {}
    counts: dict[str, int] = {}
    for r in results:
        sums[r.problem_id] = sums.get(r.problem_id, 0) + r.completion_tokens
        counts[r.problem_id] = counts.get(r.problem_id, 0) + 1
    return {pid: sums[pid] / counts[pid] for pid in sums}


def atc_histogram(
    origin_results: list[SolverResult],
    evolution_results: list[SolverResult],
    bin_width: float,
) -> tuple[list[tuple[float, int]], list[tuple[float, int]]]:
    """Binned per-problem mean token counts for the two datasets."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if not origin_results or not evolution_results:
        raise EmptyInput("both datasets must be nonempty")

    def binned(results: list[SolverResult]) -> list[tuple[float, int]]:
        counts: dict[int, int] = {}
        for mean in per_problem_means(results).values():
            index = int(math.floor(mean / bin_width))
            counts[index] = counts.get(index, 0) + 1
        return [(i * bin_width, counts[i]) for i in sorted(counts)]

    return binned(origin_results), binned(evolution_results)
