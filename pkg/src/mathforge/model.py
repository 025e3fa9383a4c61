"""Core value objects for the evolution pipeline.

Everything here is an immutable dataclass plus the pure normalization and
validation rules shared by the pipeline, the evaluation harness, and the
reporting layer.  No I/O.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .errors import InvariantError, SchemaError

DIFFICULTY_PASS_MIN = 3  # rubric: scores 3..5 pass, 1..2 fail
NORMALIZED_FLAG = "[status normalized from score]"


class GateStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"


class FailureKind(str, Enum):
    SOLVABILITY = "SOLVABILITY"
    DIFFICULTY = "DIFFICULTY"
    PROTOCOL = "PROTOCOL"


@dataclass(frozen=True)
class SeedProblem:
    id: str
    problem: str
    solution: str
    source: str = ""
    domain: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("seed id must be nonempty")
        if not self.problem or not self.solution:
            raise SchemaError(f"seed {self.id!r}: problem and solution must be nonempty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "problem": self.problem,
            "solution": self.solution,
            "source": self.source,
            "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SeedProblem":
        try:
            return cls(
                id=raw["id"],
                problem=raw["problem"],
                solution=raw["solution"],
                source=raw.get("source", ""),
                domain=raw.get("domain", ""),
            )
        except KeyError as exc:
            raise SchemaError(f"seed record missing key {exc}") from exc


@dataclass(frozen=True)
class ProposedCandidate:
    new_problem: str
    new_solution_steps: str
    new_answer: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.new_problem or not self.new_solution_steps:
            raise SchemaError("candidate problem and solution steps must be nonempty")

    def to_dict(self) -> dict:
        return {
            "new_problem": self.new_problem,
            "new_solution_steps": self.new_solution_steps,
            "new_answer": self.new_answer,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ProposedCandidate":
        return validate_candidate(raw)


@dataclass(frozen=True)
class DemonstrationPair:
    original: SeedProblem
    evolved: ProposedCandidate
    commentary: str = ""


@dataclass(frozen=True)
class GateVerdict:
    status: GateStatus
    reason: str

    def __post_init__(self) -> None:
        if not self.reason:
            raise SchemaError("verdict reason must be nonempty")

    def to_dict(self) -> dict:
        return {"status": self.status.value, "reason": self.reason}

    @classmethod
    def from_dict(cls, raw: dict) -> "GateVerdict":
        return cls(status=_parse_status(raw.get("status")), reason=_require_text(raw, "reason"))


@dataclass(frozen=True)
class DifficultyVerdict:
    status: GateStatus
    score: int
    reason: str

    def to_dict(self) -> dict:
        return {"status": self.status.value, "score": self.score, "reason": self.reason}

    @classmethod
    def from_dict(cls, raw: dict) -> "DifficultyVerdict":
        return normalize_difficulty_verdict(raw)


@dataclass(frozen=True)
class FailureCause:
    kind: FailureKind
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail}

    @classmethod
    def from_dict(cls, raw: dict) -> "FailureCause":
        return cls(kind=FailureKind(raw["kind"]), detail=raw.get("detail", ""))


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise InvariantError("token counts must be nonnegative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, raw: dict) -> "TokenUsage":
        return cls(int(raw.get("prompt_tokens", 0)), int(raw.get("completion_tokens", 0)))


@dataclass(frozen=True)
class RolloutRecord:
    rollout_index: int
    candidate: Optional[ProposedCandidate] = None
    solvability: Optional[GateVerdict] = None
    difficulty: Optional[DifficultyVerdict] = None
    failure: Optional[FailureCause] = None
    trajectory_refs: tuple[str, ...] = ()
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if self.rollout_index < 1:
            raise InvariantError("rollout_index must be >= 1")
        if self.difficulty is not None:
            if self.solvability is None or self.solvability.status is not GateStatus.PASS:
                raise InvariantError(
                    "difficulty verdict requires a preceding solvability PASS"
                )
        if self.failure is not None and self.succeeded:
            raise InvariantError("a rollout cannot both fail and pass both gates")
        if self.failure is None and not self.succeeded:
            raise InvariantError("a rollout must either fail or pass both gates")

    @property
    def succeeded(self) -> bool:
        return (
            self.solvability is not None
            and self.solvability.status is GateStatus.PASS
            and self.difficulty is not None
            and self.difficulty.status is GateStatus.PASS
        )

    def to_dict(self) -> dict:
        return {
            "rollout_index": self.rollout_index,
            "candidate": self.candidate.to_dict() if self.candidate else None,
            "solvability": self.solvability.to_dict() if self.solvability else None,
            "difficulty": self.difficulty.to_dict() if self.difficulty else None,
            "failure": self.failure.to_dict() if self.failure else None,
            "trajectory_refs": list(self.trajectory_refs),
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RolloutRecord":
        return cls(
            rollout_index=int(raw["rollout_index"]),
            candidate=ProposedCandidate.from_dict(raw["candidate"]) if raw.get("candidate") else None,
            solvability=GateVerdict.from_dict(raw["solvability"]) if raw.get("solvability") else None,
            difficulty=DifficultyVerdict.from_dict(raw["difficulty"]) if raw.get("difficulty") else None,
            failure=FailureCause.from_dict(raw["failure"]) if raw.get("failure") else None,
            trajectory_refs=tuple(raw.get("trajectory_refs", ())),
            wall_ms=int(raw.get("wall_ms", 0)),
        )


@dataclass(frozen=True)
class EvolutionResult:
    seed_id: str
    succeeded: bool
    winning_candidate: Optional[ProposedCandidate]
    rollouts: tuple[RolloutRecord, ...]
    failure_counts: dict[FailureKind, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        recounted = recount_failures(list(self.rollouts))
        supplied = {kind: int(self.failure_counts.get(kind, 0)) for kind in FailureKind}
        object.__setattr__(self, "failure_counts", supplied)
        if supplied != recounted:
            raise InvariantError(
                f"failure_counts {self.failure_counts} != recount {recounted}"
            )
        last_passed = bool(self.rollouts) and self.rollouts[-1].succeeded
        if self.succeeded != last_passed:
            raise InvariantError("succeeded must match the last rollout passing both gates")
        if self.succeeded != (self.winning_candidate is not None):
            raise InvariantError("winning_candidate present iff succeeded")

    @property
    def rollouts_used(self) -> int:
        return len(self.rollouts)

    def to_dict(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "succeeded": self.succeeded,
            "winning_candidate": self.winning_candidate.to_dict() if self.winning_candidate else None,
            "rollouts": [r.to_dict() for r in self.rollouts],
            "failure_counts": {k.value: v for k, v in sorted(self.failure_counts.items(), key=lambda kv: kv[0].value)},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvolutionResult":
        rollouts = tuple(RolloutRecord.from_dict(r) for r in raw["rollouts"])
        return cls(
            seed_id=raw["seed_id"],
            succeeded=bool(raw["succeeded"]),
            winning_candidate=(
                ProposedCandidate.from_dict(raw["winning_candidate"])
                if raw.get("winning_candidate")
                else None
            ),
            rollouts=rollouts,
            failure_counts={FailureKind(k): int(v) for k, v in raw["failure_counts"].items()},
        )


@dataclass(frozen=True)
class MetricsReport:
    esc: int
    csc: int
    ar: Optional[Any]  # fractions.Fraction, absent when esc == 0
    origin_sr: Optional[Any]  # Fraction percentage
    evolution_sr: Optional[Any]
    sr_delta: Optional[Any]
    atc_origin: Optional[float]
    atc_evolution: Optional[float]
    failure_stats: dict[str, Any]

    def __post_init__(self) -> None:
        if not 0 <= self.csc <= self.esc:
            raise InvariantError(f"require 0 <= csc <= esc, got csc={self.csc} esc={self.esc}")
        if self.ar is not None and not 0 <= self.ar <= 1:
            raise InvariantError(f"ar must lie in [0,1], got {self.ar}")
        if self.origin_sr is not None and self.evolution_sr is not None:
            if self.sr_delta != self.evolution_sr - self.origin_sr:
                raise InvariantError("sr_delta must equal evolution_sr - origin_sr exactly")


# --- pure operations ---

def _require_text(raw: dict, key: str) -> str:
    value = raw.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaError(f"missing or empty {key!r}")
    return value


def _parse_status(value: Any) -> GateStatus:
    if isinstance(value, GateStatus):
        return value
    if isinstance(value, str):
        try:
            return GateStatus(value.strip().upper())
        except ValueError:
            pass
    raise SchemaError(f"status must be PASS or FAIL, got {value!r}")


def normalize_difficulty_verdict(raw: dict) -> DifficultyVerdict:
    """Recompute status from score; the rubric makes status a function of score.

    When the claimed status disagrees with the score the score wins and the
    reason is flagged so the normalization is visible downstream.
    """
    for key in ("status", "score", "reason"):
        if key not in raw:
            raise SchemaError(f"difficulty verdict missing key {key!r}")
    score = raw["score"]
    if isinstance(score, bool) or not isinstance(score, int):
        raise SchemaError(f"score must be an integer, got {score!r}")
    if not 1 <= score <= 5:
        raise SchemaError(f"score must lie in [1,5], got {score}")
    claimed = _parse_status(raw["status"])
    reason = raw["reason"]
    if not isinstance(reason, str) or not reason:
        raise SchemaError("missing or empty 'reason'")
    derived = GateStatus.PASS if score >= DIFFICULTY_PASS_MIN else GateStatus.FAIL
    if claimed is not derived and not reason.endswith(NORMALIZED_FLAG):
        reason = f"{reason} {NORMALIZED_FLAG}"
    return DifficultyVerdict(status=derived, score=score, reason=reason)


_CANDIDATE_KEYS = {"new_problem", "new_solution_steps", "new_answer"}


def validate_candidate(raw: dict) -> ProposedCandidate:
    """Validate the evolver's final-answer payload: exactly three keys."""
    if not isinstance(raw, dict):
        raise SchemaError(f"candidate payload must be a mapping, got {type(raw).__name__}")
    missing = _CANDIDATE_KEYS - raw.keys()
    extra = raw.keys() - _CANDIDATE_KEYS
    if missing:
        raise SchemaError(f"candidate missing keys {sorted(missing)}")
    if extra:
        raise SchemaError(f"candidate has extra keys {sorted(extra)}")
    answer = raw["new_answer"]
    if answer is not None and not isinstance(answer, str):
        raise SchemaError(f"new_answer must be a string or None, got {type(answer).__name__}")
    problem = raw["new_problem"]
    steps = raw["new_solution_steps"]
    if not isinstance(problem, str) or not problem:
        raise SchemaError("new_problem must be a nonempty string")
    if not isinstance(steps, str) or not steps:
        raise SchemaError("new_solution_steps must be a nonempty string")
    return ProposedCandidate(new_problem=problem, new_solution_steps=steps, new_answer=answer)


def recount_failures(rollouts: list[RolloutRecord]) -> dict[FailureKind, int]:
    """Independent recount of per-kind failures over a rollout list."""
    counts = {kind: 0 for kind in FailureKind}
    for i, record in enumerate(rollouts):
        if record.succeeded:
            if i != len(rollouts) - 1:
                raise InvariantError("a successful rollout must terminate the list")
            continue
        if record.failure is None:
            raise InvariantError("non-successful rollout without a failure cause")
        counts[record.failure.kind] += 1
    return counts


def fold_protocol_into_solvability(counts: dict[FailureKind, int]) -> dict[FailureKind, int]:
    """Reporting view: an unparseable rollout never demonstrated solvability."""
    return {
        FailureKind.SOLVABILITY: counts.get(FailureKind.SOLVABILITY, 0)
        + counts.get(FailureKind.PROTOCOL, 0),
        FailureKind.DIFFICULTY: counts.get(FailureKind.DIFFICULTY, 0),
        FailureKind.PROTOCOL: 0,
    }
