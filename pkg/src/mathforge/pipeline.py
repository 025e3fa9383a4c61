"""The rollout state machine: evolve -> solvability gate -> difficulty gate,
repeated per seed until success or budget exhaustion, with every failure
attributed to a cause."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .agents import AgentSpec, TrajectoryLimits, TrajectoryStep, load_template, run_trajectory
from .errors import EmptyInput, SchemaError
from .gateway import ChatClient, ProviderProfile
from .model import (
    DemonstrationPair,
    DifficultyVerdict,
    EvolutionResult,
    FailureCause,
    FailureKind,
    GateStatus,
    GateVerdict,
    ProposedCandidate,
    RolloutRecord,
    SeedProblem,
    fold_protocol_into_solvability,
    normalize_difficulty_verdict,
    recount_failures,
    validate_candidate,
)
from .sandbox.supervisor import SandboxSupervisor

PROTOCOL_REASON_TAG = "[PROTOCOL]"


@dataclass(frozen=True)
class PipelineConfig:
    rollout_budget: int = 20
    max_steps: int = 30
    per_step_timeout_ms: int = 120000
    difficulty_accept_min: int = 3
    demonstrations: tuple[DemonstrationPair, ...] = ()
    feedback_mode: bool = False  # reserved: failed-rollout feedback into the next prompt

    def __post_init__(self) -> None:
        if self.rollout_budget < 1:
            raise ValueError("rollout_budget must be >= 1")
        if not 1 <= self.difficulty_accept_min <= 5:
            raise ValueError("difficulty_accept_min must lie in [1,5]")


def parse_gate_verdict(raw: object) -> GateVerdict:
    """Solvability verdict payload: exactly the keys status and reason."""
    if not isinstance(raw, dict):
        raise SchemaError("gate verdict must be a mapping")
    expected = {"status", "reason"}
    if set(raw.keys()) != expected:
        raise SchemaError(f"gate verdict keys {sorted(raw.keys())} != {sorted(expected)}")
    return GateVerdict.from_dict(raw)


def parse_difficulty_verdict(raw: object) -> DifficultyVerdict:
    """Difficulty verdict payload: exactly status/score/reason, then normalized."""
    if not isinstance(raw, dict):
        raise SchemaError("difficulty verdict must be a mapping")
    expected = {"status", "score", "reason"}
    if set(raw.keys()) != expected:
        raise SchemaError(
            f"difficulty verdict keys {sorted(raw.keys())} != {sorted(expected)}"
        )
    return normalize_difficulty_verdict(raw)


def format_demonstrations(pairs: tuple[DemonstrationPair, ...]) -> str:
    if not pairs:
        return "(no examples provided)"
    chunks = []
    for i, pair in enumerate(pairs, 1):
        chunks.append(
            f"Example {i}\n"
            f"Source problem: {pair.original.problem}\n"
            f"Source solution: {pair.original.solution}\n"
            f"Adapted problem: {pair.evolved.new_problem}\n"
            f"Adapted solution: {pair.evolved.new_solution_steps}\n"
            + (f"Commentary: {pair.commentary}\n" if pair.commentary else "")
        )
    return "\n".join(chunks)


TrajectorySink = Callable[[str, str, tuple[TrajectoryStep, ...]], None]


class EvolutionEngine:
    """Runs the three-agent rollout loop for one configuration.

    Gate and evolver trajectories are overridable so tests can script them.
    """

    def __init__(
        self,
        cfg: PipelineConfig,
        client: ChatClient,
        supervisor: SandboxSupervisor,
        evolver_profile: ProviderProfile,
        solvability_profile: ProviderProfile,
        difficulty_profile: ProviderProfile,
        trajectory_sink: Optional[TrajectorySink] = None,
        deterministic_timing: bool = True,
    ):
        self.cfg = cfg
        self.client = client
        self.supervisor = supervisor
        self.evolver_profile = evolver_profile
        self.solvability_profile = solvability_profile
        self.difficulty_profile = difficulty_profile
        self.trajectory_sink = trajectory_sink
        self.deterministic_timing = deterministic_timing
        self.limits = TrajectoryLimits(
            max_steps=cfg.max_steps, per_step_timeout_ms=cfg.per_step_timeout_ms
        )
        self.evolution_spec = AgentSpec(
            name="evolution",
            system_template=load_template("evolution_system"),
            user_template=load_template("evolution_user"),
            expects_code_tool=True,
            parse_final=validate_candidate,
        )
        self.solvability_spec = AgentSpec(
            name="solvability",
            system_template=load_template("solvability_system"),
            user_template=load_template("solvability_user"),
            expects_code_tool=True,
            parse_final=parse_gate_verdict,
        )
        self.difficulty_spec = AgentSpec(
            name="difficulty",
            system_template=load_template("difficulty_system"),
            user_template=load_template("difficulty_user"),
            expects_code_tool=True,
            parse_final=parse_difficulty_verdict,
        )

    # --- trajectory runners (overridable in tests) ---

    def _run(self, spec: AgentSpec, inputs: dict, profile: ProviderProfile,
             traj_id: str):
        self.supervisor.reset_session(traj_id)
        outcome = run_trajectory(
            spec, inputs, self.limits, self.client, profile, self.supervisor, traj_id
        )
        if self.trajectory_sink is not None:
            self.trajectory_sink(traj_id, spec.name, outcome.steps)
        return outcome

    def run_evolution(self, seed: SeedProblem, traj_id: str):
        inputs = {
            "problem": seed.problem,
            "solution": seed.solution,
            "demonstrations": format_demonstrations(self.cfg.demonstrations),
        }
        return self._run(self.evolution_spec, inputs, self.evolver_profile, traj_id)

    def run_solvability_gate(self, candidate: ProposedCandidate, traj_id: str) -> GateVerdict:
        inputs = {
            "problem_text": candidate.new_problem,
            "proposed_solution": candidate.new_solution_steps,
            "answer": candidate.new_answer if candidate.new_answer is not None else "None",
        }
        outcome = self._run(self.solvability_spec, inputs, self.solvability_profile, traj_id)
        if outcome.kind != "final_answer":
            return GateVerdict(
                status=GateStatus.FAIL,
                reason=f"{PROTOCOL_REASON_TAG} trajectory ended with {outcome.kind}: {outcome.detail}",
            )
        return outcome.payload

    def run_difficulty_gate(self, seed: SeedProblem, candidate: ProposedCandidate,
                            traj_id: str) -> DifficultyVerdict:
        inputs = {
            "original_problem": seed.problem,
            "original_solution": seed.solution,
            "new_problem": candidate.new_problem,
            "new_solution_steps": candidate.new_solution_steps,
        }
        outcome = self._run(self.difficulty_spec, inputs, self.difficulty_profile, traj_id)
        if outcome.kind != "final_answer":
            return DifficultyVerdict(
                status=GateStatus.FAIL,
                score=1,
                reason=f"{PROTOCOL_REASON_TAG} trajectory ended with {outcome.kind}: {outcome.detail}",
            )
        verdict: DifficultyVerdict = outcome.payload
        # acceptance threshold may be stricter than the rubric's default
        accepted = verdict.score >= self.cfg.difficulty_accept_min
        status = GateStatus.PASS if accepted else GateStatus.FAIL
        if status is not verdict.status:
            verdict = DifficultyVerdict(status=status, score=verdict.score, reason=verdict.reason)
        return verdict

    # --- the state machine ---

    def evolve_one(self, seed: SeedProblem) -> EvolutionResult:
        rollouts: list[RolloutRecord] = []
        winning: Optional[ProposedCandidate] = None

        for index in range(1, self.cfg.rollout_budget + 1):
            started = time.monotonic()
            refs: list[str] = []

            def make_record(**kwargs) -> RolloutRecord:
                wall = 0 if self.deterministic_timing else int(
                    (time.monotonic() - started) * 1000
                )
                return RolloutRecord(
                    rollout_index=index, trajectory_refs=tuple(refs), wall_ms=wall, **kwargs
                )

            traj_id = f"{seed.id}-r{index}-evolution"
            refs.append(traj_id)
            evolution = self.run_evolution(seed, traj_id)
            if evolution.kind != "final_answer":
                rollouts.append(make_record(failure=FailureCause(
                    kind=FailureKind.PROTOCOL,
                    detail=f"evolver {evolution.kind}: {evolution.detail}",
                )))
                continue
            candidate: ProposedCandidate = evolution.payload

            traj_id = f"{seed.id}-r{index}-solvability"
            refs.append(traj_id)
            solvability = self.run_solvability_gate(candidate, traj_id)
            if solvability.status is not GateStatus.PASS:
                kind = (
                    FailureKind.PROTOCOL
                    if solvability.reason.startswith(PROTOCOL_REASON_TAG)
                    else FailureKind.SOLVABILITY
                )
                rollouts.append(make_record(
                    candidate=candidate,
                    solvability=solvability,
                    failure=FailureCause(kind=kind, detail=solvability.reason),
                ))
                continue

            traj_id = f"{seed.id}-r{index}-difficulty"
            refs.append(traj_id)
            difficulty = self.run_difficulty_gate(seed, candidate, traj_id)
            if difficulty.status is not GateStatus.PASS:
                kind = (
                    FailureKind.PROTOCOL
                    if difficulty.reason.startswith(PROTOCOL_REASON_TAG)
                    else FailureKind.DIFFICULTY
                )
                rollouts.append(make_record(
                    candidate=candidate,
                    solvability=solvability,
                    difficulty=difficulty,
                    failure=FailureCause(kind=kind, detail=difficulty.reason),
                ))
                continue

            rollouts.append(make_record(
                candidate=candidate, solvability=solvability, difficulty=difficulty
            ))
            winning = candidate
            break

        return EvolutionResult(
            seed_id=seed.id,
            succeeded=winning is not None,
            winning_candidate=winning,
            rollouts=tuple(rollouts),
            failure_counts=recount_failures(rollouts),
        )


def aggregate_failure_stats(results: list[EvolutionResult]) -> dict[str, Fraction]:
    """Per-seed failure averages in the two-cause view used for reporting.

    PROTOCOL is folded into solvability, so avg_total is exactly
    avg_solvability + avg_difficulty in rational arithmetic.
    """
    if not results:
        raise EmptyInput("no evolution results to aggregate")
    n = len(results)
    solvability = Fraction(0)
    difficulty = Fraction(0)
    for result in results:
        folded = fold_protocol_into_solvability(result.failure_counts)
        solvability += folded[FailureKind.SOLVABILITY]
        difficulty += folded[FailureKind.DIFFICULTY]
    avg_s = solvability / n
    avg_d = difficulty / n
    return {
        "avg_total": avg_s + avg_d,
        "avg_solvability": avg_s,
        "avg_difficulty": avg_d,
    }
