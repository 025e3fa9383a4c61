"""Core domain model: normalization, validation, recounting, invariants."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from mathforge.errors import InvariantError, SchemaError
from mathforge.model import (
    DIFFICULTY_PASS_MIN,
    NORMALIZED_FLAG,
    DifficultyVerdict,
    EvolutionResult,
    FailureCause,
    FailureKind,
    GateStatus,
    GateVerdict,
    ProposedCandidate,
    RolloutRecord,
    TokenUsage,
    fold_protocol_into_solvability,
    normalize_difficulty_verdict,
    recount_failures,
    validate_candidate,
)


def _rollout(index, *, solvability="PASS", difficulty=None, failure=None):
    cand = ProposedCandidate(
        new_problem="p", new_solution_steps="s", new_answer="a")
    sv = GateVerdict(status=GateStatus(solvability), reason="r") if solvability else None
    dv = None
    if difficulty is not None:
        dv = DifficultyVerdict(status=GateStatus(difficulty[0]), score=difficulty[1], reason="r")
    fc = FailureCause(kind=FailureKind(failure[0]), detail=failure[1]) if failure else None
    return RolloutRecord(
        rollout_index=index, candidate=cand, solvability=sv, difficulty=dv,
        failure=fc, wall_ms=0,
    )


def _pass_rollout(index):
    return _rollout(index, solvability="PASS", difficulty=("PASS", 4))


def _fail_rollout(index, kind="SOLVABILITY"):
    if kind == "DIFFICULTY":
        return _rollout(index, solvability="PASS", difficulty=("FAIL", 2),
                        failure=(kind, "too easy"))
    return _rollout(index, solvability="FAIL" if kind == "SOLVABILITY" else None,
                    failure=(kind, "broken"))


# --- normalize_difficulty_verdict: exhaustive score x status grid ------------

@pytest.mark.parametrize("score", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("claimed", ["PASS", "FAIL"])
def test_normalize_grid(score, claimed):
    out = normalize_difficulty_verdict(
        {"status": claimed, "score": score, "reason": "because"})
    expected = GateStatus.PASS if score >= DIFFICULTY_PASS_MIN else GateStatus.FAIL
    assert out.status is expected
    assert out.score == score
    conflict = (claimed == "PASS") != (expected is GateStatus.PASS)
    assert out.reason.endswith(NORMALIZED_FLAG) == conflict
    assert out.reason.startswith("because")


def test_normalize_idempotent():
    raw = {"status": "PASS", "score": 2, "reason": "weak"}
    once = normalize_difficulty_verdict(raw)
    twice = normalize_difficulty_verdict(
        {"status": once.status.value, "score": once.score, "reason": once.reason})
    assert twice == once


@pytest.mark.parametrize("raw", [
    {"score": 3, "reason": "r"},
    {"status": "PASS", "reason": "r"},
    {"status": "PASS", "score": 3},
    {"status": "PASS", "score": 0, "reason": "r"},
    {"status": "PASS", "score": 6, "reason": "r"},
    {"status": "PASS", "score": 3.5, "reason": "r"},
    {"status": "MAYBE", "score": 3, "reason": "r"},
])
def test_normalize_rejects_bad_shapes(raw):
    with pytest.raises(SchemaError):
        normalize_difficulty_verdict(raw)


# --- validate_candidate ------------------------------------------------------

def test_validate_candidate_accepts_exact_keys():
    cand = validate_candidate({
        "new_problem": "P", "new_solution_steps": "S", "new_answer": "A"})
    assert cand == ProposedCandidate("P", "S", "A")


def test_validate_candidate_allows_null_answer():
    cand = validate_candidate({
        "new_problem": "P", "new_solution_steps": "S", "new_answer": None})
    assert cand.new_answer is None


@pytest.mark.parametrize("raw", [
    {"new_problem": "P", "new_solution_steps": "S"},
    {"new_problem": "P", "new_solution_steps": "S", "new_answer": "A", "hint": "x"},
    {"new_problem": "", "new_solution_steps": "S", "new_answer": "A"},
    {"new_problem": "P", "new_solution_steps": 7, "new_answer": "A"},
    "not a dict",
])
def test_validate_candidate_rejects(raw):
    with pytest.raises(SchemaError):
        validate_candidate(raw)


# --- recount_failures / folding ---------------------------------------------

def test_recount_counts_by_kind():
    rollouts = [
        _fail_rollout(1, "SOLVABILITY"),
        _fail_rollout(2, "PROTOCOL"),
        _fail_rollout(3, "DIFFICULTY"),
        _fail_rollout(4, "SOLVABILITY"),
        _pass_rollout(5),
    ]
    counts = recount_failures(rollouts)
    assert counts == {FailureKind.SOLVABILITY: 2,
                      FailureKind.DIFFICULTY: 1,
                      FailureKind.PROTOCOL: 1}


def test_recount_rejects_success_not_last():
    with pytest.raises(InvariantError):
        recount_failures([_pass_rollout(1), _fail_rollout(2)])


def test_fold_protocol():
    folded = fold_protocol_into_solvability(
        {FailureKind.SOLVABILITY: 2, FailureKind.DIFFICULTY: 1, FailureKind.PROTOCOL: 3})
    assert folded == {FailureKind.SOLVABILITY: 5, FailureKind.DIFFICULTY: 1,
                      FailureKind.PROTOCOL: 0}


# --- RolloutRecord / EvolutionResult invariants ------------------------------

def test_rollout_failure_xor_success():
    with pytest.raises(InvariantError):
        _rollout(1, solvability="PASS", difficulty=("PASS", 4),
                 failure=("SOLVABILITY", "contradiction"))


def test_rollout_difficulty_requires_solvability_pass():
    with pytest.raises(InvariantError):
        _rollout(1, solvability="FAIL", difficulty=("PASS", 4))


def test_evolution_result_consistency():
    rollouts = [_fail_rollout(1), _pass_rollout(2)]
    res = EvolutionResult(
        seed_id="s", succeeded=True, winning_candidate=rollouts[1].candidate,
        rollouts=tuple(rollouts), failure_counts={FailureKind.SOLVABILITY: 1},
    )
    assert res.succeeded and res.rollouts_used == 2


def test_evolution_result_rejects_wrong_counts():
    rollouts = [_fail_rollout(1), _pass_rollout(2)]
    with pytest.raises(InvariantError):
        EvolutionResult(
            seed_id="s", succeeded=True, winning_candidate=rollouts[1].candidate,
            rollouts=tuple(rollouts), failure_counts={FailureKind.SOLVABILITY: 2},
        )


def test_evolution_result_rejects_winner_without_pass():
    rollouts = [_fail_rollout(1)]
    with pytest.raises(InvariantError):
        EvolutionResult(
            seed_id="s", succeeded=False, winning_candidate=rollouts[0].candidate,
            rollouts=tuple(rollouts), failure_counts={FailureKind.SOLVABILITY: 1},
        )


def test_round_trip_dicts():
    rollouts = [_fail_rollout(1, "PROTOCOL"), _pass_rollout(2)]
    res = EvolutionResult(
        seed_id="s", succeeded=True, winning_candidate=rollouts[1].candidate,
        rollouts=tuple(rollouts), failure_counts={FailureKind.PROTOCOL: 1},
    )
    assert EvolutionResult.from_dict(res.to_dict()) == res


# --- property tests ----------------------------------------------------------

@st.composite
def rollout_sequences(draw):
    n_fail = draw(st.integers(min_value=0, max_value=19))
    kinds = draw(st.lists(
        st.sampled_from(["SOLVABILITY", "DIFFICULTY", "PROTOCOL"]),
        min_size=n_fail, max_size=n_fail))
    succeed = draw(st.booleans())
    rollouts = [_fail_rollout(i + 1, k) for i, k in enumerate(kinds)]
    if succeed:
        rollouts.append(_pass_rollout(len(rollouts) + 1))
    return rollouts


@given(rollout_sequences())
def test_recount_totals_match(rollouts):
    counts = recount_failures(rollouts)
    succeeded = bool(rollouts) and rollouts[-1].succeeded
    assert sum(counts.values()) == len(rollouts) - (1 if succeeded else 0)
    folded = fold_protocol_into_solvability(counts)
    assert sum(folded.values()) == sum(counts.values())
    assert folded[FailureKind.PROTOCOL] == 0


@given(st.integers(min_value=1, max_value=5), st.sampled_from(["PASS", "FAIL"]))
def test_normalize_status_is_function_of_score(score, claimed):
    out = normalize_difficulty_verdict({"status": claimed, "score": score, "reason": "r"})
    assert (out.status is GateStatus.PASS) == (score >= 3)
