#!/usr/bin/env python3
"""Generate the shipped synthetic failure corpus.

Builds 100 evolution-result records whose folded per-seed failure averages
are exactly total 4.11, solvability 2.65 (including protocol-cause
failures), and difficulty 1.46, then writes the corpus plus its stored
stats for the recount oracle to check against.

Usage: python3 scripts/make_failure_corpus.py [out_dir]
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mathforge.model import (  # noqa: E402
    DifficultyVerdict,
    EvolutionResult,
    FailureCause,
    FailureKind,
    GateStatus,
    GateVerdict,
    ProposedCandidate,
    RolloutRecord,
    recount_failures,
)

N_SEEDS = 100
SOLVABILITY_TOTAL = 255
PROTOCOL_TOTAL = 10   # folds into solvability for reporting: 265 -> 2.65
DIFFICULTY_TOTAL = 146  # -> 1.46
MAX_FAILURES_PER_SEED = 15  # leaves room for the terminal success within 20
SEED = 20250826


def distribute(rng: random.Random, total: int, buckets: list[int], cap: list[int]) -> None:
    """Spread `total` unit failures over buckets without exceeding caps."""
    for _ in range(total):
        while True:
            i = rng.randrange(len(buckets))
            if cap[i] > 0:
                buckets[i] += 1
                cap[i] -= 1
                break


def build_corpus() -> list[EvolutionResult]:
    rng = random.Random(SEED)
    caps = [MAX_FAILURES_PER_SEED] * N_SEEDS
    solvability = [0] * N_SEEDS
    protocol = [0] * N_SEEDS
    difficulty = [0] * N_SEEDS
    distribute(rng, SOLVABILITY_TOTAL, solvability, caps)
    distribute(rng, PROTOCOL_TOTAL, protocol, caps)
    distribute(rng, DIFFICULTY_TOTAL, difficulty, caps)

    results = []
    for i in range(N_SEEDS):
        kinds = (
            [FailureKind.SOLVABILITY] * solvability[i]
            + [FailureKind.PROTOCOL] * protocol[i]
            + [FailureKind.DIFFICULTY] * difficulty[i]
        )
        rng.shuffle(kinds)
        candidate = ProposedCandidate(
            new_problem=f"synthetic problem {i}",
            new_solution_steps="1. synthetic step.",
            new_answer=str(i),
        )
        rollouts = []
        for j, kind in enumerate(kinds, 1):
            if kind is FailureKind.SOLVABILITY:
                rollouts.append(RolloutRecord(
                    rollout_index=j, candidate=candidate,
                    solvability=GateVerdict(status=GateStatus.FAIL, reason="synthetic"),
                    failure=FailureCause(kind=kind, detail="synthetic"),
                ))
            elif kind is FailureKind.DIFFICULTY:
                rollouts.append(RolloutRecord(
                    rollout_index=j, candidate=candidate,
                    solvability=GateVerdict(status=GateStatus.PASS, reason="synthetic"),
                    difficulty=DifficultyVerdict(
                        status=GateStatus.FAIL, score=2, reason="synthetic"),
                    failure=FailureCause(kind=kind, detail="synthetic"),
                ))
            else:
                rollouts.append(RolloutRecord(
                    rollout_index=j,
                    failure=FailureCause(kind=kind, detail="synthetic"),
                ))
        rollouts.append(RolloutRecord(
            rollout_index=len(rollouts) + 1, candidate=candidate,
            solvability=GateVerdict(status=GateStatus.PASS, reason="synthetic"),
            difficulty=DifficultyVerdict(status=GateStatus.PASS, score=4, reason="synthetic"),
        ))
        results.append(EvolutionResult(
            seed_id=f"corpus-{i:03d}", succeeded=True, winning_candidate=candidate,
            rollouts=tuple(rollouts), failure_counts=recount_failures(rollouts),
        ))
    return results


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "fixtures" / "failure_corpus"
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    results = build_corpus()
    with (out_dir / "evolution_results.jsonl").open("w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result.to_dict(), sort_keys=True, ensure_ascii=True) + "\n")
    stats = {
        "n_seeds": N_SEEDS,
        "avg_total": 4.11,
        "avg_solvability": 2.65,
        "avg_difficulty": 1.46,
    }
    (out_dir / "stats.json").write_text(
        json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(results)} records to {out_dir}")


if __name__ == "__main__":
    main()
