"""Command-line entry points: evolve, evaluate, report, replay."""

from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .config import FixtureConfig, RunConfig, load_config, parse_config
from .errors import (
    ConfigError,
    EmptyInput,
    IoError,
    MathforgeError,
    ReplayDivergence,
    ReplayMiss,
    SchemaError,
)
from .evaluation import (
    EvalRecord,
    SolverProfile,
    certify_solvability,
    compute_metrics,
    score_solution,
    solve_with_retries,
)
from .gateway import ChatClient, FixtureStore, http_transport
from .model import (
    DifficultyVerdict,
    EvolutionResult,
    FailureKind,
    GateStatus,
    GateVerdict,
    ProposedCandidate,
    RolloutRecord,
    SeedProblem,
)
from .pipeline import EvolutionEngine, PipelineConfig
from .reporting import histogram_csv, recount_metrics, render_report
from .runio import (
    CERTIFICATIONS,
    EVAL_RECORDS,
    EVOLUTION_RESULTS,
    EVOLVED_PROBLEMS,
    FIXTURES,
    METRICS,
    TRAJECTORIES,
    append_jsonl,
    completed_seed_ids,
    file_digest,
    load_demonstrations,
    load_seeds,
    new_run_id,
    read_jsonl,
    write_manifest,
    read_manifest,
)
from .sandbox.supervisor import STUB_EXECUTOR_CMD, spawn_pool

HISTOGRAM_BIN_WIDTH = 1000.0


def _make_client(cfg: RunConfig, out_dir: Path, transport=None) -> ChatClient:
    mode = cfg.fixture.mode
    store = None
    if mode in ("record", "replay"):
        store = FixtureStore(Path(cfg.fixture.path) if cfg.fixture.path
                             else out_dir / FIXTURES)
    return ChatClient(mode=mode, store=store, transport=transport or http_transport)


def _zero_timings(step_raw: dict) -> dict:
    observation = step_raw.get("observation")
    if observation:
        observation = dict(observation, duration_ms=0, latency_ms=0)
    return dict(step_raw, observation=observation)


def run_evolution_phase(seeds: list[SeedProblem], cfg: RunConfig, out_dir: Path,
                        transport=None) -> int:
    """Shared core of `evolve` and `replay`: returns the ESC over all records."""
    out_dir.mkdir(parents=True, exist_ok=True)
    client = _make_client(cfg, out_dir, transport)
    deterministic = cfg.fixture.mode != "live"

    def sink(traj_id: str, agent: str, steps) -> None:
        raw_steps = [s.to_dict() for s in steps]
        if deterministic:
            raw_steps = [_zero_timings(s) for s in raw_steps]
        append_jsonl(out_dir / TRAJECTORIES,
                     {"trajectory_id": traj_id, "agent": agent, "steps": raw_steps})

    executor_cmd = list(cfg.sandbox.executor_cmd) or STUB_EXECUTOR_CMD
    supervisor = spawn_pool(cfg.sandbox.pool_size, argv=executor_cmd,
                            whitelist=cfg.sandbox.whitelist)
    try:
        engine = EvolutionEngine(
            cfg=PipelineConfig(
                rollout_budget=cfg.rollout_budget,
                max_steps=cfg.max_steps,
                per_step_timeout_ms=cfg.sandbox.per_call_timeout_ms,
                difficulty_accept_min=cfg.difficulty_accept_min,
                demonstrations=(
                    load_demonstrations(Path(cfg.demonstrations_path))
                    if cfg.demonstrations_path else ()
                ),
            ),
            client=client,
            supervisor=supervisor,
            evolver_profile=cfg.profile(cfg.evolver),
            solvability_profile=cfg.profile(cfg.solvability_gate),
            difficulty_profile=cfg.profile(cfg.difficulty_gate),
            trajectory_sink=sink,
            deterministic_timing=deterministic,
        )
        done = completed_seed_ids(out_dir)
        for seed in seeds:
            if seed.id in done:
                continue
            result = engine.evolve_one(seed)
            append_jsonl(out_dir / EVOLUTION_RESULTS, result.to_dict())
            if result.succeeded:
                append_jsonl(out_dir / EVOLVED_PROBLEMS,
                             _evolved_problem_record(result, cfg.evolver))
    finally:
        supervisor.close()
    return sum(1 for raw in read_jsonl(out_dir / EVOLUTION_RESULTS) if raw["succeeded"])


def _evolved_problem_record(result: EvolutionResult, evolver: str) -> dict:
    last = result.rollouts[-1]
    candidate = result.winning_candidate
    counts = {k.value.lower(): v for k, v in result.failure_counts.items()}
    return {
        "seed_id": result.seed_id,
        "new_problem": candidate.new_problem,
        "new_solution_steps": candidate.new_solution_steps,
        "new_answer": candidate.new_answer,
        "evolver": evolver,
        "rollouts_used": result.rollouts_used,
        "failures": {
            "solvability": counts.get("solvability", 0),
            "difficulty": counts.get("difficulty", 0),
            "protocol": counts.get("protocol", 0),
        },
        "difficulty_score": last.difficulty.score,
        "difficulty_reason": last.difficulty.reason,
    }


def cmd_evolve(seed_path: str, config_path: Optional[str], out: str,
               transport=None) -> int:
    try:
        cfg = load_config(config_path)
        seeds = load_seeds(Path(seed_path))
    except (ConfigError, IoError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out)
    run_id = new_run_id()
    write_manifest(
        out_dir, run_id=run_id, config_text=cfg.raw_text,
        seed_path=str(seed_path), seed_digest=file_digest(Path(seed_path)),
        fixture_mode=cfg.fixture.mode,
    )
    try:
        esc = run_evolution_phase(seeds, cfg, out_dir, transport)
    except MathforgeError as exc:
        print(f"infrastructure failure: {exc}", file=sys.stderr)
        return 1
    write_manifest(
        out_dir, run_id=run_id, config_text=cfg.raw_text,
        seed_path=str(seed_path), seed_digest=file_digest(Path(seed_path)),
        fixture_mode=cfg.fixture.mode,
        counts={"seeds": len(seeds), "esc": esc},
    )
    print(f"evolved {len(seeds)} seeds, esc={esc}, run={out_dir}")
    return 0


def _solver_profiles(cfg: RunConfig) -> list[SolverProfile]:
    profiles = []
    for name in cfg.solvers:
        provider = cfg.profile(name)
        if provider.max_tokens is None:
            raise ConfigError(f"solver profile {name!r} needs an explicit max_tokens")
        profiles.append(SolverProfile(
            name=name,
            provider=provider,
            max_tokens=provider.max_tokens,
            wall_timeout_s=cfg.eval.wall_timeout_min * 60.0,
            max_attempts=cfg.eval.max_attempts,
        ))
    if not profiles:
        raise ConfigError("no solver profiles configured")
    return profiles


def cmd_evaluate(problems_path: str, config_path: Optional[str], out: str,
                 seeds_path: Optional[str] = None, transport=None) -> int:
    try:
        cfg = load_config(config_path)
        problems = list(read_jsonl(Path(problems_path)))
        if not problems:
            raise EmptyInput(f"problems file {problems_path} is empty")
        solvers = _solver_profiles(cfg)
        seeds = load_seeds(Path(seeds_path)) if seeds_path else []
    except (ConfigError, IoError, SchemaError, EmptyInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    client = _make_client(cfg, out_dir, transport)
    judge_profile = cfg.profile(cfg.judge)

    try:
        certifications = []
        for raw in problems:
            candidate = ProposedCandidate(
                new_problem=raw["new_problem"],
                new_solution_steps=raw["new_solution_steps"],
                new_answer=raw.get("new_answer"),
            )
            # presence in the evolved set means the internal gates passed
            internal = GateVerdict(status=GateStatus.PASS, reason="passed both internal gates")
            certified = certify_solvability(candidate, internal, client, judge_profile)
            record = {"seed_id": raw["seed_id"], "certified": certified,
                      "judge": cfg.judge}
            certifications.append(record)
            append_jsonl(out_dir / CERTIFICATIONS, record)

        eval_records: list[EvalRecord] = []
        datasets = [("evolution", [(raw["seed_id"], raw["new_problem"]) for raw in problems])]
        if seeds:
            datasets.insert(0, ("origin", [(s.id, s.problem) for s in seeds]))
        for dataset, items in datasets:
            for problem_id, text in items:
                for solver in solvers:
                    result = solve_with_retries(problem_id, text, solver, client)
                    score = score_solution(text, result, client, judge_profile)
                    record = EvalRecord(
                        problem_id=problem_id, dataset=dataset, solver=solver.name,
                        score=score.score, result=result,
                    )
                    eval_records.append(record)
                    append_jsonl(out_dir / EVAL_RECORDS,
                                 dict(record.to_dict(), score_reason=score.reason))

        evolution_results = _load_or_synthesize_results(out_dir, problems)
        metrics = compute_metrics(
            evolution_results,
            {c["seed_id"]: c["certified"] for c in certifications},
            [r for r in eval_records if r.dataset == "origin"],
            [r for r in eval_records if r.dataset == "evolution"],
            solved_threshold=cfg.eval.solved_threshold,
        )
        (out_dir / METRICS).write_text(
            json.dumps(_metrics_to_json(metrics), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except MathforgeError as exc:
        print(f"infrastructure failure: {exc}", file=sys.stderr)
        return 1
    print(f"evaluated {len(problems)} problems x {len(solvers)} solvers, "
          f"esc={metrics.esc} csc={metrics.csc}")
    return 0


def _load_or_synthesize_results(out_dir: Path, problems: list[dict]) -> list[EvolutionResult]:
    path = out_dir / EVOLUTION_RESULTS
    if path.exists():
        return [EvolutionResult.from_dict(raw) for raw in read_jsonl(path)]
    # evaluate-only run dir: every evolved problem passed both gates upstream
    results = []
    for raw in problems:
        candidate = ProposedCandidate(
            new_problem=raw["new_problem"],
            new_solution_steps=raw["new_solution_steps"],
            new_answer=raw.get("new_answer"),
        )
        rollout = RolloutRecord(
            rollout_index=1,
            candidate=candidate,
            solvability=GateVerdict(status=GateStatus.PASS, reason="upstream gate"),
            difficulty=DifficultyVerdict(
                status=GateStatus.PASS,
                score=int(raw.get("difficulty_score", 3)),
                reason=raw.get("difficulty_reason", "upstream gate"),
            ),
        )
        results.append(EvolutionResult(
            seed_id=raw["seed_id"], succeeded=True, winning_candidate=candidate,
            rollouts=(rollout,), failure_counts={k: 0 for k in FailureKind},
        ))
    return results


def _fraction_json(value) -> Optional[list]:
    if value is None:
        return None
    return [value.numerator, value.denominator]


def _metrics_to_json(metrics) -> dict:
    return {
        "esc": metrics.esc,
        "csc": metrics.csc,
        "ar": _fraction_json(metrics.ar),
        "origin_sr": _fraction_json(metrics.origin_sr),
        "evolution_sr": _fraction_json(metrics.evolution_sr),
        "sr_delta": _fraction_json(metrics.sr_delta),
        "atc_origin": metrics.atc_origin,
        "atc_evolution": metrics.atc_evolution,
        "failure_stats": {k: _fraction_json(v) for k, v in metrics.failure_stats.items()},
    }


def cmd_report(run_dir: str, fmt: str = "table") -> int:
    run = Path(run_dir)
    try:
        evolution_raw = list(read_jsonl(run / EVOLUTION_RESULTS))
        certifications_raw = (
            list(read_jsonl(run / CERTIFICATIONS)) if (run / CERTIFICATIONS).exists() else []
        )
        eval_raw = list(read_jsonl(run / EVAL_RECORDS)) if (run / EVAL_RECORDS).exists() else []
        threshold = 0.5
        manifest_path = run / "manifest.json"
        if manifest_path.exists():
            cfg = parse_config(read_manifest(run)["config_text"])
            threshold = cfg.eval.solved_threshold
        metrics = recount_metrics(evolution_raw, certifications_raw, eval_raw, threshold)
        sys.stdout.write(render_report(metrics, fmt))
        if eval_raw:
            (run / "histogram.csv").write_text(
                histogram_csv(eval_raw, HISTOGRAM_BIN_WIDTH), encoding="utf-8"
            )
    except (IoError, SchemaError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_replay(run_dir: str, transport=None) -> int:
    run = Path(run_dir)
    replay_dir = run / "replay_check"
    try:
        manifest = read_manifest(run)
        cfg = parse_config(manifest["config_text"])
        seed_path = Path(manifest["seed_path"])
        if file_digest(seed_path) != manifest["seed_digest"]:
            raise ReplayDivergence(f"seed file {seed_path} digest changed since recording")
        seeds = load_seeds(seed_path)
        fixture_path = cfg.fixture.path or str(run / FIXTURES)
        replay_cfg = dataclasses.replace(
            cfg, fixture=FixtureConfig(mode="replay", path=fixture_path), raw_text=cfg.raw_text,
        )
        if replay_dir.exists():
            shutil.rmtree(replay_dir)
        run_evolution_phase(seeds, replay_cfg, replay_dir, transport)
        for name in (TRAJECTORIES, EVOLUTION_RESULTS):
            original = (run / name).read_bytes()
            replayed = (replay_dir / name).read_bytes()
            if original != replayed:
                raise ReplayDivergence(_first_divergence(name, original, replayed))
    except ReplayMiss as exc:
        print(f"replay miss: {exc}", file=sys.stderr)
        return 1
    except (ReplayDivergence, MathforgeError) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    finally:
        if replay_dir.exists():
            shutil.rmtree(replay_dir, ignore_errors=True)
    print("replay ok: trajectory and result records are byte-identical")
    return 0


def _first_divergence(name: str, original: bytes, replayed: bytes) -> str:
    original_lines = original.decode("utf-8", "replace").splitlines()
    replayed_lines = replayed.decode("utf-8", "replace").splitlines()
    for i, (a, b) in enumerate(zip(original_lines, replayed_lines), 1):
        if a != b:
            return f"{name}: first differing record at line {i}"
    return f"{name}: record counts differ ({len(original_lines)} vs {len(replayed_lines)})"


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="mathforge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="evolve seed problems into harder variants")
    p.add_argument("--seeds", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="certify and solve evolved problems")
    p.add_argument("--problems", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default=None, help="seed JSONL for origin-SR evaluation")

    p = sub.add_parser("report", help="recompute and render metrics from a run dir")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("table", "csv"), default="table")

    p = sub.add_parser("replay", help="re-execute a recorded run and compare artifacts")
    p.add_argument("--run", required=True)

    args = parser.parse_args(argv)
    if args.command == "evolve":
        return cmd_evolve(args.seeds, args.config, args.out)
    if args.command == "evaluate":
        return cmd_evaluate(args.problems, args.config, args.out, seeds_path=args.seeds)
    if args.command == "report":
        return cmd_report(args.run, args.format)
    if args.command == "replay":
        return cmd_replay(args.run)
    return 2


if __name__ == "__main__":
    sys.exit(main())
