"""Run-directory persistence: canonical JSONL artifacts and the manifest.

Every persisted line is canonical JSON (sorted keys, ASCII) so replayed
runs can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

from .errors import ConfigError, IoError, SchemaError
from .model import DemonstrationPair, ProposedCandidate, SeedProblem

EVOLUTION_RESULTS = "evolution_results.jsonl"
TRAJECTORIES = "trajectories.jsonl"
EVOLVED_PROBLEMS = "evolved_problems.jsonl"
FIXTURES = "fixtures.jsonl"
EVAL_RECORDS = "eval_records.jsonl"
CERTIFICATIONS = "certifications.jsonl"
MANIFEST = "manifest.json"
METRICS = "metrics.json"


def canonical_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=True)


def append_jsonl(path: Path, obj: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_line(obj) + "\n")
    except OSError as exc:
        raise IoError(f"cannot append to {path}: {exc}") from exc


def read_jsonl(path: Path) -> Iterator[dict]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: corrupt record: {exc}") from exc


def file_digest(path: Path) -> str:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise IoError(f"cannot digest {path}: {exc}") from exc


def load_seeds(path: Path) -> list[SeedProblem]:
    seeds = [SeedProblem.from_dict(raw) for raw in read_jsonl(path)]
    if not seeds:
        raise ConfigError(f"seed file {path} is empty")
    ids = [s.id for s in seeds]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"duplicate seed ids in {path}")
    return seeds


def load_demonstrations(path: Path) -> tuple[DemonstrationPair, ...]:
    pairs = []
    for raw in read_jsonl(path):
        pairs.append(DemonstrationPair(
            original=SeedProblem.from_dict(raw["original"]),
            evolved=ProposedCandidate.from_dict(raw["evolved"]),
            commentary=raw.get("commentary", ""),
        ))
    return tuple(pairs)


def write_manifest(run_dir: Path, *, run_id: str, config_text: str,
                   seed_path: str, seed_digest: str, fixture_mode: str,
                   counts: Optional[dict] = None,
                   created_at: Optional[str] = None) -> dict:
    manifest = {
        "run_id": run_id,
        "created_at": created_at or datetime.now(timezone.utc).isoformat(),
        "config_text": config_text,
        "seed_path": seed_path,
        "seed_digest": seed_digest,
        "fixture_mode": fixture_mode,
        "counts": counts or {},
    }
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / MANIFEST).write_text(
            json.dumps(manifest, sort_keys=True, ensure_ascii=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest


def read_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except ValueError as exc:
        raise SchemaError(f"corrupt manifest {path}: {exc}") from exc


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


def completed_seed_ids(run_dir: Path) -> set[str]:
    """Seeds with a terminal record; used to resume a crashed run."""
    path = run_dir / EVOLUTION_RESULTS
    if not path.exists():
        return set()
    return {raw["seed_id"] for raw in read_jsonl(path)}
