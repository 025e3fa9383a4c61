"""Executor process pool: spawning, session affinity, supervision.

Each executor is a subprocess speaking the newline-delimited JSON protocol.
A handle owns a writer lock and a background reader thread; requests within
one executor are strictly serialized.  Sessions are pinned to the executor
that created them.
"""

from __future__ import annotations

import itertools
import json
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..errors import DeadlineExceeded, ExecutorDead, ProtocolViolation, SpawnError
from .protocol import (
    DEFAULT_WHITELIST,
    decode_frame,
    encode_frame,
    exec_request,
    reset_request,
    shutdown_request,
)

DEADLINE_GRACE_MS = 5000

STUB_EXECUTOR_CMD = [sys.executable, "-m", "mathforge.sandbox.stub_executor"]


@dataclass(frozen=True)
class ExecutionResult:
    status: str  # ok | error | timeout | blocked_import
    stdout: str
    stderr: str
    duration_ms: int
    executor_id: int
    latency_ms: int

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "duration_ms": self.duration_ms,
            "executor_id": self.executor_id,
            "latency_ms": self.latency_ms,
        }


class _Handle:
    def __init__(self, executor_id: int, argv: list[str], whitelist: tuple[str, ...]):
        self.executor_id = executor_id
        self.argv = list(argv)
        self.whitelist = tuple(whitelist)
        self.health = "dead"
        self.sessions: set[str] = set()
        self.lock = threading.Lock()
        self.proc: Optional[subprocess.Popen] = None
        self._responses: "queue.Queue[Optional[str]]" = queue.Queue()
        self._ids = itertools.count(1)

    def spawn(self) -> None:
        cmd = self.argv + ["--whitelist", json.dumps(list(self.whitelist))]
        try:
            self.proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnError(f"failed to spawn executor: {exc}") from exc
        self._responses = queue.Queue()
        reader = threading.Thread(
            target=self._read_loop, args=(self.proc, self._responses), daemon=True)
        reader.start()
        self.health = "live"
        self.sessions = set()

    def _read_loop(self, proc: subprocess.Popen, responses: "queue.Queue") -> None:
        for line in proc.stdout:
            responses.put(line)
        responses.put(None)  # EOF sentinel

    def request(self, frame: dict, deadline_s: float) -> dict:
        """Send one frame and wait for its matching response."""
        with self.lock:
            if self.proc is None or self.proc.poll() is not None:
                self.health = "dead"
                raise ExecutorDead(f"executor {self.executor_id} is not running")
            try:
                self.proc.stdin.write(encode_frame(frame) + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self.health = "dead"
                raise ExecutorDead(f"executor {self.executor_id} pipe closed: {exc}") from exc
            try:
                line = self._responses.get(timeout=deadline_s)
            except queue.Empty:
                self.health = "poisoned"
                raise DeadlineExceeded(
                    f"executor {self.executor_id} missed deadline of {deadline_s:.1f}s"
                )
            if line is None:
                self.health = "dead"
                raise ExecutorDead(f"executor {self.executor_id} exited mid-call")
            try:
                response = decode_frame(line)
            except ValueError as exc:
                self.health = "poisoned"
                raise ProtocolViolation(f"bad frame from executor: {exc}") from exc
            if response.get("id") != frame["id"]:
                self.health = "poisoned"
                raise ProtocolViolation(
                    f"response id {response.get('id')!r} != request id {frame['id']!r}"
                )
            return response

    def next_id(self) -> str:
        return f"e{self.executor_id}-{next(self._ids)}"

    def shutdown(self) -> None:
        if self.proc is None:
            return
        try:
            if self.proc.poll() is None:
                self.proc.stdin.write(encode_frame(shutdown_request(self.next_id())) + "\n")
                self.proc.stdin.flush()
                self.proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()
        finally:
            self.health = "dead"


class SandboxSupervisor:
    """Engine-side execute-code API over a pool of executor processes."""

    def __init__(self, argv: Optional[list[str]] = None, pool_size: int = 1,
                 whitelist: tuple[str, ...] = DEFAULT_WHITELIST):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self._argv = list(argv or STUB_EXECUTOR_CMD)
        self._handles = [_Handle(i, self._argv, whitelist) for i in range(pool_size)]
        self._session_map: dict[str, _Handle] = {}
        self._route_lock = threading.Lock()
        self._rr = itertools.count()

    def start(self) -> None:
        for handle in self._handles:
            handle.spawn()
            self._health_check(handle)

    def _health_check(self, handle: _Handle) -> None:
        try:
            response = handle.request(
                exec_request(handle.next_id(), "__health__", "x = 0", 10000),
                deadline_s=15.0,
            )
        except (ExecutorDead, DeadlineExceeded, ProtocolViolation) as exc:
            raise SpawnError(
                f"executor {handle.executor_id} failed health check: {exc}"
            ) from exc
        if response["status"] != "ok":
            raise SpawnError(
                f"executor {handle.executor_id} failed health check: {response}"
            )

    def _route(self, session_id: str) -> _Handle:
        with self._route_lock:
            handle = self._session_map.get(session_id)
            if handle is not None and handle.health == "live":
                return handle
            for _ in range(len(self._handles)):
                candidate = self._handles[next(self._rr) % len(self._handles)]
                if candidate.health == "dead":
                    candidate.spawn()
                    self._health_check(candidate)
                if candidate.health == "live":
                    candidate.sessions.add(session_id)
                    self._session_map[session_id] = candidate
                    return candidate
            raise ExecutorDead("no live executor available")

    def execute_code(self, session_id: str, code: str, timeout_ms: int = 120000) -> ExecutionResult:
        if not code:
            raise ValueError("code must be nonempty")
        handle = self._route(session_id)
        deadline_s = (timeout_ms + DEADLINE_GRACE_MS) / 1000.0
        frame = exec_request(handle.next_id(), session_id, code, timeout_ms)
        started = time.monotonic()
        try:
            response = handle.request(frame, deadline_s)
        except ExecutorDead:
            with self._route_lock:
                self._session_map.pop(session_id, None)
            handle.spawn()  # respawn for future callers; this call still fails
            self._health_check(handle)
            raise
        return ExecutionResult(
            status=response["status"],
            stdout=response.get("stdout", ""),
            stderr=response.get("stderr", ""),
            duration_ms=int(response.get("duration_ms", 0)),
            executor_id=handle.executor_id,
            latency_ms=int((time.monotonic() - started) * 1000),
        )

    def reset_session(self, session_id: str) -> None:
        handle = self._route(session_id)
        response = handle.request(reset_request(handle.next_id(), session_id), 15.0)
        if response["status"] != "ack":
            raise ProtocolViolation(f"reset not acknowledged: {response}")

    def close(self) -> None:
        for handle in self._handles:
            handle.shutdown()

    def __enter__(self) -> "SandboxSupervisor":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def spawn_pool(size: int, argv: Optional[list[str]] = None,
               whitelist: tuple[str, ...] = DEFAULT_WHITELIST) -> SandboxSupervisor:
    """Start a pool of `size` executors, each health-checked via a no-op exec."""
    if size < 1:
        raise ValueError("pool size must be >= 1")
    supervisor = SandboxSupervisor(argv=argv, pool_size=size, whitelist=whitelist)
    supervisor.start()
    return supervisor
