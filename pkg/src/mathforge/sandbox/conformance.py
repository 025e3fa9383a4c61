"""Wire-protocol conformance checks, runnable against any executor command.

The checks talk to the executor exclusively through the stdio protocol, so
the same suite validates both the built-in stub and a real executor binary.
Each check raises AssertionError on violation.
"""

from __future__ import annotations

import json
import subprocess
import time

from .protocol import decode_frame, encode_frame

DEFAULT_TIMEOUT_CODE = "sleep(600000)"  # stub dialect; real executors pass a busy loop


class ExecutorProbe:
    """Minimal synchronous client for conformance testing."""

    def __init__(self, argv: list[str], whitelist: list[str] | None = None):
        cmd = list(argv)
        if whitelist is not None:
            cmd += ["--whitelist", json.dumps(whitelist)]
        self.proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, text=True, bufsize=1,
        )
        self._counter = 0

    def request(self, op: str, session: str = "", code: str = "",
                timeout_ms: int = 30000, wait_s: float = 60.0) -> dict:
        self._counter += 1
        req_id = f"probe-{self._counter}"
        frame = {"id": req_id, "op": op, "session": session, "code": code,
                 "timeout_ms": timeout_ms}
        self.proc.stdin.write(encode_frame(frame) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        assert line, "executor closed stdout without responding"
        response = decode_frame(line)
        assert response["id"] == req_id, (
            f"response id {response['id']!r} != request id {req_id!r}"
        )
        return response

    def exec(self, session: str, code: str, timeout_ms: int = 30000) -> dict:
        return self.request("exec", session=session, code=code, timeout_ms=timeout_ms)

    def close(self) -> None:
        try:
            if self.proc.poll() is None:
                self.request("shutdown", wait_s=5.0)
                self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()

    def __enter__(self) -> "ExecutorProbe":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def check_arithmetic(probe: ExecutorProbe) -> None:
    response = probe.exec("arith", "print(6*7)")
    assert response["status"] == "ok", response
    assert response["stdout"] == "42\n", response


def check_namespace_persistence(probe: ExecutorProbe) -> None:
    assert probe.exec("persist", "x = 41")["status"] == "ok"
    response = probe.exec("persist", "print(x + 1)")
    assert response["status"] == "ok", response
    assert response["stdout"] == "42\n", response


def check_session_isolation(probe: ExecutorProbe) -> None:
    assert probe.exec("iso-a", "secret = 7")["status"] == "ok"
    response = probe.exec("iso-b", "print(secret)")
    assert response["status"] == "error", f"session leak: {response}"
    assert "secret" in response["stderr"], response


def check_reset_semantics(probe: ExecutorProbe) -> None:
    assert probe.exec("resettable", "x = 1")["status"] == "ok"
    assert probe.request("reset", session="resettable")["status"] == "ack"
    response = probe.exec("resettable", "print(x)")
    assert response["status"] == "error", f"reset did not clear namespace: {response}"
    assert "x" in response["stderr"], response
    # reset of an unknown session is an idempotent create
    assert probe.request("reset", session="never-seen")["status"] == "ack"
    assert probe.request("reset", session="never-seen")["status"] == "ack"


def check_blocked_import(probe: ExecutorProbe) -> None:
    assert probe.exec("blocked", "x = 5")["status"] == "ok"
    response = probe.exec("blocked", "import os\nx = 99")
    assert response["status"] == "blocked_import", response
    # no statement of the snippet may have executed
    after = probe.exec("blocked", "print(x)")
    assert after["status"] == "ok" and after["stdout"] == "5\n", after


def check_timeout(probe: ExecutorProbe, timeout_code: str = DEFAULT_TIMEOUT_CODE,
                  timeout_ms: int = 1000, max_wall_s: float = 2.0) -> None:
    started = time.monotonic()
    response = probe.exec("slow", timeout_code, timeout_ms=timeout_ms)
    wall = time.monotonic() - started
    assert response["status"] == "timeout", response
    assert wall < max_wall_s, f"timeout took {wall:.2f}s wall (limit {max_wall_s}s)"


def check_protocol_totality(probe: ExecutorProbe) -> None:
    # a burst of mixed requests: exactly one response each, ids matching
    for i in range(10):
        session = f"tot-{i % 3}"
        if i % 4 == 3:
            assert probe.request("reset", session=session)["status"] == "ack"
        else:
            response = probe.exec(session, f"print({i} + {i})")
            assert response["status"] == "ok", response
            assert response["stdout"] == f"{2 * i}\n", response


ALL_CHECKS = (
    check_arithmetic,
    check_namespace_persistence,
    check_session_isolation,
    check_reset_semantics,
    check_blocked_import,
    check_timeout,
    check_protocol_totality,
)


def run_conformance(argv: list[str], whitelist: list[str] | None = None,
                    timeout_code: str = DEFAULT_TIMEOUT_CODE) -> None:
    """Run the full conformance suite against one freshly spawned executor."""
    with ExecutorProbe(argv, whitelist=whitelist) as probe:
        check_arithmetic(probe)
        check_namespace_persistence(probe)
        check_session_isolation(probe)
        check_reset_semantics(probe)
        check_blocked_import(probe)
        check_timeout(probe, timeout_code=timeout_code)
        check_protocol_totality(probe)
