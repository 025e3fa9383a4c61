"""Sandbox supervisor + built-in stub executor over the wire protocol."""

from __future__ import annotations

import sys
import threading
import time

import pytest

from mathforge.errors import ExecutorDead, SpawnError
from mathforge.sandbox.conformance import run_conformance
from mathforge.sandbox.protocol import (
    STREAM_CAP_BYTES,
    TRUNCATION_MARKER,
    decode_frame,
    encode_frame,
    truncate_stream,
)
from mathforge.sandbox.stub_executor import run_snippet
from mathforge.sandbox.supervisor import (
    STUB_EXECUTOR_CMD,
    SandboxSupervisor,
    spawn_pool,
)


@pytest.fixture(scope="module")
def pool():
    sup = spawn_pool(2)
    yield sup
    sup.close()


# --- protocol framing --------------------------------------------------------

def test_frame_round_trip():
    frame = {"id": "1", "op": "exec", "session": "s", "code": "print(1)", "timeout_ms": 5}
    line = encode_frame(frame)
    assert "\n" not in line
    assert decode_frame(line) == frame


def test_truncate_stream_caps_at_64k():
    text = "a" * (STREAM_CAP_BYTES + 100)
    out = truncate_stream(text)
    assert out.endswith(TRUNCATION_MARKER)
    assert len(out.encode("utf-8")) <= STREAM_CAP_BYTES + len(TRUNCATION_MARKER.encode("utf-8"))
    assert truncate_stream("short") == "short"


# --- stub dialect (in process) -----------------------------------------------

def test_stub_arithmetic_and_state():
    ns = {}
    out = run_snippet("x = 6\nprint(x * 7)", ns, 1000, set())
    assert (out["status"], out["stdout"]) == ("ok", "42\n")
    out = run_snippet("print(x + 1)", ns, 1000, set())
    assert out["stdout"] == "7\n"


def test_stub_name_error():
    out = run_snippet("print(missing)", {}, 1000, set())
    assert out["status"] == "error"
    assert "NameError" in out["stderr"]


def test_stub_blocked_import_has_no_side_effects():
    ns = {}
    out = run_snippet("y = 5\nimport os\nprint(y)", ns, 1000, {"math"})
    assert out["status"] == "blocked_import"
    assert "y" not in ns


def test_stub_whitelisted_import_is_noop():
    out = run_snippet("import math\nprint(2 ** 5)", {}, 1000, {"math"})
    assert (out["status"], out["stdout"]) == ("ok", "32\n")


def test_stub_timeout():
    started = time.monotonic()
    out = run_snippet("sleep(60000)", {}, 500, set())
    assert out["status"] == "timeout"
    assert time.monotonic() - started < 2.0


# --- conformance suite against the stub subprocess ---------------------------

def test_stub_passes_conformance():
    run_conformance(STUB_EXECUTOR_CMD)


# --- supervisor --------------------------------------------------------------

def test_execute_and_session_affinity(pool):
    pool.reset_session("affinity")
    assert pool.execute_code("affinity", "n = 2").status == "ok"
    for _ in range(5):
        out = pool.execute_code("affinity", "n = n * 2")
        assert out.status == "ok", out.stderr
    assert pool.execute_code("affinity", "print(n)").stdout == "64\n"


def test_sessions_are_isolated(pool):
    pool.execute_code("iso-a", "v = 1")
    out = pool.execute_code("iso-b", "print(v)")
    assert out.status == "error" and "NameError" in out.stderr


def test_reset_clears_session(pool):
    pool.execute_code("reset-me", "v = 9")
    pool.reset_session("reset-me")
    assert pool.execute_code("reset-me", "print(v)").status == "error"


def test_timeout_is_reported(pool):
    out = pool.execute_code("slow", "sleep(60000)", timeout_ms=400)
    assert out.status == "timeout"


def test_blocked_import_via_supervisor(pool):
    out = pool.execute_code("imports", "import socket")
    assert out.status == "blocked_import"


def test_respawns_dead_executor():
    with spawn_pool(1) as sup:
        handle = sup._route("crash")
        handle.proc.kill()
        handle.proc.wait()
        with pytest.raises(ExecutorDead):
            sup.execute_code("crash", "print(1 + 1)")
        out = sup.execute_code("crash", "print(1 + 1)")
        assert (out.status, out.stdout) == ("ok", "2\n")


def test_spawn_failure_raises():
    sup = SandboxSupervisor(argv=[sys.executable, "-c", "raise SystemExit(3)"], pool_size=1)
    with pytest.raises(SpawnError):
        sup.start()


def test_hundred_concurrent_sessions(pool):
    errors = []

    def worker(i):
        session = f"stress-{i}"
        try:
            pool.reset_session(session)
            r1 = pool.execute_code(session, f"base = {i}")
            r2 = pool.execute_code(session, "base = base + 100")
            r3 = pool.execute_code(session, "print(base)")
            if (r1.status, r2.status, r3.status) != ("ok", "ok", "ok"):
                errors.append((i, r1.status, r2.status, r3.status))
            elif r3.stdout != f"{i + 100}\n":
                errors.append((i, r3.stdout))
        except Exception as exc:  # noqa: BLE001 - collect everything
            errors.append((i, repr(exc)))

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=60)
    assert errors == []
