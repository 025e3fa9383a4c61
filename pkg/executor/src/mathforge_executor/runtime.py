"""Snippet execution: import control, deadlines, and stream capture."""

from __future__ import annotations

import ast
import builtins
import io
import threading
import time
import traceback

# Modules that grant process or filesystem control; never importable even if
# a caller puts them on the whitelist.
ALWAYS_BLOCKED = frozenset({"os", "sys", "subprocess", "socket", "shutil", "pathlib"})

# Libraries importable by sandboxed code unless the caller narrows the set.
DEFAULT_WHITELIST = (
    "json", "math", "random", "statistics", "itertools", "collections",
    "fractions", "decimal", "re", "functools",
    "numpy", "scipy", "pandas", "openpyxl", "sympy", "mpmath", "z3", "networkx",
)

STREAM_CAP_BYTES = 64 * 1024
TRUNCATION_MARKER = "\n...[truncated]"


class _ExecTimeout(Exception):
    pass


def truncate_stream(text: str, cap: int = STREAM_CAP_BYTES) -> str:
    if len(text.encode("utf-8")) <= cap:
        return text
    encoded = text.encode("utf-8")[:cap]
    return encoded.decode("utf-8", errors="ignore") + TRUNCATION_MARKER


def _allowed(name: str, whitelist: frozenset[str]) -> bool:
    top = name.split(".")[0]
    return top not in ALWAYS_BLOCKED and top in whitelist


def scan_imports(tree: ast.Module, whitelist: frozenset[str]) -> list[str]:
    """Module names imported by the snippet that the whitelist forbids."""
    violations = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names = [alias.name for alias in node.names]
        elif isinstance(node, ast.ImportFrom):
            names = [node.module] if node.module else []
        else:
            continue
        for name in names:
            if not _allowed(name, whitelist):
                violations.append(name.split(".")[0])
    return violations


def _guarded_import(whitelist: frozenset[str]):
    real_import = builtins.__import__

    def guarded(name, globals=None, locals=None, fromlist=(), level=0):
        # relative imports (level > 0) resolve inside whitelisted packages
        if level == 0 and not _allowed(name, whitelist):
            raise ImportError(f"import of {name.split('.')[0]!r} is not permitted")
        return real_import(name, globals, locals, fromlist, level)

    return guarded


def make_namespace(whitelist: frozenset[str]) -> dict:
    guarded_builtins = dict(vars(builtins))
    guarded_builtins["__import__"] = _guarded_import(whitelist)
    return {
        "__builtins__": guarded_builtins,
        "__name__": "__sandbox__",
        "__whitelist__": whitelist,
    }


class _ThreadStream:
    """A stdout/stderr stand-in that routes writes by thread.

    Only threads explicitly registered get a buffer; writes from any other
    thread — in particular a worker abandoned after its deadline — are
    discarded instead of reaching the protocol stream or a later call's
    capture.
    """

    def __init__(self):
        self._buffers: dict[int, io.StringIO] = {}

    def register(self) -> None:
        self._buffers[threading.get_ident()] = io.StringIO()

    def take(self, thread_id: int) -> str:
        buffer = self._buffers.pop(thread_id, None)
        return buffer.getvalue() if buffer is not None else ""

    def write(self, text: str) -> int:
        buffer = self._buffers.get(threading.get_ident())
        if buffer is not None:
            buffer.write(text)
        return len(text)

    def flush(self) -> None:
        pass

    @property
    def errors(self):
        return "strict"

    @property
    def encoding(self) -> str:
        return "utf-8"


class StreamGuard:
    """Installs thread-routed stdout/stderr for the life of the process."""

    def __init__(self):
        self.out = _ThreadStream()
        self.err = _ThreadStream()

    def install(self) -> None:
        import sys as _sys
        _sys.stdout = self.out
        _sys.stderr = self.err


def execute(code: str, namespace: dict, timeout_ms: int,
            guard: StreamGuard) -> dict:
    """Run one snippet against a session namespace under a deadline."""
    whitelist: frozenset[str] = namespace["__whitelist__"]
    started = time.monotonic()

    def done(status: str, stdout: str = "", stderr: str = "") -> dict:
        return {
            "status": status,
            "stdout": truncate_stream(stdout),
            "stderr": truncate_stream(stderr),
            "duration_ms": int((time.monotonic() - started) * 1000),
        }

    try:
        tree = ast.parse(code)
    except SyntaxError:
        return done("error", stderr=traceback.format_exc(limit=0))
    violations = scan_imports(tree, whitelist)
    if violations:
        return done("blocked_import",
                    stderr=f"blocked import of: {', '.join(sorted(set(violations)))}")

    deadline = started + timeout_ms / 1000.0
    outcome: dict = {}

    def worker() -> None:
        import sys as _sys

        guard.out.register()
        guard.err.register()

        def trace(frame, event, arg):
            if time.monotonic() > deadline:
                raise _ExecTimeout
            return trace

        _sys.settrace(trace)
        try:
            exec(compile(tree, "<sandbox>", "exec"), namespace)
            outcome["status"] = "ok"
        except _ExecTimeout:
            outcome["status"] = "timeout"
        except ImportError as exc:
            if "not permitted" in str(exc):
                outcome["status"] = "blocked_import"
                outcome["stderr"] = str(exc)
            else:
                outcome["status"] = "error"
                outcome["stderr"] = traceback.format_exc()
        except BaseException:
            outcome["status"] = "error"
            outcome["stderr"] = traceback.format_exc()
        finally:
            _sys.settrace(None)

    guard.install()
    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    thread.join(timeout=timeout_ms / 1000.0 + 1.0)
    stdout = guard.out.take(thread.ident)
    captured_err = guard.err.take(thread.ident)
    if thread.is_alive():
        # stuck outside Python bytecode; the thread is abandoned
        return done("timeout", stdout=stdout)
    status = outcome.get("status", "error")
    stderr = captured_err + outcome.get("stderr", "")
    return done(status, stdout=stdout, stderr=stderr)
