"""Stub executor: full wire protocol, tiny evaluation dialect.

Speaks the same stdin/stdout protocol as the real executor but only
evaluates integer arithmetic, variable assignment, ``print(...)``, and a
``sleep(ms)`` statement (for timeout tests).  Keeps the primary test suite
independent of the real sandbox runtime.

Run as: python -m mathforge.sandbox.stub_executor [--whitelist JSON_ARRAY]
"""

from __future__ import annotations

import argparse
import ast
import json
import os
import sys
import time

from .protocol import (
    DEFAULT_WHITELIST,
    decode_frame,
    encode_frame,
    response_frame,
    truncate_stream,
)

_ALLOWED_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.FloorDiv: lambda a, b: a // b,
    ast.Mod: lambda a, b: a % b,
    ast.Pow: lambda a, b: a ** b,
}


class StubError(Exception):
    pass


def _eval_expr(node: ast.expr, names: dict) -> int:
    if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.Name):
        if node.id not in names:
            raise StubError(f"NameError: name {node.id!r} is not defined")
        return names[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _eval_expr(node.operand, names)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
        left = _eval_expr(node.left, names)
        right = _eval_expr(node.right, names)
        try:
            return _ALLOWED_BINOPS[type(node.op)](left, right)
        except ZeroDivisionError:
            raise StubError("ZeroDivisionError: division by zero")
    raise StubError(f"unsupported expression: {ast.dump(node)[:120]}")


def _scan_imports(tree: ast.Module, whitelist: set[str]) -> list[str]:
    blocked = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                root = alias.name.split(".")[0]
                if root not in whitelist:
                    blocked.append(root)
        elif isinstance(node, ast.ImportFrom):
            root = (node.module or "").split(".")[0]
            if root not in whitelist:
                blocked.append(root)
    return blocked


def run_snippet(code: str, names: dict, timeout_ms: int, whitelist: set[str]) -> dict:
    """Execute one snippet against a session namespace; returns a response body."""
    started = time.monotonic()
    deadline = started + timeout_ms / 1000.0

    def elapsed_ms() -> int:
        return int((time.monotonic() - started) * 1000)

    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        return {"status": "error", "stdout": "", "stderr": f"SyntaxError: {exc.msg}",
                "duration_ms": elapsed_ms()}

    blocked = _scan_imports(tree, whitelist)
    if blocked:
        return {"status": "blocked_import", "stdout": "",
                "stderr": f"blocked import(s): {', '.join(sorted(set(blocked)))}",
                "duration_ms": elapsed_ms()}

    out: list[str] = []
    staged = dict(names)  # commit only on full success of each statement
    for stmt in tree.body:
        if time.monotonic() > deadline:
            return {"status": "timeout", "stdout": truncate_stream("".join(out)),
                    "stderr": f"timed out after {timeout_ms} ms",
                    "duration_ms": elapsed_ms()}
        try:
            if isinstance(stmt, (ast.Import, ast.ImportFrom)):
                continue  # whitelisted imports are no-ops in the stub
            if isinstance(stmt, ast.Assign) and len(stmt.targets) == 1 \
                    and isinstance(stmt.targets[0], ast.Name):
                staged[stmt.targets[0].id] = _eval_expr(stmt.value, staged)
            elif isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Call) \
                    and isinstance(stmt.value.func, ast.Name) \
                    and stmt.value.func.id == "print":
                values = [_eval_expr(arg, staged) for arg in stmt.value.args]
                out.append(" ".join(str(v) for v in values) + "\n")
            elif isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Call) \
                    and isinstance(stmt.value.func, ast.Name) \
                    and stmt.value.func.id == "sleep":
                ms = _eval_expr(stmt.value.args[0], staged)
                wake = time.monotonic() + ms / 1000.0
                while time.monotonic() < wake:
                    if time.monotonic() > deadline:
                        return {"status": "timeout",
                                "stdout": truncate_stream("".join(out)),
                                "stderr": f"timed out after {timeout_ms} ms",
                                "duration_ms": elapsed_ms()}
                    time.sleep(0.01)
            elif isinstance(stmt, ast.Expr):
                _eval_expr(stmt.value, staged)  # bare expression: evaluate, discard
            else:
                raise StubError(f"unsupported statement: {type(stmt).__name__}")
        except StubError as exc:
            names.update(staged)
            return {"status": "error", "stdout": truncate_stream("".join(out)),
                    "stderr": str(exc), "duration_ms": elapsed_ms()}
    names.clear()
    names.update(staged)
    return {"status": "ok", "stdout": truncate_stream("".join(out)), "stderr": "",
            "duration_ms": elapsed_ms()}


def serve(stdin=None, stdout=None, whitelist=None) -> None:
    """Single-threaded request loop; one response line per request line."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    whitelist = set(whitelist if whitelist is not None else DEFAULT_WHITELIST)
    sessions: dict[str, dict] = {}

    def reply(frame: dict) -> None:
        stdout.write(encode_frame(frame) + "\n")
        stdout.flush()

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = decode_frame(line)
            req_id = str(req["id"])
            op = req["op"]
        except (ValueError, KeyError) as exc:
            reply(response_frame("", "error", stderr=f"malformed request: {exc}"))
            continue
        if op == "shutdown":
            reply(response_frame(req_id, "ack"))
            return
        if op == "reset":
            sessions[str(req.get("session", ""))] = {}
            reply(response_frame(req_id, "ack"))
            continue
        if op == "exec":
            session = sessions.setdefault(str(req.get("session", "")), {})
            body = run_snippet(
                str(req.get("code", "")), session,
                int(req.get("timeout_ms", 120000)), whitelist,
            )
            reply(response_frame(req_id, body["status"], body["stdout"],
                                 body["stderr"], body["duration_ms"]))
            continue
        reply(response_frame(req_id, "error", stderr=f"unknown op {op!r}"))


def main() -> None:
    parser = argparse.ArgumentParser(description="stub sandbox executor")
    parser.add_argument("--whitelist", default=None,
                        help="JSON array of importable module names")
    args = parser.parse_args()
    raw = args.whitelist or os.environ.get("SANDBOX_WHITELIST")
    whitelist = json.loads(raw) if raw else None
    serve(whitelist=whitelist)


if __name__ == "__main__":
    main()
