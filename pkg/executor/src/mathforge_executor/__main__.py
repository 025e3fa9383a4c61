"""Entry point: serve the newline-delimited JSON protocol on stdin/stdout.

request:  {"id": str, "op": "exec"|"reset"|"shutdown", "session": str,
           "code": str, "timeout_ms": int}
response: {"id": str, "status": "ok"|"error"|"timeout"|"blocked_import"|"ack",
           "stdout": str, "stderr": str, "duration_ms": int}

The whitelist comes from --whitelist (a JSON array) or the
SANDBOX_WHITELIST environment variable (JSON array or comma-separated),
defaulting to the standard set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .runtime import DEFAULT_WHITELIST, StreamGuard, execute, make_namespace


def resolve_whitelist(arg: str | None) -> frozenset[str]:
    raw = arg if arg is not None else os.environ.get("SANDBOX_WHITELIST")
    if raw is None:
        return frozenset(DEFAULT_WHITELIST)
    try:
        value = json.loads(raw)
    except ValueError:
        value = [name.strip() for name in raw.split(",") if name.strip()]
    if not isinstance(value, list):
        raise SystemExit("whitelist must be a JSON array of module names")
    return frozenset(str(name) for name in value)


def serve(stdin, protocol_out, whitelist: frozenset[str]) -> None:
    guard = StreamGuard()
    guard.install()
    sessions: dict[str, dict] = {}

    def reply(frame: dict) -> None:
        protocol_out.write(json.dumps(frame, sort_keys=True, ensure_ascii=True) + "\n")
        protocol_out.flush()

    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            req_id = request["id"]
            op = request["op"]
        except (ValueError, KeyError, TypeError):
            reply({"id": None, "status": "error", "stdout": "",
                   "stderr": "malformed request frame", "duration_ms": 0})
            continue

        if op == "shutdown":
            reply({"id": req_id, "status": "ack", "stdout": "", "stderr": "",
                   "duration_ms": 0})
            return
        if op == "reset":
            sessions[request.get("session", "")] = make_namespace(whitelist)
            reply({"id": req_id, "status": "ack", "stdout": "", "stderr": "",
                   "duration_ms": 0})
            continue
        if op == "exec":
            session = request.get("session", "")
            namespace = sessions.setdefault(session, make_namespace(whitelist))
            body = execute(
                request.get("code", ""), namespace,
                int(request.get("timeout_ms", 120000)), guard,
            )
            reply(dict(body, id=req_id))
            continue
        reply({"id": req_id, "status": "error", "stdout": "",
               "stderr": f"unknown op {op!r}", "duration_ms": 0})


def main() -> None:
    parser = argparse.ArgumentParser(prog="mathforge-executor")
    parser.add_argument("--whitelist", default=None,
                        help="JSON array of importable module names")
    args = parser.parse_args()
    serve(sys.stdin, sys.stdout, resolve_whitelist(args.whitelist))


if __name__ == "__main__":
    main()
