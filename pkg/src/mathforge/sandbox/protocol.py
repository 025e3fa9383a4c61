"""Executor wire protocol: newline-delimited JSON over stdin/stdout.

request:  {"id": str, "op": "exec"|"reset"|"shutdown", "session": str,
           "code": str, "timeout_ms": int}
response: {"id": str, "status": "ok"|"error"|"timeout"|"blocked_import"|"ack",
           "stdout": str, "stderr": str, "duration_ms": int}
"""

from __future__ import annotations

import json

RESPONSE_STATUSES = ("ok", "error", "timeout", "blocked_import", "ack")

# Libraries the agents may import inside the sandbox.
DEFAULT_WHITELIST = (
    "json", "math", "random", "statistics", "itertools", "collections",
    "fractions", "decimal", "re", "functools",
    "numpy", "scipy", "pandas", "openpyxl", "sympy", "mpmath", "z3", "networkx",
)

STREAM_CAP_BYTES = 64 * 1024
TRUNCATION_MARKER = "\n...[truncated]"


def encode_frame(frame: dict) -> str:
    return json.dumps(frame, sort_keys=True, ensure_ascii=True)


def decode_frame(line: str) -> dict:
    frame = json.loads(line)
    if not isinstance(frame, dict):
        raise ValueError("frame must be a JSON object")
    return frame


def exec_request(req_id: str, session: str, code: str, timeout_ms: int) -> dict:
    return {"id": req_id, "op": "exec", "session": session, "code": code,
            "timeout_ms": timeout_ms}


def reset_request(req_id: str, session: str) -> dict:
    return {"id": req_id, "op": "reset", "session": session, "code": "",
            "timeout_ms": 0}


def shutdown_request(req_id: str) -> dict:
    return {"id": req_id, "op": "shutdown", "session": "", "code": "",
            "timeout_ms": 0}


def response_frame(req_id: str, status: str, stdout: str = "", stderr: str = "",
                   duration_ms: int = 0) -> dict:
    return {"id": req_id, "status": status, "stdout": stdout, "stderr": stderr,
            "duration_ms": duration_ms}


def truncate_stream(text: str, cap: int = STREAM_CAP_BYTES) -> str:
    if len(text.encode("utf-8")) <= cap:
        return text
    encoded = text.encode("utf-8")[:cap]
    return encoded.decode("utf-8", errors="ignore") + TRUNCATION_MARKER
