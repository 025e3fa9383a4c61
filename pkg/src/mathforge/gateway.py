"""Chat-completion gateway with retries, token accounting, and record/replay.

The wire shape is the de-facto chat-completions JSON schema so any hosted or
local endpoint works.  Record mode persists (digest -> response) pairs to a
JSONL fixture store; replay mode serves exclusively from the store.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import requests

from .errors import AuthError, ContentFiltered, ReplayMiss, TransportError
from .model import TokenUsage

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = (1.0, 2.0, 4.0)

Message = dict  # {"role": ..., "content": ...}


@dataclass(frozen=True)
class ProviderProfile:
    """One chat endpoint: base URL, model name, and credential reference."""

    name: str
    base_url: str
    model: str
    api_key_env: str = ""
    max_tokens: Optional[int] = None
    timeout_s: float = 120.0

    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "") if self.api_key_env else ""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: TokenUsage
    finish: str = "stop"  # stop | length | other

    def to_fixture_dict(self) -> dict:
        return {
            "content": self.content,
            "prompt_tokens": self.usage.prompt_tokens,
            "completion_tokens": self.usage.completion_tokens,
            "finish": self.finish,
        }

    @classmethod
    def from_fixture_dict(cls, raw: dict) -> "ChatResponse":
        return cls(
            content=raw["content"],
            usage=TokenUsage(int(raw["prompt_tokens"]), int(raw["completion_tokens"])),
            finish=raw.get("finish", "stop"),
        )


def request_digest(req: ChatRequest) -> str:
    """Stable content hash over the semantic request fields.

    Canonical sorted-key JSON makes the digest insensitive to serializer
    field order; message order itself is semantic and preserved.
    """
    canonical = json.dumps(
        {
            "model": req.model,
            "messages": [
                {"role": m["role"], "content": m["content"]} for m in req.messages
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class FixtureStore:
    """JSONL-backed digest -> response store.  Writes are serialized."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, ChatResponse] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                raw = json.loads(line)
                self._entries[raw["digest"]] = ChatResponse.from_fixture_dict(raw["response"])

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str) -> Optional[ChatResponse]:
        return self._entries.get(digest)

    def put(self, digest: str, response: ChatResponse) -> None:
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = response
            line = json.dumps(
                {"digest": digest, "response": response.to_fixture_dict()},
                sort_keys=True,
                ensure_ascii=True,
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def http_transport(profile: ProviderProfile, payload: dict, timeout_s: float) -> dict:
    """POST {base_url}/chat/completions and return the parsed JSON body."""
    headers = {"Content-Type": "application/json"}
    key = profile.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = requests.post(
        profile.base_url.rstrip("/") + "/chat/completions",
        json=payload,
        headers=headers,
        timeout=timeout_s,
    )
    if resp.status_code in (401, 403):
        raise AuthError(f"endpoint returned {resp.status_code}")
    if resp.status_code >= 500:
        raise TransportError(f"endpoint returned {resp.status_code}")
    if resp.status_code >= 400:
        raise ContentFiltered(f"endpoint returned {resp.status_code}: {resp.text[:500]}")
    return resp.json()


Transport = Callable[[ProviderProfile, dict, float], dict]


@dataclass
class ChatClient:
    """Uniform client over one fixture mode: live, record, or replay.

    Shareable across threads; the store serializes its own writes.
    """

    mode: str = "live"  # live | record | replay
    store: Optional[FixtureStore] = None
    transport: Transport = field(default=http_transport)
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self) -> None:
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown fixture mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.store is None:
            raise ValueError(f"{self.mode} mode requires a fixture store")

    def chat_complete(self, profile: ProviderProfile, req: ChatRequest) -> ChatResponse:
        digest = request_digest(req)
        if self.mode == "replay":
            hit = self.store.get(digest)
            if hit is None:
                raise ReplayMiss(f"no fixture for digest {digest}")
            return hit
        if self.mode == "record":
            hit = self.store.get(digest)
            if hit is not None:
                return hit
        response = self._call_live(profile, req)
        if self.mode == "record":
            self.store.put(digest, response)
        return response

    def _call_live(self, profile: ProviderProfile, req: ChatRequest) -> ChatResponse:
        payload = {
            "model": req.model,
            "messages": list(req.messages),
            "temperature": req.temperature,
        }
        if req.max_tokens is not None:
            payload["max_tokens"] = req.max_tokens
        last_error: Optional[Exception] = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                body = self._retryable_call(profile, payload)
                return _parse_completion(body)
            except (TransportError, requests.RequestException) as exc:
                last_error = exc
                if attempt < RETRY_ATTEMPTS - 1:
                    self.sleep(RETRY_BACKOFF_S[attempt])
        raise TransportError(f"gave up after {RETRY_ATTEMPTS} attempts: {last_error}")

    def _retryable_call(self, profile: ProviderProfile, payload: dict) -> dict:
        return self.transport(profile, payload, profile.timeout_s)


def _parse_completion(body: dict) -> ChatResponse:
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"] or ""
        finish = choice.get("finish_reason", "stop")
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion body: {exc}") from exc
    if finish not in ("stop", "length"):
        finish = "other"
    usage = body.get("usage") or {}
    return ChatResponse(
        content=content,
        usage=TokenUsage(
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
        ),
        finish=finish,
    )
