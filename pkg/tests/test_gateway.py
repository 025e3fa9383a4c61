"""Gateway: digests, fixture store, retry policy, record/replay modes."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from mathforge.errors import AuthError, ReplayMiss, TransportError
from mathforge.gateway import (
    RETRY_ATTEMPTS,
    RETRY_BACKOFF_S,
    ChatClient,
    ChatRequest,
    ChatResponse,
    FixtureStore,
    ProviderProfile,
    request_digest,
    _parse_completion,
)
from mathforge.model import TokenUsage

PROFILE = ProviderProfile(name="p", base_url="http://localhost:9", model="m")


def _req(content="hello", temperature=0.0, max_tokens=None):
    return ChatRequest(
        model="m",
        messages=({"role": "user", "content": content},),
        temperature=temperature,
        max_tokens=max_tokens,
    )


def _body(content, finish="stop", pt=5, ct=7):
    return {
        "choices": [{"message": {"content": content}, "finish_reason": finish}],
        "usage": {"prompt_tokens": pt, "completion_tokens": ct},
    }


# --- digest ------------------------------------------------------------------

def test_digest_is_stable_and_sensitive():
    a = request_digest(_req("x"))
    assert a == request_digest(_req("x"))
    assert a != request_digest(_req("y"))
    assert a != request_digest(_req("x", temperature=0.5))
    assert a != request_digest(_req("x", max_tokens=10))


def test_digest_ignores_message_key_order():
    r1 = ChatRequest(model="m", messages=({"role": "user", "content": "x"},))
    r2 = ChatRequest(model="m", messages=({"content": "x", "role": "user"},))
    assert request_digest(r1) == request_digest(r2)


def test_digest_respects_message_order():
    msgs = ({"role": "system", "content": "a"}, {"role": "user", "content": "b"})
    r1 = ChatRequest(model="m", messages=msgs)
    r2 = ChatRequest(model="m", messages=msgs[::-1])
    assert request_digest(r1) != request_digest(r2)


@given(st.text(max_size=200), st.text(max_size=200))
def test_digest_collision_free_on_content(a, b):
    if a != b:
        assert request_digest(_req(a)) != request_digest(_req(b))


# --- fixture store -----------------------------------------------------------

def test_store_round_trip(tmp_path):
    path = tmp_path / "fixtures.jsonl"
    store = FixtureStore(path)
    resp = ChatResponse("out", TokenUsage(3, 4), "stop")
    store.put("d1", resp)
    reloaded = FixtureStore(path)
    assert reloaded.get("d1") == resp
    line = json.loads(path.read_text().splitlines()[0])
    assert set(line) == {"digest", "response"}
    assert set(line["response"]) == {"content", "prompt_tokens", "completion_tokens", "finish"}


def test_store_put_is_idempotent(tmp_path):
    path = tmp_path / "f.jsonl"
    store = FixtureStore(path)
    store.put("d", ChatResponse("a", TokenUsage(1, 1)))
    store.put("d", ChatResponse("b", TokenUsage(2, 2)))
    assert len(path.read_text().splitlines()) == 1
    assert store.get("d").content == "a"


# --- retry policy ------------------------------------------------------------

def test_retries_transport_errors_with_backoff():
    sleeps = []
    calls = []

    def flaky(profile, payload, timeout_s):
        calls.append(payload)
        if len(calls) < 3:
            raise TransportError("boom")
        return _body("ok")

    client = ChatClient(mode="live", transport=flaky, sleep=sleeps.append)
    out = client.chat_complete(PROFILE, _req())
    assert out.content == "ok"
    assert sleeps == [RETRY_BACKOFF_S[0], RETRY_BACKOFF_S[1]]


def test_gives_up_after_three_attempts():
    calls = []

    def dead(profile, payload, timeout_s):
        calls.append(1)
        raise TransportError("down")

    client = ChatClient(mode="live", transport=dead, sleep=lambda s: None)
    with pytest.raises(TransportError):
        client.chat_complete(PROFILE, _req())
    assert len(calls) == RETRY_ATTEMPTS


def test_auth_errors_are_not_retried():
    calls = []

    def forbidden(profile, payload, timeout_s):
        calls.append(1)
        raise AuthError("401")

    client = ChatClient(mode="live", transport=forbidden, sleep=lambda s: None)
    with pytest.raises(AuthError):
        client.chat_complete(PROFILE, _req())
    assert len(calls) == 1


# --- record / replay ---------------------------------------------------------

def test_record_then_replay(tmp_path):
    path = tmp_path / "f.jsonl"
    live_calls = []

    def transport(profile, payload, timeout_s):
        live_calls.append(1)
        return _body("recorded")

    rec = ChatClient(mode="record", store=FixtureStore(path), transport=transport)
    first = rec.chat_complete(PROFILE, _req())
    second = rec.chat_complete(PROFILE, _req())
    assert first == second and len(live_calls) == 1

    def exploding(profile, payload, timeout_s):
        raise AssertionError("replay must not reach the network")

    rep = ChatClient(mode="replay", store=FixtureStore(path), transport=exploding)
    assert rep.chat_complete(PROFILE, _req()) == first
    with pytest.raises(ReplayMiss):
        rep.chat_complete(PROFILE, _req("unseen"))


def test_replay_requires_store():
    with pytest.raises(ValueError):
        ChatClient(mode="replay")
    with pytest.raises(ValueError):
        ChatClient(mode="banana")


# --- completion parsing ------------------------------------------------------

def test_parse_completion_maps_finish():
    assert _parse_completion(_body("x", "stop")).finish == "stop"
    assert _parse_completion(_body("x", "length")).finish == "length"
    assert _parse_completion(_body("x", "content_filter")).finish == "other"


def test_parse_completion_reads_usage():
    out = _parse_completion(_body("x", pt=11, ct=13))
    assert out.usage == TokenUsage(11, 13)


def test_parse_completion_rejects_malformed():
    with pytest.raises(TransportError):
        _parse_completion({"choices": []})
    with pytest.raises(TransportError):
        _parse_completion({})
