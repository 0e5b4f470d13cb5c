"""Gateway modes, retry policy, fixtures, and the no-network guarantees."""

from __future__ import annotations

import hashlib
import math

import pytest

from normsgame.errors import FixtureMissingError, GatewayError, TransportError
from normsgame.gateway import (
    EmbeddingVector,
    FixtureStore,
    Gateway,
    GatewayMode,
    ModelRequest,
    request_digest,
    stub_embedding,
)


def chat_request(text="hello"):
    return ModelRequest(
        model="test-model",
        messages=(("system", "sys"), ("user", text)),
        temperature=0.0,
    )


def chat_body(content="ok"):
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 1},
    }


class FakeTransport:
    """Scripted (status, body) responses; records every call."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def __call__(self, url, headers, body, timeout):
        self.calls.append((url, body))
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def test_request_validation():
    with pytest.raises(ValueError):
        ModelRequest(model="m", messages=())
    with pytest.raises(ValueError):
        ModelRequest(model="m", messages=(("user", "hi"),))
    with pytest.raises(ValueError):
        ModelRequest(model="m", messages=(("system", "s"),), temperature=-0.1)


def test_request_digest_is_frozen_canonical_sha256():
    # Independently spell out the canonical serialization; guards the
    # fixture-key format against accidental drift.
    payload = {"model": "m", "temperature": 0.0, "messages": [{"role": "system", "content": "s"}]}
    expected_body = (
        '{"endpoint":"chat","request":{"messages":[{"content":"s","role":"system"}],'
        '"model":"m","temperature":0.0}}'
    )
    expected = hashlib.sha256(expected_body.encode()).hexdigest()
    assert request_digest("chat", payload) == expected


# -- stub mode -----------------------------------------------------------------


def test_stub_completion_str_and_callable():
    assert Gateway(mode=GatewayMode.STUB, stub_completion="hi").complete(chat_request()) == "hi"
    gateway = Gateway(
        mode=GatewayMode.STUB, stub_completion=lambda req: req.messages[-1][1].upper()
    )
    assert gateway.complete(chat_request("echo")) == "ECHO"


def test_stub_embedding_deterministic_unit_norm():
    a = stub_embedding("Cautious pragmatist", 64)
    b = stub_embedding("Cautious pragmatist", 64)
    c = stub_embedding("Fierce enforcer", 64)
    assert a == b
    assert a.values != c.values
    assert abs(math.sqrt(sum(x * x for x in a.values)) - 1.0) <= 1e-9
    assert len(a) == 64


def test_stub_and_replay_touch_no_transport(tmp_path):
    transport = FakeTransport([])
    stub = Gateway(mode=GatewayMode.STUB, stub_completion="x", transport=transport)
    stub.complete(chat_request())
    stub.embed("text")
    store = FixtureStore(tmp_path)
    digest = request_digest("chat", chat_request().to_payload())
    store.save(digest, {"endpoint": "chat", "request": {}, "response": "stored"})
    replay = Gateway(
        mode=GatewayMode.REPLAY, fixture_dir=str(tmp_path), transport=transport
    )
    assert replay.complete(chat_request()) == "stored"
    assert stub.transport_calls == 0
    assert replay.transport_calls == 0
    assert transport.calls == []


# -- record / replay ---------------------------------------------------------------


def test_record_then_replay_byte_identical(tmp_path):
    transport = FakeTransport([(200, chat_body("recorded reply"))])
    recorder = Gateway(
        mode=GatewayMode.RECORD, fixture_dir=str(tmp_path), transport=transport, sleep=lambda s: None
    )
    first = recorder.complete(chat_request("q"))
    replayer = Gateway(mode=GatewayMode.REPLAY, fixture_dir=str(tmp_path))
    second = replayer.complete(chat_request("q"))
    assert first == second == "recorded reply"


def test_record_then_replay_embedding(tmp_path):
    transport = FakeTransport([(200, {"data": [{"embedding": [0.1, 0.2, 0.3]}]})])
    recorder = Gateway(
        mode=GatewayMode.RECORD, fixture_dir=str(tmp_path), transport=transport
    )
    vec = recorder.embed("persona text")
    replayed = Gateway(mode=GatewayMode.REPLAY, fixture_dir=str(tmp_path)).embed("persona text")
    assert replayed == vec
    assert isinstance(replayed, EmbeddingVector)


def test_replay_miss_names_the_hash(tmp_path):
    gateway = Gateway(mode=GatewayMode.REPLAY, fixture_dir=str(tmp_path))
    digest = request_digest("chat", chat_request("missing").to_payload())
    with pytest.raises(FixtureMissingError) as err:
        gateway.complete(chat_request("missing"))
    assert digest in str(err.value)


def test_replay_requires_fixture_dir():
    with pytest.raises(GatewayError):
        Gateway(mode=GatewayMode.REPLAY)


# -- retry policy ------------------------------------------------------------------


def test_two_server_errors_then_success(tmp_path):
    sleeps = []
    transport = FakeTransport([(500, {}), (502, {}), (200, chat_body("fine"))])
    gateway = Gateway(
        mode=GatewayMode.LIVE, transport=transport, sleep=sleeps.append
    )
    assert gateway.complete(chat_request()) == "fine"
    assert len(transport.calls) == 3
    assert sleeps == [1.0, 4.0]


def test_transport_errors_then_success():
    sleeps = []
    transport = FakeTransport([TransportError("boom"), (200, chat_body("ok"))])
    gateway = Gateway(mode=GatewayMode.LIVE, transport=transport, sleep=sleeps.append)
    assert gateway.complete(chat_request()) == "ok"
    assert sleeps == [1.0]


def test_retries_exhausted_raises_transport_error():
    sleeps = []
    transport = FakeTransport([(500, {}), (500, {}), (503, {})])
    gateway = Gateway(mode=GatewayMode.LIVE, transport=transport, sleep=sleeps.append)
    with pytest.raises(TransportError):
        gateway.complete(chat_request())
    assert sleeps == [1.0, 4.0]
    assert len(transport.calls) == 3


def test_client_errors_fail_fast():
    transport = FakeTransport([(401, {"error": "bad key"})])
    gateway = Gateway(mode=GatewayMode.LIVE, transport=transport, sleep=lambda s: None)
    with pytest.raises(GatewayError):
        gateway.complete(chat_request())
    assert len(transport.calls) == 1


def test_live_without_key_names_env_var(monkeypatch):
    monkeypatch.delenv("NORMSGAME_API_KEY", raising=False)
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    gateway = Gateway(mode=GatewayMode.LIVE)  # default HTTP transport
    with pytest.raises(GatewayError) as err:
        gateway.complete(chat_request())
    assert "NORMSGAME_API_KEY" in str(err.value)


def test_live_call_logs_latency_and_usage(caplog):
    import logging

    transport = FakeTransport([(200, chat_body("x"))])
    gateway = Gateway(mode=GatewayMode.LIVE, transport=transport)
    with caplog.at_level(logging.INFO, logger="normsgame.gateway"):
        gateway.complete(chat_request())
    joined = " ".join(caplog.messages)
    assert "latency" in joined and "usage" in joined
