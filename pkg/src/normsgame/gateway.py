"""Chat-completion and embedding client with deterministic record/replay.

Four modes:

    LIVE    one HTTPS round trip per call, bounded retry with backoff
    RECORD  LIVE, plus persist (request hash -> response) to a fixture store
    REPLAY  serve persisted responses; never touches the network
    STUB    canned completions and hash-derived unit-vector embeddings;
            never touches the network

Fixture keys are sha256 over the canonical JSON of the request, so they
are stable across runs and platforms.  The API key is read from an
environment variable only; it is never written to config files, fixtures,
or logs.  Wall-clock facts (latency, token usage) go to the ordinary
logging stream, never into run logs or fixtures.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

from .errors import FixtureMissingError, GatewayError, TransportError
from .runlog import canonical_json

logger = logging.getLogger(__name__)

DEFAULT_CHAT_URL = "https://api.openai.com/v1/chat/completions"
DEFAULT_EMBED_URL = "https://api.openai.com/v1/embeddings"
DEFAULT_CHAT_MODEL = "gpt-4-0125-preview"
DEFAULT_EMBED_MODEL = "text-embedding-3-small"
DEFAULT_API_KEY_ENV = "NORMSGAME_API_KEY"

RETRY_ATTEMPTS = 3
BACKOFF_SECONDS = (1.0, 4.0)  # between attempt 1->2 and 2->3


@dataclass(frozen=True)
class ModelRequest:
    """One chat-completion request: model id, temperature, (role, content) pairs."""

    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] != "system":
            raise ValueError("first message role must be 'system'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
        }


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length embedding tagged with the model that produced it."""

    values: tuple[float, ...]
    model: str

    def __len__(self) -> int:
        return len(self.values)


class GatewayMode(Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"
    STUB = "stub"


def request_digest(endpoint: str, payload: dict) -> str:
    """Stable fixture key: sha256 of the canonicalized request."""
    body = canonical_json({"endpoint": endpoint, "request": payload})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


class FixtureStore:
    """Directory of recorded responses, one JSON file per request hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def save(self, digest: str, record: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self._path(digest).write_text(canonical_json(record) + "\n", encoding="utf-8")

    def load(self, digest: str) -> dict:
        path = self._path(digest)
        if not path.exists():
            raise FixtureMissingError(digest)
        return json.loads(path.read_text(encoding="utf-8"))

    def has(self, digest: str) -> bool:
        return self._path(digest).exists()


def _requests_transport(
    url: str, headers: dict, body: dict, timeout: float
) -> tuple[int, dict]:
    import requests

    try:
        response = requests.post(url, headers=headers, json=body, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    try:
        payload = response.json()
    except ValueError:
        payload = {}
    return response.status_code, payload


def stub_embedding(text: str, dim: int) -> EmbeddingVector:
    """Deterministic unit vector derived from the text's sha256.

    Offline stand-in for a real embedding service: identical texts map to
    identical vectors, distinct texts to (almost surely) distinct ones.
    """
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = random.Random(seed)
    raw = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    norm = math.sqrt(sum(x * x for x in raw))
    if norm == 0.0:  # unreachable in practice; keep the contract total
        raw = [1.0] + [0.0] * (dim - 1)
        norm = 1.0
    return EmbeddingVector(tuple(x / norm for x in raw), model="stub")


StubCompleter = Union[str, Callable[[ModelRequest], str]]


@dataclass
class Gateway:
    """Client facade over the chat and embedding endpoints."""

    mode: GatewayMode
    chat_url: str = DEFAULT_CHAT_URL
    embed_url: str = DEFAULT_EMBED_URL
    chat_model: str = DEFAULT_CHAT_MODEL
    embed_model: str = DEFAULT_EMBED_MODEL
    temperature: float = 0.0
    fixture_dir: Optional[str] = None
    stub_completion: StubCompleter = ""
    stub_embed_dim: int = 64
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    transport: Optional[Callable[[str, dict, dict, float], tuple[int, dict]]] = None
    sleep: Callable[[float], None] = time.sleep
    transport_calls: int = field(default=0, init=False)
    _store: Optional[FixtureStore] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.mode in (GatewayMode.RECORD, GatewayMode.REPLAY):
            if not self.fixture_dir:
                raise GatewayError(f"{self.mode.value} mode requires a fixture directory")
            self._store = FixtureStore(self.fixture_dir)

    # -- chat ---------------------------------------------------------------

    def complete(self, request: ModelRequest) -> str:
        """Return the assistant text for one request, per the configured mode."""
        if self.mode is GatewayMode.STUB:
            if callable(self.stub_completion):
                return self.stub_completion(request)
            return self.stub_completion
        digest = request_digest("chat", request.to_payload())
        if self.mode is GatewayMode.REPLAY:
            return self._store.load(digest)["response"]
        text = self._chat_live(request)
        if self.mode is GatewayMode.RECORD:
            self._store.save(
                digest,
                {"endpoint": "chat", "request": request.to_payload(), "response": text},
            )
        return text

    def _chat_live(self, request: ModelRequest) -> str:
        body = self._call_with_retry(self.chat_url, request.to_payload())
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {body!r:.200}") from exc

    # -- embeddings -----------------------------------------------------------

    def embed(self, text: str) -> EmbeddingVector:
        """Embed one text, per the configured mode."""
        if self.mode is GatewayMode.STUB:
            return stub_embedding(text, self.stub_embed_dim)
        payload = {"model": self.embed_model, "input": text}
        digest = request_digest("embedding", payload)
        if self.mode is GatewayMode.REPLAY:
            record = self._store.load(digest)
            return EmbeddingVector(tuple(record["response"]), model=record["model"])
        vector = self._embed_live(payload)
        if self.mode is GatewayMode.RECORD:
            self._store.save(
                digest,
                {
                    "endpoint": "embedding",
                    "request": payload,
                    "response": list(vector.values),
                    "model": vector.model,
                },
            )
        return vector

    def _embed_live(self, payload: dict) -> EmbeddingVector:
        body = self._call_with_retry(self.embed_url, payload)
        try:
            values = tuple(float(x) for x in body["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed embedding response: {body!r:.200}") from exc
        return EmbeddingVector(values, model=payload["model"])

    # -- shared transport -----------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env) or os.environ.get("OPENAI_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        elif self.transport is None:
            # With the real HTTP transport a key is mandatory; with an
            # injected transport (tests, proxies) it is the caller's business.
            raise GatewayError(
                f"no API key: set the {self.api_key_env} environment variable"
            )
        return headers

    def _call_with_retry(self, url: str, body: dict) -> dict:
        transport = self.transport or _requests_transport
        headers = self._headers()
        last_error: Optional[str] = None
        for attempt in range(1, RETRY_ATTEMPTS + 1):
            started = time.monotonic()
            try:
                self.transport_calls += 1
                status, payload = transport(url, headers, body, self.timeout)
            except TransportError as exc:
                last_error = str(exc)
                logger.warning("transport error on attempt %d: %s", attempt, exc)
            else:
                elapsed = time.monotonic() - started
                usage = payload.get("usage") if isinstance(payload, dict) else None
                logger.info(
                    "call %s status=%d latency=%.3fs usage=%s",
                    url,
                    status,
                    elapsed,
                    usage,
                )
                if status < 400:
                    return payload
                if status < 500:
                    raise GatewayError(f"request rejected with HTTP {status}: {payload}")
                last_error = f"HTTP {status}"
                logger.warning("server error on attempt %d: HTTP %d", attempt, status)
            if attempt < RETRY_ATTEMPTS:
                delay = BACKOFF_SECONDS[attempt - 1]
                logger.info("backing off %.1fs before retry %d", delay, attempt + 1)
                self.sleep(delay)
        raise TransportError(f"retries exhausted: {last_error}")
