"""Chat-model clients: protocol, retry policy, response cache, bounded concurrency.

Every model call in the pipeline goes through `complete_with_policy`, so
retries and caching behave identically for merging, teaching, MCQ runs,
judging, and forced-choice collection. API keys come from environment
variables only; they never appear in configs or run manifests.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, TypeVar

import requests

from .corpus import ImageRef


class ClientError(RuntimeError):
    """Base class for chat/embedding client failures."""


class TransportError(ClientError):
    """Network or server-side failure; retryable."""


class CapabilityError(ClientError):
    """The client cannot take this turn (e.g. images sent to a text-only client)."""


@dataclass(frozen=True)
class Turn:
    """One user turn. `text` may contain <img_k> slots; `images` binds them in order."""

    text: str
    images: tuple[ImageRef, ...] = ()


class ChatClient(Protocol):
    name: str
    #: max images per turn; 0 means text-only, None means unlimited
    max_images: Optional[int]

    def complete(self, system: Optional[str], turns: Sequence[Turn]) -> str: ...


def check_capability(client: ChatClient, turns: Sequence[Turn]) -> None:
    limit = client.max_images
    if limit is None:
        return
    for turn in turns:
        if len(turn.images) > limit:
            raise CapabilityError(
                f"client {client.name!r} accepts at most {limit} image(s) per turn, "
                f"got {len(turn.images)}"
            )


class EchoClient:
    """Deterministic offline client: replies with a short digest-stamped string.

    Useful for dry pipelines and synthetic end-to-end runs where only the
    plumbing (counts, formats, caches) is under test.
    """

    def __init__(self, name: str = "echo", max_images: Optional[int] = None) -> None:
        self.name = name
        self.max_images = max_images
        self.calls = 0

    def complete(self, system: Optional[str], turns: Sequence[Turn]) -> str:
        check_capability(self, turns)
        self.calls += 1
        digest = prompt_digest(system, turns)[:12]
        return f"stub comparison {digest}"


class HTTPChatClient:
    """Chat-completions-style HTTP client.

    Images are transmitted as image_url content parts built from each
    ImageRef's uri, in slot order.
    """

    def __init__(
        self,
        name: str,
        endpoint: str,
        model: str,
        api_key_env: str = "VQCMP_CHAT_API_KEY",
        max_images: Optional[int] = None,
        timeout: float = 120.0,
    ) -> None:
        self.name = name
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_images = max_images
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, system: Optional[str], turns: Sequence[Turn]) -> str:
        check_capability(self, turns)
        messages: list[dict] = []
        if system:
            messages.append({"role": "system", "content": system})
        for turn in turns:
            if turn.images:
                content: list[dict] = [{"type": "text", "text": turn.text}]
                for ref in turn.images:
                    if not ref.uri:
                        raise CapabilityError(f"image {ref.id!r} has no uri to transmit")
                    content.append({"type": "image_url", "image_url": {"url": ref.uri}})
                messages.append({"role": "user", "content": content})
            else:
                messages.append({"role": "user", "content": turn.text})
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json={"model": self.model, "messages": messages},
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"{self.name}: malformed completion payload") from exc


T = TypeVar("T")

#: (attempts, base delay); delay doubles per retry
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5


def call_with_retry(
    fn: Callable[[], T],
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run `fn` with exponential backoff on TransportError; other errors pass through."""
    last: Optional[Exception] = None
    for attempt in range(attempts):
        try:
            return fn()
        except TransportError as exc:
            last = exc
            if attempt + 1 < attempts:
                sleep(base_delay * (2**attempt))
    assert last is not None
    raise last


def prompt_digest(system: Optional[str], turns: Sequence[Turn]) -> str:
    payload = json.dumps(
        {
            "system": system,
            "turns": [
                {"text": t.text, "images": [ref.id for ref in t.images]} for t in turns
            ],
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Response store keyed by (client name, prompt digest).

    Backed by a JSON file when a path is given; writes are serialized so
    concurrent batch workers can share one cache.
    """

    def __init__(self, path: Optional[str | Path] = None) -> None:
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._data: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def _key(client_name: str, digest: str) -> str:
        return f"{client_name}:{digest}"

    def get(self, client_name: str, digest: str) -> Optional[str]:
        with self._lock:
            return self._data.get(self._key(client_name, digest))

    def put(self, client_name: str, digest: str, response: str) -> None:
        with self._lock:
            self._data[self._key(client_name, digest)] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(self.path.suffix + ".tmp")
                tmp.write_text(
                    json.dumps(self._data, ensure_ascii=False, indent=0), encoding="utf-8"
                )
                tmp.replace(self.path)

    def __len__(self) -> int:
        return len(self._data)


def complete_with_policy(
    client: ChatClient,
    system: Optional[str],
    turns: Sequence[Turn],
    cache: Optional[ResponseCache] = None,
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Cached, retried completion; the single choke point for model calls."""
    digest = prompt_digest(system, turns)
    if cache is not None:
        hit = cache.get(client.name, digest)
        if hit is not None:
            return hit
    text = call_with_retry(
        lambda: client.complete(system, turns),
        attempts=attempts,
        base_delay=base_delay,
        sleep=sleep,
    )
    if cache is not None:
        cache.put(client.name, digest, text)
    return text


DEFAULT_MAX_IN_FLIGHT = 8


def bounded_map(
    fn: Callable[[T], object],
    items: Sequence[T],
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> list:
    """Apply `fn` with a bounded worker pool; results come back in input order.

    `fn` must do its own failure capture (return a sentinel) if the batch
    should survive individual errors.
    """
    if not items:
        return []
    if max_in_flight <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, items))
