"""Chat and embedding backends: remote HTTP clients and deterministic offline mocks.

Wire format (chat)::

    POST {url}  {"model": ..., "messages": [{"role": ..., "content": ...}, ...]}
    -> {"choices": [{"message": {"content": ...}}, ...]}

Wire format (embedding)::

    POST {url}  {"model": ..., "input": ...}
    -> {"data": [{"embedding": [...]}, ...]}
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable

import httpx
import numpy as np

from .prompts import DialogueMessage

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    pass


class HTTPStatusError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")
        self.status = status


class RateLimitError(HTTPStatusError):
    pass


class ResponseFormatError(BackendError):
    pass


@dataclass
class EndpointConfig:
    url: str
    model: str
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 4
    backoff_base: float = 0.5
    backoff_max: float = 8.0

    def api_key(self) -> str | None:
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.api_key_env} is not set")
        return key


class _HTTPBackend:
    def __init__(self, config: EndpointConfig, sleep: Callable[[float], None] = time.sleep,
                 client: httpx.Client | None = None):
        self.config = config
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=config.timeout)
        self.calls = 0

    def _post(self, body: dict) -> dict:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        key = cfg.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last: BackendError | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = min(cfg.backoff_base * 2 ** (attempt - 1), cfg.backoff_max)
                log.warning("retrying %s in %.2fs after %s", cfg.url, delay, last)
                self._sleep(delay)
            self.calls += 1
            try:
                resp = self._client.post(cfg.url, json=body, headers=headers)
            except httpx.HTTPError as e:
                last = TransportError(f"request to {cfg.url} failed: {e}")
                continue
            if resp.status_code == 429:
                last = RateLimitError(429, resp.text)
                continue
            if resp.status_code >= 500:
                last = HTTPStatusError(resp.status_code, resp.text)
                continue
            if not 200 <= resp.status_code < 300:
                raise HTTPStatusError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as e:
                raise ResponseFormatError(f"response from {cfg.url} is not JSON") from e
        assert last is not None
        raise last


class RemoteChat(_HTTPBackend):
    def __call__(self, messages: list[DialogueMessage]) -> str:
        payload = self._post({"model": self.config.model, "messages": [m.to_json() for m in messages]})
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ResponseFormatError(f"chat response lacks choices[0].message.content: {payload!r:.200}") from e

    @property
    def backend_id(self) -> str:
        return f"remote:{self.config.model}"


class RemoteEncoder(_HTTPBackend):
    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        payload = self._post({"model": self.config.model, "input": text})
        try:
            vec = payload["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as e:
            raise ResponseFormatError(f"embedding response lacks data[0].embedding: {payload!r:.200}") from e
        return np.asarray(vec, dtype=np.float32)

    @property
    def encoder_id(self) -> str:
        return f"remote:{self.config.model}"


# ------------------------------------------------------------------ mocks

def _digest(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


_RP_QUERY = re.compile(r"The subject is a (.+), and the object is a (.+)\.$")
_RJ_QUERY = re.compile(r"The subject is a (.+), the object is a (.+), and the relation is (.+)\.$")


class MockChat:
    """Deterministic stand-in for a chat model.

    Output depends only on the messages (and ``seed``). Proposer answers list
    one to three relations from the dialogue's relation list, or the relations
    in ``knowledge["sub#obj"]`` when that entry is non-empty; judger answers
    say "likely" iff the relation is in ``knowledge`` (a seeded coin without
    it).
    """

    def __init__(self, seed: int = 0, knowledge: dict[str, list[str]] | None = None):
        self.seed = seed
        self.knowledge = knowledge
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def backend_id(self) -> str:
        return f"mock-chat/s{self.seed}"

    def __call__(self, messages: list[DialogueMessage]) -> str:
        with self._lock:
            self.calls += 1
        blob = json.dumps([m.to_json() for m in messages], separators=(",", ":"))
        rng = np.random.default_rng(_digest(str(self.seed), blob))
        last = messages[-1].content
        if m := _RJ_QUERY.match(last):
            return self._judge(rng, *m.groups())
        if m := _RP_QUERY.match(last):
            relations = []
            for msg in messages:
                if msg.role == "user" and msg.content.startswith("They are "):
                    relations = re.findall(r"'([^']+)'", msg.content)
            return self._propose(rng, m.group(1), m.group(2), relations)
        return "I am not sure what you are asking."

    def _propose(self, rng, subject: str, object_: str, relations: list[str]) -> str:
        if not relations:
            raise BackendError("proposer dialogue carries no relation list")
        chosen = list((self.knowledge or {}).get(f"{subject}#{object_}", []))
        chosen = [r for r in chosen if r in relations]
        if not chosen:
            n = int(rng.integers(1, min(3, len(relations)) + 1))
            chosen = [relations[i] for i in sorted(rng.choice(len(relations), size=n, replace=False))]
        items = " ".join(
            f"{n}. {r[0].upper() + r[1:]}: The {subject} could be {r} the {object_}."
            for n, r in enumerate(chosen, 1))
        return (f"Based on the given subject ({subject}) and object ({object_}), here are some possible "
                f"relations between them: {items} These are just a few possible relations between a "
                f"{subject} and a {object_}.")

    def _judge(self, rng, subject: str, object_: str, relation: str) -> str:
        if self.knowledge is not None:
            likely = relation in self.knowledge.get(f"{subject}#{object_}", [])
        else:
            likely = bool(rng.integers(0, 2))
        if likely:
            return (f"Yes, the relation {relation} is likely to exist between {subject} and {object_}. "
                    f"This is because it is common for a {subject} to be {relation} a {object_}.")
        return (f"No, the relation {relation} is not likely to exist between {subject} and {object_}. "
                f"This is because it is not common for a {subject} to be {relation} a {object_}.")


_TOKEN = re.compile(r"[a-z0-9]+")


class MockEncoder:
    """Bag of hashed tokens projected onto a fixed Gaussian basis, L2-normalised."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("encoder dimension must be positive")
        self.dim = dim
        self.seed = seed
        self.calls = 0
        self._basis: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def encoder_id(self) -> str:
        return f"mock-hash-bag/d{self.dim}/s{self.seed}"

    def _vector(self, token: str) -> np.ndarray:
        vec = self._basis.get(token)
        if vec is None:
            vec = np.random.default_rng(_digest(str(self.seed), token)).normal(size=self.dim)
            self._basis[token] = vec
        return vec

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        with self._lock:
            self.calls += 1
            tokens = _TOKEN.findall(text.lower())
            acc = np.zeros(self.dim)
            for tok in tokens:
                acc += self._vector(tok)
        norm = np.linalg.norm(acc)
        if norm == 0:
            raise ValueError(f"text {text[:40]!r} contains no encodable tokens")
        return (acc / norm).astype(np.float32)


def llm_chat(messages: list[DialogueMessage], backend) -> str:
    return backend(messages)


def encode_description(text: str, encoder) -> np.ndarray:
    return encoder.encode(text)
