"""Clients for the chat-completion and embedding services the pipeline uses.

Network access is optional everywhere: chat calls go through record/replay
cassettes for deterministic runs, embeddings and token counts have bundled
deterministic fallbacks, and the HTTP paths speak the OpenAI-compatible
completions/embeddings protocol (base URL and key from ``DIALFORGE_API_BASE``
and ``DIALFORGE_API_KEY``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CassetteMissError,
    ProviderError,
    ProviderExhaustedError,
    TransientProviderError,
    ValidationError,
)

logger = logging.getLogger(__name__)

ENV_API_BASE = "DIALFORGE_API_BASE"
ENV_API_KEY = "DIALFORGE_API_KEY"

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"message role {self.role!r} not in {ROLES}")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request; the last message must come from the user."""

    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("messages must be nonempty")
        if self.messages[-1].role != "user":
            raise ValidationError("last message role must be 'user'")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")

    @classmethod
    def user(cls, text: str, system: str | None = None, tag: str = "", **kw) -> "ChatRequest":
        msgs = []
        if system:
            msgs.append(ChatMessage("system", system))
        msgs.append(ChatMessage("user", text))
        return cls(messages=tuple(msgs), tag=tag, **kw)


def canonical_chat_request(model: str, req: ChatRequest) -> dict:
    """Stable document used both for fingerprints and the HTTP payload shape.

    Includes everything that changes the completion, so a cassette can never
    silently serve a stale variant.
    """
    return {
        "kind": "chat",
        "model": model,
        "messages": [{"role": m.role, "text": m.text} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }


def fingerprint(doc: dict) -> str:
    blob = json.dumps(doc, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """Record/replay store for provider responses, one JSON line per entry.

    Modes: ``record`` calls through and appends, ``replay`` never touches the
    network and misses are hard errors, ``passthrough`` neither reads nor
    writes.
    """

    MODES = ("record", "replay", "passthrough")

    def __init__(self, path: str | Path, mode: str = "replay"):
        if mode not in self.MODES:
            raise ValidationError(f"cassette mode {mode!r} not in {self.MODES}")
        self.path = Path(path)
        self.mode = mode
        self.entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self.entries[entry["fingerprint"]] = entry
        elif mode == "replay":
            raise ValidationError(f"cassette file not found for replay: {self.path}")

    def lookup(self, fp: str) -> dict:
        entry = self.entries.get(fp)
        if entry is None:
            raise CassetteMissError(fp)
        return entry

    def record(self, fp: str, request_doc: dict, response: object) -> None:
        entry = {"fingerprint": fp, "request": request_doc, "response": response}
        with self._lock:
            self.entries[fp] = entry
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


class HttpChatTransport:
    """OpenAI-compatible /chat/completions call via httpx."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None, timeout: float = 60.0):
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout

    def __call__(self, doc: dict) -> str:
        import httpx

        if not self.base_url:
            raise ProviderError(
                f"no chat provider configured (set {ENV_API_BASE} or use a cassette)"
            )
        payload = {
            "model": doc["model"],
            "messages": [{"role": m["role"], "content": m["text"]} for m in doc["messages"]],
            "temperature": doc["temperature"],
            "max_tokens": doc["max_tokens"],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.TransportError as exc:
            raise TransientProviderError(str(exc))
        if resp.status_code >= 500:
            raise TransientProviderError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError(f"malformed completion body: {json.dumps(body)[:200]}")


class ChatClient:
    """Chat completions with bounded retries, cassettes, and batch fan-out."""

    def __init__(
        self,
        model: str = "dialforge-default",
        transport: Callable[[dict], str] | None = None,
        cassette: Cassette | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        max_concurrency: int = 4,
    ):
        self.model = model
        self.transport = transport or HttpChatTransport()
        self.cassette = cassette
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_concurrency = max_concurrency

    def chat(self, req: ChatRequest) -> str:
        doc = canonical_chat_request(self.model, req)
        fp = fingerprint(doc)
        if self.cassette is not None and self.cassette.mode == "replay":
            return self.cassette.lookup(fp)["response"]
        text = self._call_with_retries(doc)
        if self.cassette is not None and self.cassette.mode == "record":
            self.cassette.record(fp, doc, text)
        return text

    def chat_many(self, reqs: Sequence[ChatRequest]) -> list[str]:
        """Run requests with at most ``max_concurrency`` in flight.

        Results come back in request order no matter which call finishes
        first.
        """
        if not reqs:
            return []
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            return list(pool.map(self.chat, reqs))

    def chat_many_settled(self, reqs: Sequence[ChatRequest]) -> list[str | Exception]:
        """Like chat_many, but provider failures come back in-place instead of
        aborting the batch; callers decide what a partial batch is worth."""
        if not reqs:
            return []

        def settle(req: ChatRequest):
            try:
                return self.chat(req)
            except ProviderError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            return list(pool.map(settle, reqs))

    def _call_with_retries(self, doc: dict) -> str:
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.transport(doc)
            except TransientProviderError as exc:
                last = exc
                logger.warning("chat attempt %d/%d failed: %s", attempt, self.max_attempts, exc)
                if attempt < self.max_attempts:
                    time.sleep(self.backoff_base * (2 ** (attempt - 1)))
        raise ProviderExhaustedError(self.max_attempts, last or ProviderError("unknown"))


# ---------------------------------------------------------------------------
# Embeddings


@dataclass
class EmbeddingVector:
    values: np.ndarray
    model_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("embedding contains non-finite entries")


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


class HashedNgramEmbedder:
    """Deterministic character n-gram embedder with cosine geometry.

    Each 2..4-gram is hashed (sha1, so stable across runs and platforms) into
    one of ``dim`` buckets; the count vector is L2-normalized.  Unigrams are
    deliberately left out: for same-script corpora they swamp the cosine and
    make every text look alike.  Texts shorter than the smallest n-gram are
    hashed whole.  Good enough for redundancy detection; swap in an HTTP
    embedder for production runs.
    """

    def __init__(self, dim: int = 4096, ngram_sizes: tuple[int, ...] = (2, 3, 4)):
        self.dim = dim
        self.ngram_sizes = ngram_sizes
        self.model_id = f"hash-ngram-v1-d{dim}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.sha1(gram.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValidationError("texts must be nonempty")
        out = []
        for text in texts:
            if not text:
                raise ValidationError("cannot embed an empty text")
            vec = np.zeros(self.dim, dtype=np.float64)
            for size in self.ngram_sizes:
                for i in range(len(text) - size + 1):
                    vec[self._bucket(text[i : i + size])] += 1.0
            if not vec.any():
                vec[self._bucket(text)] = 1.0
            norm = float(np.linalg.norm(vec))
            if norm > 0:
                vec /= norm
            out.append(EmbeddingVector(vec, self.model_id))
        return out


class HttpEmbedder:
    """OpenAI-compatible /embeddings endpoint."""

    def __init__(self, model: str, base_url: str | None = None, api_key: str | None = None, timeout: float = 60.0):
        self.model = model
        self.model_id = model
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        import httpx

        if not texts:
            raise ValidationError("texts must be nonempty")
        if any(not t for t in texts):
            raise ValidationError("cannot embed an empty text")
        if not self.base_url:
            raise ProviderError(f"no embedding provider configured (set {ENV_API_BASE})")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.TransportError as exc:
            raise TransientProviderError(str(exc))
        if resp.status_code >= 400:
            raise ProviderError(f"embedding provider returned {resp.status_code}")
        data = resp.json()["data"]
        vectors = [EmbeddingVector(np.asarray(d["embedding"]), self.model) for d in data]
        if len(vectors) != len(texts):
            raise ProviderError("embedding count does not match input count")
        dims = {v.values.shape[0] for v in vectors}
        if len(dims) > 1:
            raise ProviderError(f"dimension mismatch across batch: {sorted(dims)}")
        return vectors


# ---------------------------------------------------------------------------
# Token counting


_ALNUM_RUN = re.compile(r"[A-Za-z0-9]+")
# ASCII alnum runs count one token per this many characters (subword-ish).
_RUN_CHARS_PER_TOKEN = 4


class ReferenceTokenizer:
    """Greedy longest-match over a bundled vocabulary table.

    Characters outside the table count one token each, except ASCII
    alphanumeric runs which are chunked every four characters.  Deterministic
    by construction; plug a provider-backed tokenizer into the registry for
    exact production counts.
    """

    def __init__(self, tokenizer_id: str, tokens: Sequence[str]):
        self.id = tokenizer_id
        self.vocab = set(tokens)
        self.max_len = max((len(t) for t in self.vocab), default=1)

    def count(self, text: str) -> int:
        n = 0
        i = 0
        length = len(text)
        while i < length:
            matched = 0
            for size in range(min(self.max_len, length - i), 1, -1):
                if text[i : i + size] in self.vocab:
                    matched = size
                    break
            if matched:
                i += matched
                n += 1
                continue
            run = _ALNUM_RUN.match(text, i)
            if run:
                run_len = run.end() - run.start()
                n += math.ceil(run_len / _RUN_CHARS_PER_TOKEN)
                i = run.end()
            else:
                n += 1
                i += 1
        return n


def _load_reference_tokenizer() -> ReferenceTokenizer:
    raw = resources.files("dialforge.data").joinpath("tokenizer_vocab.json").read_text("utf-8")
    table = json.loads(raw)
    return ReferenceTokenizer(table["id"], table["tokens"])


_TOKENIZERS: dict[str, ReferenceTokenizer] = {}


def register_tokenizer(tokenizer) -> None:
    _TOKENIZERS[tokenizer.id] = tokenizer


def get_tokenizer(tokenizer_id: str):
    if not _TOKENIZERS:
        register_tokenizer(_load_reference_tokenizer())
    if tokenizer_id not in _TOKENIZERS:
        raise ValidationError(
            f"unknown tokenizer {tokenizer_id!r}; registered: {sorted(_TOKENIZERS)}"
        )
    return _TOKENIZERS[tokenizer_id]


DEFAULT_TOKENIZER_ID = "ref-v1"


def token_count(text: str, tokenizer_id: str = DEFAULT_TOKENIZER_ID) -> int:
    """Token length of ``text`` under the named tokenizer; 0 iff empty."""
    return get_tokenizer(tokenizer_id).count(text)
