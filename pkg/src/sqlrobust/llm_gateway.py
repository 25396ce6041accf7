"""Provider-agnostic access to completion, embedding, mask-fill, and
sequence-scoring endpoints, with disk caching, retries, and rate limiting.

Wire protocol is OpenAI-compatible JSON for completions and embeddings; mask
filling talks to a separate fill-mask endpoint. Deterministic requests
(temperature 0) are cached on disk, one JSON file per request hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import (
    GatewayError,
    GatewayHTTPError,
    GatewayProtocolError,
    GatewayTimeoutError,
)

DEFAULT_STOP = ("--", "\n\n", ";", "#")
DEFAULT_MAX_TOKENS = 200

PARAPHRASE_PROMPT = "Paraphrase the following question, preserving its exact meaning: "


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    stop: tuple[str, ...] = DEFAULT_STOP
    logprobs: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise GatewayError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None


@dataclass
class GatewayConfig:
    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "code-model"
    api_key_env: str = "HARNESS_API_KEY"
    mask_model_url: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 2
    cache_dir: str | None = None
    rate_limit_rps: float | None = None
    backoff_base_s: float = 0.5

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise GatewayError("timeout must be > 0")
        if self.max_retries < 0:
            raise GatewayError("max retries must be >= 0")


class _TokenBucket:
    """Thread-safe token bucket with burst capacity 1; rate=None means unlimited."""

    def __init__(self, rate: float | None):
        self.rate = rate
        self.capacity = 1.0 if rate else 0.0
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self):
        if not self.rate:
            return
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(
                    self.capacity, self.tokens + (now - self.updated) * self.rate
                )
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(wait)


@dataclass
class GatewayStats:
    requests: int = 0
    cache_hits: int = 0
    retries: int = 0


class Gateway:
    """Shared, thread-safe client for all remote model capabilities."""

    def __init__(self, cfg: GatewayConfig):
        self.cfg = cfg
        self.stats = GatewayStats()
        self._bucket = _TokenBucket(cfg.rate_limit_rps)
        self._stats_lock = threading.Lock()
        self._session = requests.Session()
        if cfg.cache_dir:
            Path(cfg.cache_dir).mkdir(parents=True, exist_ok=True)

    # -- caching -----------------------------------------------------------

    def _cache_path(self, endpoint: str, body: dict) -> Path | None:
        if not self.cfg.cache_dir:
            return None
        key_material = json.dumps(
            {"endpoint": endpoint, "body": body}, sort_keys=True, ensure_ascii=False
        )
        digest = hashlib.sha256(key_material.encode("utf-8")).hexdigest()
        return Path(self.cfg.cache_dir) / f"{digest}.json"

    def _cache_read(self, path: Path | None):
        if path is None or not path.is_file():
            return None
        with self._stats_lock:
            self.stats.cache_hits += 1
        return json.loads(path.read_text(encoding="utf-8"))

    @staticmethod
    def _cache_write(path: Path | None, payload: dict):
        if path is None:
            return
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)

    # -- transport ---------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, url: str, body: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0:
                time.sleep(self.cfg.backoff_base_s * (2 ** (attempt - 1)))
                with self._stats_lock:
                    self.stats.retries += 1
            self._bucket.acquire()
            with self._stats_lock:
                self.stats.requests += 1
            try:
                resp = self._session.post(
                    url, json=body, headers=self._headers(), timeout=self.cfg.timeout_s
                )
            except requests.Timeout:
                last_exc = GatewayTimeoutError(f"timed out after {self.cfg.timeout_s}s: {url}")
                continue
            except requests.RequestException as exc:
                last_exc = GatewayHTTPError(f"transport failure: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = GatewayHTTPError(
                    f"HTTP {resp.status_code} from {url}", status_code=resp.status_code
                )
                continue
            if resp.status_code >= 400:
                raise GatewayHTTPError(
                    f"HTTP {resp.status_code} from {url}: {resp.text[:200]}",
                    status_code=resp.status_code,
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise GatewayProtocolError(f"non-JSON payload from {url}") from exc
        assert last_exc is not None
        raise last_exc

    def _roundtrip(self, endpoint: str, url: str, body: dict, cacheable: bool) -> dict:
        cache_path = self._cache_path(endpoint, body) if cacheable else None
        cached = self._cache_read(cache_path)
        if cached is not None:
            return cached
        payload = self._post(url, body)
        if cacheable:
            self._cache_write(cache_path, payload)
        return payload

    # -- capabilities ------------------------------------------------------

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        """Generate a continuation; temperature-0 requests hit the disk cache."""
        body = {
            "model": self.cfg.model,
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stop": list(req.stop),
        }
        if req.logprobs is not None:
            body["logprobs"] = req.logprobs
        payload = self._roundtrip(
            "completions",
            f"{self.cfg.base_url}/completions",
            body,
            cacheable=req.temperature == 0,
        )
        try:
            choice = payload["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayProtocolError("completion payload missing choices[0].text") from exc
        text = _strip_stop(text, req.stop)
        token_logprobs = None
        if req.logprobs is not None:
            lp = choice.get("logprobs") or {}
            tokens = lp.get("tokens")
            probs = lp.get("token_logprobs")
            if tokens is None or probs is None:
                raise GatewayProtocolError("logprobs requested but missing from payload")
            token_logprobs = tuple(
                (t, float(p)) for t, p in zip(tokens, probs) if p is not None
            )
        return CompletionResponse(text=text, token_logprobs=token_logprobs)

    def embed(self, texts: list[str]) -> list[list[float]]:
        """Embed texts into L2-normalized vectors, order-preserving."""
        if not texts:
            raise GatewayError("embed requires at least one text")
        body = {"model": self.cfg.model, "input": list(texts)}
        payload = self._roundtrip(
            "embeddings", f"{self.cfg.base_url}/embeddings", body, cacheable=True
        )
        try:
            data = sorted(payload["data"], key=lambda d: d["index"])
            vectors = [[float(x) for x in d["embedding"]] for d in data]
        except (KeyError, TypeError) as exc:
            raise GatewayProtocolError("embedding payload malformed") from exc
        if len(vectors) != len(texts):
            raise GatewayProtocolError(
                f"asked for {len(texts)} embeddings, got {len(vectors)}"
            )
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise GatewayProtocolError(f"embedding dimensions differ within batch: {dims}")
        return [_normalize(v) for v in vectors]

    def mask_fill(self, text: str, k: int) -> list[tuple[str, float]]:
        """Top-k fills for the single [MASK] marker, sorted by probability."""
        if text.count("[MASK]") != 1:
            raise GatewayError(
                f"mask_fill needs exactly one [MASK] marker, found {text.count('[MASK]')}"
            )
        if not self.cfg.mask_model_url:
            raise GatewayError("mask_model_url not configured")
        body = {"inputs": text, "top_k": k}
        payload = self._roundtrip("fill-mask", self.cfg.mask_model_url, body, cacheable=True)
        try:
            fills = [(d["token_str"], float(d["score"])) for d in payload]
        except (KeyError, TypeError) as exc:
            raise GatewayProtocolError("fill-mask payload malformed") from exc
        for _, score in fills:
            if not 0 < score <= 1:
                raise GatewayProtocolError(f"fill probability out of (0,1]: {score}")
        fills.sort(key=lambda f: -f[1])
        return fills[:k]

    def sequence_perplexity(self, text: str) -> float:
        """exp(-mean token logprob) of `text` under the scoring model.

        Uses echo scoring on the completions endpoint (max_tokens 0), so the
        provider must return prompt-token logprobs.
        """
        if not text:
            raise GatewayError("cannot score an empty sequence")
        body = {
            "model": self.cfg.model,
            "prompt": text,
            "max_tokens": 0,
            "temperature": 0,
            "echo": True,
            "logprobs": 0,
        }
        payload = self._roundtrip(
            "completions", f"{self.cfg.base_url}/completions", body, cacheable=True
        )
        try:
            lp = payload["choices"][0]["logprobs"]["token_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayProtocolError(
                "scoring endpoint did not return token logprobs"
            ) from exc
        scored = [float(p) for p in lp if p is not None]
        if not scored:
            raise GatewayProtocolError("no scored tokens in payload")
        return math.exp(-sum(scored) / len(scored))


def _strip_stop(text: str, stop: tuple[str, ...]) -> str:
    cut = len(text)
    for s in stop:
        idx = text.find(s)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut]


def _normalize(vec: list[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in vec))
    if norm == 0:
        raise GatewayProtocolError("embedding endpoint returned a zero vector")
    return [x / norm for x in vec]


class LlmParaphraser:
    """Paraphrase client backed by the completion endpoint at temperature 0."""

    def __init__(self, gateway: Gateway, max_tokens: int = DEFAULT_MAX_TOKENS):
        self.gateway = gateway
        self.max_tokens = max_tokens

    def paraphrase(self, text: str) -> str:
        req = CompletionRequest(
            prompt=PARAPHRASE_PROMPT + text + "\n",
            max_tokens=self.max_tokens,
            temperature=0.0,
            stop=("\n",),
        )
        return self.gateway.complete(req).text.strip()
