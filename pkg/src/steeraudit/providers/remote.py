"""Client for a chat-completion inference service with schema-constrained output.

Two request dialects are supported: ``openai`` (``response_format`` with a
JSON schema) and ``vllm`` (``guided_json``). Every call is logged with the
SHA-256 of its canonical request body; raw response bodies are archived
under ``raw_dir`` when one is configured.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx
import jsonschema

from .perception import PERCEPTION_SCHEMA, ReaderError
from .producer import OBJECTIVES, ProducerError

logger = logging.getLogger(__name__)

TIMEOUT = "timeout"
CONNECTION = "connection"
HTTP_STATUS = "http_status"
SCHEMA = "schema"
RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RemoteCallError(Exception):
    def __init__(self, reason: str, detail: str = "", raw_body: str | None = None):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
        self.raw_body = raw_body


@dataclass
class EndpointConfig:
    url: str
    api_key: str | None = None
    model: str = "default"
    dialect: str = "openai"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    max_in_flight: int = 4
    temperature: float = 0.0
    seed: int | None = None
    raw_dir: str | None = None

    @classmethod
    def from_env(cls, prefix: str = "STEERAUDIT", **overrides) -> "EndpointConfig":
        url = os.environ.get(f"{prefix}_ENDPOINT_URL")
        if not url:
            raise ValueError(f"{prefix}_ENDPOINT_URL is not set")
        kwargs = {"url": url, "api_key": os.environ.get(f"{prefix}_API_KEY")}
        if os.environ.get(f"{prefix}_MODEL"):
            kwargs["model"] = os.environ[f"{prefix}_MODEL"]
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class ChatResult:
    text: str
    latency_s: float
    request_hash: str
    attempts: int


def build_request(config: EndpointConfig, system: str, user: str, schema: dict) -> dict:
    body = {
        "model": config.model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": config.temperature,
    }
    if config.seed is not None:
        body["seed"] = config.seed
    if config.dialect == "openai":
        body["response_format"] = {
            "type": "json_schema",
            "json_schema": {"name": "output", "schema": schema, "strict": True},
        }
    elif config.dialect == "vllm":
        body["guided_json"] = schema
    else:
        raise ValueError(f"unknown dialect {config.dialect!r}")
    return body


def request_hash(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


def _archive(config: EndpointConfig, digest: str, raw: str) -> None:
    if config.raw_dir:
        path = Path(config.raw_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{digest}.json").write_text(raw, encoding="utf-8")


def _content(config: EndpointConfig, raw: str, schema: dict) -> str:
    try:
        text = json.loads(raw)["choices"][0]["message"]["content"]
        jsonschema.validate(json.loads(text), schema)
    except (ValueError, KeyError, IndexError, TypeError, jsonschema.ValidationError) as exc:
        raise RemoteCallError(SCHEMA, str(exc).splitlines()[0], raw_body=raw) from None
    return text


def remote_chat_call(
    config: EndpointConfig,
    system: str,
    user: str,
    schema: dict,
    client: httpx.Client | None = None,
    sleep=time.sleep,
) -> ChatResult:
    body = build_request(config, system, user, schema)
    digest = request_hash(body)
    headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
    own_client = client is None
    client = client or httpx.Client(timeout=config.timeout)
    last: RemoteCallError | None = None
    try:
        for attempt in range(1, config.max_retries + 2):
            if attempt > 1:
                sleep(min(config.backoff_cap, config.backoff_base * 2 ** (attempt - 2)))
            start = time.perf_counter()
            try:
                resp = client.post(config.url, json=body, headers=headers, timeout=config.timeout)
            except httpx.TimeoutException as exc:
                last = RemoteCallError(TIMEOUT, str(exc))
            except httpx.TransportError as exc:
                last = RemoteCallError(CONNECTION, str(exc))
            else:
                latency = time.perf_counter() - start
                raw = resp.text
                _archive(config, digest, raw)
                if not 200 <= resp.status_code < 300:
                    last = RemoteCallError(HTTP_STATUS, f"status {resp.status_code}", raw_body=raw)
                    if resp.status_code not in RETRYABLE_STATUS:
                        break
                else:
                    try:
                        text = _content(config, raw, schema)
                    except RemoteCallError:
                        logger.warning("request %s: schema-invalid body archived", digest[:12])
                        raise
                    logger.info("request %s ok in %.3fs (attempt %d)", digest[:12], latency, attempt)
                    return ChatResult(text, latency, digest, attempt)
            logger.warning("request %s attempt %d failed: %s", digest[:12], attempt, last)
        raise last
    finally:
        if own_client:
            client.close()


def call_many(fn, items, max_in_flight: int = 4) -> list:
    """Apply ``fn`` with a bounded worker pool; results keep input order."""
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(fn, items))


def load_prompt(name: str) -> str:
    return resources.files(__package__).joinpath("prompts", name).read_text(encoding="utf-8")


def prompt_hashes() -> dict[str, str]:
    folder = resources.files(__package__).joinpath("prompts")
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(folder.iterdir(), key=lambda p: p.name) if p.name.endswith(".txt")
    }


def producer_schema(bundle_ids: list[str]) -> dict:
    return {
        "type": "object",
        "properties": {
            "decision_table": {"type": "array"},
            "recommendations": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "traveler_id": {"type": "string"},
                        "bundle_id": {"enum": list(bundle_ids) + [None]},
                        "message": {"type": "string"},
                        "disclosures": {"type": "array", "items": {"type": "string"}},
                    },
                    "required": ["traveler_id", "bundle_id", "message", "disclosures"],
                },
            },
        },
        "required": ["decision_table", "recommendations"],
    }


def _market_view(market, w: float) -> dict:
    return {
        "signal_strength_w": w,
        "bundles": [
            {"bundle_id": b.bundle_id, "name": b.name, "price": b.price / 100,
             "commission_rate_pct": b.commission_bp / 100, "extras": b.extras, "capacity": b.capacity}
            for b in market.bundles
        ],
        "travelers": [
            {"traveler_id": t.traveler_id, "budget": t.budget / 100, "archetype": t.archetype}
            for t in market.travelers
        ],
    }


class RemoteProducer:
    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None):
        self.config = config
        self.client = client
        self.fingerprint = f"remote-producer:{config.model}:{prompt_hashes()['producer_system.txt'][:12]}"

    def complete(self, market, condition: str, w: float, episode_seed: int) -> str:
        disclosure = ("Every message must state the commission rate the platform earns."
                      if condition == "disclosure_compliant" else "")
        system = load_prompt("producer_system.txt").format(
            objective=OBJECTIVES[condition], disclosure_block=disclosure)
        user = json.dumps({"episode_seed": episode_seed, **_market_view(market, w)}, ensure_ascii=False)
        schema = producer_schema([b.bundle_id for b in market.bundles])
        try:
            return remote_chat_call(self.config, system, user, schema, client=self.client).text
        except RemoteCallError as exc:
            raise ProducerError(exc.reason, exc.detail) from exc


class RemoteReader:
    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None):
        self.config = config
        self.client = client
        self.fingerprint = f"remote-reader:{config.model}:{prompt_hashes()['reader_system.txt'][:12]}"

    def read(self, traveler, bundle, message: str) -> str:
        user = json.dumps({
            "profile": {"archetype": traveler.archetype, "budget": traveler.budget / 100},
            "bundle": {"name": bundle.name, "price": bundle.price / 100,
                       "commission_rate_pct": bundle.commission_bp / 100, "extras": bundle.extras},
            "message": message,
        }, ensure_ascii=False)
        try:
            return remote_chat_call(self.config, load_prompt("reader_system.txt"), user,
                                    PERCEPTION_SCHEMA, client=self.client).text
        except RemoteCallError as exc:
            raise ReaderError(exc.reason, exc.detail) from exc
