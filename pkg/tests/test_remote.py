import json

import httpx
import pytest

from steeraudit.market import generate_small_market
from steeraudit.providers.msgcap import parse_producer_payload
from steeraudit.providers.perception import PERCEPTION_SCHEMA, parse_perception
from steeraudit.providers.producer import ProducerError
from steeraudit.providers.remote import (
    CONNECTION,
    HTTP_STATUS,
    SCHEMA,
    TIMEOUT,
    EndpointConfig,
    RemoteCallError,
    RemoteProducer,
    RemoteReader,
    build_request,
    call_many,
    producer_schema,
    prompt_hashes,
    remote_chat_call,
    request_hash,
)

GOOD = json.dumps({"perceived_fit_delta": 0.2, "perceived_risk": 0.0, "trust_score": 0.1,
                   "urgency_felt": 0.0, "reasoning": "ok"})


def _body(content: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": content}}]}


def _client(responses, seen=None):
    """Replay canned responses in order; an Exception entry is raised."""
    queue = list(responses)

    def handler(request):
        if seen is not None:
            seen.append(json.loads(request.content))
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        status, payload = item
        return httpx.Response(status, json=payload) if not isinstance(payload, str) else \
            httpx.Response(status, text=payload)

    return httpx.Client(transport=httpx.MockTransport(handler))


def _cfg(**kw):
    return EndpointConfig(url="http://inference.test/v1/chat/completions", api_key="k", backoff_base=0.01, **kw)


def _no_sleep(_):
    pass


def test_dialects():
    o = build_request(_cfg(), "s", "u", PERCEPTION_SCHEMA)
    assert o["response_format"]["json_schema"]["schema"] == PERCEPTION_SCHEMA
    v = build_request(_cfg(dialect="vllm"), "s", "u", PERCEPTION_SCHEMA)
    assert v["guided_json"] == PERCEPTION_SCHEMA and "response_format" not in v
    with pytest.raises(ValueError):
        build_request(_cfg(dialect="grpc"), "s", "u", {})
    assert request_hash(o) == request_hash(json.loads(json.dumps(o)))


def test_success_first_try(tmp_path):
    seen = []
    res = remote_chat_call(_cfg(raw_dir=str(tmp_path)), "s", "u", PERCEPTION_SCHEMA,
                           client=_client([(200, _body(GOOD))], seen), sleep=_no_sleep)
    assert res.text == GOOD and res.attempts == 1
    assert seen[0]["messages"][1]["content"] == "u"
    assert (tmp_path / f"{res.request_hash}.json").exists()


def test_retry_on_timeout_then_success():
    sleeps = []
    res = remote_chat_call(_cfg(), "s", "u", PERCEPTION_SCHEMA,
                           client=_client([httpx.ReadTimeout("slow"), (503, "busy"), (200, _body(GOOD))]),
                           sleep=sleeps.append)
    assert res.attempts == 3
    assert sleeps == [0.01, 0.02]


def test_timeout_exhaustion():
    with pytest.raises(RemoteCallError) as info:
        remote_chat_call(_cfg(max_retries=2), "s", "u", PERCEPTION_SCHEMA,
                         client=_client([httpx.ReadTimeout("slow")] * 3), sleep=_no_sleep)
    assert info.value.reason == TIMEOUT


def test_connection_error():
    with pytest.raises(RemoteCallError) as info:
        remote_chat_call(_cfg(max_retries=0), "s", "u", PERCEPTION_SCHEMA,
                         client=_client([httpx.ConnectError("refused")]), sleep=_no_sleep)
    assert info.value.reason == CONNECTION


def test_non_retryable_status_stops():
    client = _client([(401, "denied"), (200, _body(GOOD))])
    with pytest.raises(RemoteCallError) as info:
        remote_chat_call(_cfg(), "s", "u", PERCEPTION_SCHEMA, client=client, sleep=_no_sleep)
    assert info.value.reason == HTTP_STATUS and info.value.raw_body == "denied"


def test_schema_violation_keeps_raw_body():
    bad = _body(json.dumps({"perceived_fit_delta": "high"}))
    with pytest.raises(RemoteCallError) as info:
        remote_chat_call(_cfg(), "s", "u", PERCEPTION_SCHEMA, client=_client([(200, bad)]), sleep=_no_sleep)
    assert info.value.reason == SCHEMA
    assert json.loads(info.value.raw_body) == bad


def test_reader_and_producer_over_mock():
    m = generate_small_market(4)
    reader = RemoteReader(_cfg(), client=_client([(200, _body(GOOD))]))
    assert parse_perception(reader.read(m.travelers[0], m.bundles[0], "hello")).fit_delta == 0.2
    assert prompt_hashes()["reader_system.txt"][:12] in reader.fingerprint

    payload = {"decision_table": [], "recommendations": [
        {"traveler_id": t.traveler_id, "bundle_id": m.bundles[0].bundle_id, "message": "Go.", "disclosures": []}
        for t in m.travelers]}
    seen = []
    producer = RemoteProducer(_cfg(), client=_client([(200, _body(json.dumps(payload)))], seen))
    recs = parse_producer_payload(producer.complete(m, "commission", 0.5, 0), [t.traveler_id for t in m.travelers])
    assert all(r.success for r in recs)
    assert "{objective}" not in seen[0]["messages"][0]["content"]


def test_producer_schema_rejects_unknown_bundle():
    import jsonschema
    schema = producer_schema(["b1"])
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"decision_table": [], "recommendations": [
            {"traveler_id": "t1", "bundle_id": "b9", "message": "", "disclosures": []}]}, schema)


def test_errors_map_to_provider_errors():
    m = generate_small_market(4)
    producer = RemoteProducer(_cfg(max_retries=0), client=_client([(500, "err")]))
    with pytest.raises(ProducerError):
        producer.complete(m, "commission", 0.5, 0)


def test_from_env(monkeypatch):
    monkeypatch.delenv("STEERAUDIT_ENDPOINT_URL", raising=False)
    with pytest.raises(ValueError):
        EndpointConfig.from_env()
    monkeypatch.setenv("STEERAUDIT_ENDPOINT_URL", "http://x")
    monkeypatch.setenv("STEERAUDIT_MODEL", "m1")
    cfg = EndpointConfig.from_env(timeout=5)
    assert (cfg.url, cfg.model, cfg.timeout) == ("http://x", "m1", 5)


def test_call_many_keeps_order():
    import time
    out = call_many(lambda x: (time.sleep(0.01 * (5 - x)), x)[1], range(5), max_in_flight=4)
    assert out == [0, 1, 2, 3, 4]
