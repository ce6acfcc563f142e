import json

import pytest

from steeraudit.gates import classify_refusal, detect_id_leak
from steeraudit.market import generate_small_market
from steeraudit.providers import (
    Msgcap,
    ProducerConfig,
    ProducerError,
    ReaderConfig,
    ReaderError,
    SyntheticProducer,
    SyntheticReader,
    extract_perception,
    factual_template,
    parse_perception,
    parse_producer_payload,
    produce_msgcap,
)
from steeraudit.providers.perception import MALFORMED, OUT_OF_RANGE, SCHEMA, TRANSPORT, ParseFailure
from steeraudit.providers.template import format_price, format_rate


@pytest.fixture(scope="module")
def market():
    return generate_small_market(11, "loose")


def test_format_helpers():
    assert format_price(123_456) == "1234.56"
    assert format_price(5) == "0.05"
    assert format_rate(0.125) == "12.5%"
    assert format_rate(0.0005) == "0.1%"


def test_template_shape(market):
    t = market.travelers[0]
    for b in market.bundles:
        text = factual_template(t, b)
        assert text.startswith(f"Recommend {b.name}.")
        assert b.bundle_id not in text.split()
        assert not detect_id_leak(text)
        assert not classify_refusal(text)
        assert text.endswith("Extras: none.") == (not b.extras)


def test_template_does_not_depend_on_traveler(market):
    b = market.bundles[0]
    assert len({factual_template(t, b) for t in market.travelers}) == 1


def test_null_producer_sends_template(market):
    cap = produce_msgcap(market, "commission", 0.5, 0, SyntheticProducer())
    for r in cap.records:
        assert r.success
        assert r.message == factual_template(market.traveler(r.traveler_id), market.bundle(r.bundle_id))


def test_template_collapse(market):
    cap = produce_msgcap(market, "commission", 0.5, 0, SyntheticProducer(ProducerConfig(template_collapse=True)))
    messages = {r.message for r in cap.records}
    assert len(messages) == 1
    (msg,) = messages
    assert len(msg.split()) == 6 and detect_id_leak(msg)


def test_producer_is_deterministic(market):
    p = SyntheticProducer(ProducerConfig(steering_strength=0.6, refusal_rate=0.2, seed=3))
    assert p.complete(market, "commission", 0.5, 1) == p.complete(market, "commission", 0.5, 1)
    assert p.complete(market, "commission", 0.5, 1) != p.complete(market, "commission", 0.5, 2)


def test_refusals_are_classified(market):
    cap = produce_msgcap(market, "commission", 0.5, 0, SyntheticProducer(ProducerConfig(refusal_rate=1.0)))
    assert all(not r.success and classify_refusal(r.message) for r in cap.records)


def test_disclosure_condition(market):
    cap = produce_msgcap(market, "disclosure_compliant", 0.5, 0, SyntheticProducer())
    assert all(r.disclosures for r in cap.records)


def test_unknown_condition(market):
    with pytest.raises(ValueError):
        produce_msgcap(market, "upsell", 0.5, 0, SyntheticProducer())


def test_transport_failure_is_recorded(market):
    class Broken:
        fingerprint = "broken"

        def complete(self, *a):
            raise ProducerError("timeout", "no answer")

    cap = produce_msgcap(market, "commission", 0.5, 0, Broken())
    assert len(cap.records) == len(market.travelers)
    assert all(not r.raw_payload_valid for r in cap.records)


def test_payload_parsing():
    ids = ["t1", "t2", "t3"]
    text = json.dumps({"recommendations": [
        {"traveler_id": "t1", "bundle_id": "b2", "message": "hi", "disclosures": []},
        {"traveler_id": "t2", "bundle_id": None, "message": "no", "disclosures": []},
    ]})
    recs = parse_producer_payload(text, ids)
    assert [r.success for r in recs] == [True, False, False]
    assert [r.raw_payload_valid for r in recs] == [True, True, False]
    assert all(not r.raw_payload_valid for r in parse_producer_payload("{oops", ids))
    assert all(not r.raw_payload_valid for r in parse_producer_payload(None, ids))


def test_msgcap_round_trip(tmp_path, market):
    cap = produce_msgcap(market, "commission", 0.25, 2, SyntheticProducer(ProducerConfig(steering_strength=0.5)))
    path = cap.save(tmp_path / "cap.jsonl")
    assert Msgcap.load(path) == cap
    with pytest.raises(ValueError):
        Msgcap.from_jsonl('{"traveler_id": "t1"}\n')


def test_parse_perception_outcomes():
    ok = parse_perception(json.dumps({"perceived_fit_delta": 0.1, "perceived_risk": -0.2, "trust_score": 0.3,
                                      "urgency_felt": 0.0, "reasoning": "fine"}))
    assert ok.components() == (0.1, 0.3, -0.2, 0.0)
    assert parse_perception("{not json").reason == MALFORMED
    assert parse_perception("[]").reason == MALFORMED
    assert parse_perception('{"perceived_fit_delta": 0.1}').reason == SCHEMA
    bad = parse_perception(json.dumps({"perceived_fit_delta": 1.5, "perceived_risk": 0, "trust_score": 0,
                                       "urgency_felt": 0}))
    assert bad.reason == OUT_OF_RANGE
    assert not ParseFailure(SCHEMA)


def test_reader_failures(market):
    t, b = market.travelers[0], market.bundles[0]

    class Down:
        def read(self, *a):
            raise ReaderError("timeout")

    assert extract_perception(t, b, "x", Down()).reason == TRANSPORT
    r = SyntheticReader(ReaderConfig(failure_rate=1.0))
    assert extract_perception(t, b, "x", r).reason == MALFORMED
    r = SyntheticReader(ReaderConfig(out_of_range_rate=1.0))
    assert extract_perception(t, b, "x", r).reason == OUT_OF_RANGE


def test_reader_responds_to_cues(market):
    t, b = market.travelers[0], market.bundles[0]
    producer = SyntheticProducer(ProducerConfig(steering_strength=1.0))
    msg = producer._message(t, b, "commission", __import__("random").Random(0))
    r = SyntheticReader()
    steered = extract_perception(t, b, msg, r)
    plain = extract_perception(t, b, factual_template(t, b), r)
    assert steered.fit_delta > plain.fit_delta
    assert extract_perception(t, b, msg, r) == steered
