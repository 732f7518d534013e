import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynrisk.domain import (
    CHARGEBACK,
    FEEDBACK_KINDS,
    FRAUD,
    GOOD_SO_FAR,
    LEGITIMATE,
    MANUAL_REVIEW_REJECT,
    SYSTEM_REJECT,
    EntityDescriptor,
    FeedbackEvent,
    FeedbackPolicy,
    Transaction,
    extract_entity_value,
    read_feedback,
    read_transactions,
    resolve_label,
    validate_descriptors,
    write_jsonl,
)


def test_single_field_entity():
    t = Transaction("a", 0, 1, {"product": "XG-100"})
    assert extract_entity_value(t, EntityDescriptor("p", ["product"])) == "XG-100"


def test_composite_entity_with_sku_prefix():
    desc = EntityDescriptor("combo", ["device", "currency", "sku_prefix3"])
    t = Transaction("a", 0, 1, {"device": "PC", "currency": "USD", "sku": "ABC1234"})
    assert extract_entity_value(t, desc) == "PC|USD|ABC"


def test_missing_feature_becomes_sentinel():
    desc = EntityDescriptor("combo", ["device", "currency", "sku_prefix3"])
    t = Transaction("a", 0, 1, {"currency": "USD", "sku": "ABC1234"})
    assert extract_entity_value(t, desc) == "UNKNOWN|USD|ABC"


def test_explicit_prefix_feature_wins_over_derivation():
    desc = EntityDescriptor("s", ["sku_prefix3"])
    t = Transaction("a", 0, 1, {"sku": "ABC1234", "sku_prefix3": "ZZZ"})
    assert extract_entity_value(t, desc) == "ZZZ"


def test_empty_extractor_rejected():
    with pytest.raises(ValueError):
        EntityDescriptor("x", [])


def test_duplicate_descriptor_names_rejected():
    d = EntityDescriptor("x", ["a"])
    with pytest.raises(ValueError, match="duplicate"):
        validate_descriptors([d, EntityDescriptor("x", ["b"])])


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.text(max_size=5)),
       st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=4))
def test_extraction_is_pure(features, names):
    t = Transaction("id", 0, 0, features)
    desc = EntityDescriptor("e", names)
    first = extract_entity_value(t, desc)
    assert first == extract_entity_value(Transaction("id", 0, 0, dict(features)), desc)
    assert first == "|".join(str(features[n]) if n in features else "UNKNOWN" for n in names)


def test_negative_amount_rejected():
    with pytest.raises(ValueError):
        Transaction("a", 0, -1)


def test_transaction_features_are_read_only():
    t = Transaction("a", 0, 1, {"x": 1})
    with pytest.raises(TypeError):
        t.features["x"] = 2


def test_no_events_is_good_so_far():
    assert resolve_label([], FeedbackPolicy(), 10**9) == GOOD_SO_FAR


def test_chargeback_visible_only_after_arrival():
    ev = [FeedbackEvent("t", CHARGEBACK, 100)]
    assert resolve_label(ev, FeedbackPolicy(), 50) == GOOD_SO_FAR
    assert resolve_label(ev, FeedbackPolicy(), 100) == GOOD_SO_FAR
    assert resolve_label(ev, FeedbackPolicy(), 101) == FRAUD


def test_disabled_kind_ignored():
    ev = [FeedbackEvent("t", SYSTEM_REJECT, 0)]
    assert resolve_label(ev, FeedbackPolicy(system_reject=False), 10) == GOOD_SO_FAR
    assert resolve_label(ev, FeedbackPolicy(), 10) == FRAUD


def test_legitimate_verdict_never_flags():
    ev = [FeedbackEvent("t", MANUAL_REVIEW_REJECT, 0, LEGITIMATE)]
    assert resolve_label(ev, FeedbackPolicy(), 10) == GOOD_SO_FAR


def test_events_for_several_transactions_rejected():
    with pytest.raises(ValueError):
        resolve_label([FeedbackEvent("a", CHARGEBACK, 1), FeedbackEvent("b", CHARGEBACK, 1)],
                      FeedbackPolicy(), 5)


events_st = st.lists(st.builds(FeedbackEvent, st.just("t"), st.sampled_from(FEEDBACK_KINDS),
                               st.integers(0, 1000), st.sampled_from([FRAUD, LEGITIMATE])),
                     max_size=6)
policy_st = st.builds(FeedbackPolicy, st.booleans(), st.booleans(), st.booleans())


@given(events_st, policy_st, st.integers(0, 1001), st.integers(0, 1001))
def test_label_monotone_in_as_of(events, policy, a, b):
    lo, hi = sorted((a, b))
    if resolve_label(events, policy, lo) == FRAUD:
        assert resolve_label(events, policy, hi) == FRAUD


@given(events_st)
def test_label_at_infinity_with_all_kinds(events):
    expected = FRAUD if any(e.verdict == FRAUD for e in events) else GOOD_SO_FAR
    assert resolve_label(events, FeedbackPolicy(), float("inf")) == expected


def test_jsonl_round_trip(tmp_path):
    txns = [Transaction("a", 5, 120, {"product": "P1", "risk_signal": 0.5}),
            Transaction("b", 9, 0, {})]
    fb = [FeedbackEvent("a", CHARGEBACK, 50), FeedbackEvent("b", SYSTEM_REJECT, 9, LEGITIMATE)]
    write_jsonl(tmp_path / "t.jsonl", txns)
    write_jsonl(tmp_path / "f.jsonl", fb)
    assert read_transactions(tmp_path / "t.jsonl") == txns
    assert read_feedback(tmp_path / "f.jsonl") == fb
    first = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert list(first) == ["id", "time", "amount", "features"]
    assert list(json.loads((tmp_path / "f.jsonl").read_text().splitlines()[0])) == [
        "transaction_id", "kind", "arrival_time", "verdict"]
