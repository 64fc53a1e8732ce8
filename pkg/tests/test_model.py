import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from signepc.errors import MalformedEpc, TimestampCollision
from signepc.model import (
    AccessPolicy,
    EventRecord,
    PublishRecord,
    PublishRegistry,
    Rule,
    Visibility,
    check_user_id,
    parse_epc,
    registry_lookup,
    registry_publish,
)

from conftest import EPC_X

EPC_ORACLE = re.compile(r"urn:epc:id:sgtin:\d+\.\d+\.\d+")


def rec(company, t, epc=EPC_X, policy=None):
    return PublishRecord(epc, company, t, f"https://{company}.example/q", policy or AccessPolicy.all())


def test_parse_epc_wellformed():
    assert parse_epc("urn:epc:id:sgtin:0614141.112345.400") == "urn:epc:id:sgtin:0614141.112345.400"


def test_parse_epc_lowercases_prefix_only():
    assert parse_epc("URN:EPC:ID:SGTIN:1.2.3") == "urn:epc:id:sgtin:1.2.3"


@pytest.mark.parametrize(
    "raw",
    ["", "urn:epc:id:sgtin:0614141.112345", "urn:epc:id:sgtin:1..3", "urn:epc:id:sgtin:a.b.c", "urn:epc:id:sscc:1.2.3", "urn:epc:id:sgtin:1.2.3.4"],
)
def test_parse_epc_rejects(raw):
    assert EPC_ORACLE.fullmatch(raw) is None
    with pytest.raises(MalformedEpc):
        parse_epc(raw)


@given(st.text(alphabet="0123456789.:abcdegilnprstu", max_size=40))
def test_parse_epc_agrees_with_regex_oracle(raw):
    candidate = "urn:epc:id:sgtin:" + raw
    if EPC_ORACLE.fullmatch(candidate):
        assert parse_epc(candidate) == candidate
    else:
        with pytest.raises(MalformedEpc):
            parse_epc(candidate)


def test_user_id_rejects_control_chars():
    with pytest.raises(ValueError):
        check_user_id("bad\x00id")
    with pytest.raises(ValueError):
        check_user_id("")
    assert check_user_id("alice") == "alice"


def test_policy_visibility_consistency():
    with pytest.raises(ValueError):
        AccessPolicy(Rule.ALL, Visibility.UP)
    with pytest.raises(ValueError):
        AccessPolicy(Rule.LIMITED, Visibility.NOT_APPLICABLE)
    assert AccessPolicy.limited(Visibility.DOWN, ["a"]).scope == frozenset({"a"})


def test_event_restricted_to_scope():
    e = EventRecord(EPC_X, "A", 1, "dock", "receiving", {"warehouse": "w1", "quality": "pass"})
    assert e.restricted_to(frozenset({"warehouse"})).attributes == {"warehouse": "w1"}
    assert e.restricted_to(frozenset()).attributes == e.attributes


def test_publish_single():
    reg = registry_publish(PublishRegistry(), rec("A", 100))
    assert [r.company for r in registry_lookup(reg, EPC_X)] == ["A"]


def test_publish_ordering():
    reg = PublishRegistry([rec("A", 100), rec("B", 200)])
    assert [r.company for r in reg.lookup(EPC_X)] == ["A", "B"]


def test_republish_replaces():
    reg = PublishRegistry([rec("A", 100), rec("A", 300)])
    found = reg.lookup(EPC_X)
    assert len(found) == 1 and found[0].publish_time == 300
    assert len(reg) == 1


def test_lookup_unknown_is_empty():
    assert PublishRegistry().lookup(EPC_X) == []


def test_lookup_sorted_against_sort_oracle():
    reg = PublishRegistry([rec("A", 100), rec("C", 300), rec("B", 200)])
    expected = [c for _, c in sorted([(100, "A"), (300, "C"), (200, "B")])]
    assert [r.company for r in reg.lookup(EPC_X)] == expected == ["A", "B", "C"]


def test_timestamp_collision_rejected():
    reg = PublishRegistry([rec("A", 100)])
    with pytest.raises(TimestampCollision):
        reg.publish(rec("B", 100))


def test_same_company_same_time_is_fine():
    reg = PublishRegistry([rec("A", 100)])
    reg.publish(rec("A", 100))
    assert len(reg) == 1


publishes = st.lists(st.tuples(st.sampled_from("ABCDEF"), st.integers(0, 50)), max_size=20)


def _apply(ops):
    reg = PublishRegistry()
    for company, t in ops:
        try:
            reg.publish(rec(company, t))
        except TimestampCollision:
            pass
    return reg


@given(publishes)
def test_lookup_strictly_increasing(ops):
    times = [r.publish_time for r in _apply(ops).lookup(EPC_X)]
    assert all(a < b for a, b in zip(times, times[1:]))


@given(publishes)
def test_publish_idempotent(ops):
    reg = _apply(ops)
    before = reg.lookup(EPC_X)
    for r in before:
        reg.publish(r)
    assert reg.lookup(EPC_X) == before


@given(publishes, st.sampled_from("ABCDEF"), st.integers(51, 100), st.integers(101, 150))
def test_replacement_keeps_later(ops, company, t1, t2):
    reg = _apply(ops)
    reg.publish(rec(company, t1))
    reg.publish(rec(company, t2))
    mine = [r for r in reg.lookup(EPC_X) if r.company == company]
    assert len(mine) == 1 and mine[0].publish_time == t2
