import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from signepc.model import AccessPolicy, EventRecord, PublishRecord, PublishRegistry, Visibility
from signepc.nodes import (
    Attack,
    DsResponse,
    EpcdsNode,
    EpcisNode,
    ErrorResponse,
    IsResponse,
    Kind,
    Message,
    Model,
    ModeledKey,
    NodeConfig,
    QueryDs,
    QueryIs,
    attacker_action,
    epcds_handle_access_check,
    epcds_handle_query,
    epcis_handle_query,
    message,
)
from signepc.pki import KeyRing, generate_keypair
from signepc.tokens import ExpiryWindow, check_token

from conftest import EPC_X, EPC_Y
from harness import build, granted_triples, pump
from oracles import ALL_POLICIES, EPC, random_registry

T0 = 1710460800
DAILY = ExpiryWindow()


def hide_registry():
    reg = PublishRegistry(user_company={"ua": "A"})
    reg.publish(PublishRecord(EPC_X, "A", 1, "https://a/q", AccessPolicy.hide()))
    reg.publish(PublishRecord(EPC_X, "B", 2, "https://b/q", AccessPolicy.hide()))
    return reg


@pytest.mark.parametrize("model", [Model.SECURE_EPCDS, Model.SIGN_EPC])
def test_hide_only_is_no_grant(model):
    epcds, _ = build(hide_registry(), model, signer=ModeledKey.from_seed(0))
    for user in ("ua", "anyone"):
        out = epcds_handle_query(epcds, user, EPC_X, T0)
        assert isinstance(out, ErrorResponse) and out.error == "NoGrant"


def test_unknown_epc(abc_registry):
    epcds, _ = build(abc_registry, Model.SECURE_EPCDS)
    assert epcds.handle_query("ua", EPC_Y, T0).error == "UnknownEpc"


def test_signepc_response_carries_checkable_tokens(abc_registry, keypair):
    epcds, _ = build(abc_registry, Model.SIGN_EPC, keypair.private)
    resp = epcds.handle_query("ub", EPC_X, T0)
    assert isinstance(resp, DsResponse) and len(resp.grants) == 3
    for g in resp.grants:
        assert g.rights.epcis_url == g.epcis_url and g.rights.userid == "ub"
        assert check_token("ub", g.rights, g.tag, T0 + 100, DAILY, keypair.public)


def test_directory_open_returns_every_url(abc_registry):
    reg = hide_registry()
    epcds, _ = build(reg, Model.DIRECTORY_OPEN)
    for user in ("ua", "stranger"):
        resp = epcds.handle_query(user, EPC_X, T0)
        assert len(resp.grants) == len(reg.lookup(EPC_X)) == 2
        assert all(g.tag is None for g in resp.grants)


def test_secure_returns_only_granting_companies(abc_registry):
    abc_registry.publish(PublishRecord(EPC_X, "A", 100, "https://epcis.a.example/q", AccessPolicy.hide()))
    epcds, _ = build(abc_registry, Model.SECURE_EPCDS)
    resp = epcds.handle_query("uc", EPC_X, T0)
    assert {g.company for g in resp.grants} == {"B", "C"}


def test_access_check_examples(abc_registry):
    epcds, _ = build(abc_registry, Model.SECURE_EPCDS)
    assert epcds_handle_access_check(epcds, "ua", EPC_X, "B").granted
    abc_registry.publish(PublishRecord(EPC_X, "B", 200, "https://epcis.b.example/q", AccessPolicy.hide()))
    assert not epcds_handle_access_check(epcds, "ua", EPC_X, "B").granted
    abc_registry.publish(PublishRecord(EPC_X, "C", 300, "https://epcis.c.example/q", AccessPolicy.limited(Visibility.WHOLE)))
    assert not epcds_handle_access_check(epcds, "stranger", EPC_X, "C").granted
    assert not epcds_handle_access_check(epcds, "ua", EPC_X, "Z").granted


def scoped_setup(keypair):
    reg = PublishRegistry(user_company={"ub": "B"})
    reg.publish(PublishRecord(EPC_X, "A", 100, "https://a/q", AccessPolicy.limited(Visibility.DOWN, ["location"])))
    reg.publish(PublishRecord(EPC_X, "B", 200, "https://b/q", AccessPolicy.all()))
    cfg = NodeConfig(Model.SIGN_EPC)
    epcds = EpcdsNode(reg, cfg, keypair.private)
    ev = EventRecord(EPC_X, "A", 5, "plant", "shipping", {"location": "dock 4", "quality": "grade B", "warehouse": "W7"})
    node = EpcisNode("A", "https://a/q", cfg, [ev], KeyRing([keypair.public]))
    return epcds, node


def test_signepc_scope_filtering(keypair):
    epcds, node = scoped_setup(keypair)
    g = next(g for g in epcds.handle_query("ub", EPC_X, T0).grants if g.company == "A")
    assert g.rights.scope == {"location"}
    (out,) = epcis_handle_query(node, "ub", QueryIs("ub", EPC_X, g.rights, g.tag), T0)
    assert isinstance(out.payload, IsResponse)
    (event,) = out.payload.events
    assert set(event.attributes) == {"location"}


def test_signepc_expired_token_denied_without_epcds(keypair):
    epcds, node = scoped_setup(keypair)
    g = epcds.handle_query("ub", EPC_X, T0).grants[0]
    outs = node.handle_query(QueryIs("ub", EPC_X, g.rights, g.tag), T0 + 86400, "client")
    assert len(outs) == 1 and outs[0].recipient == "client"
    assert (outs[0].payload.error, outs[0].payload.reason) == ("AccessDenied", "DigestMismatch")


def test_secure_denied_by_epcds(abc_registry):
    abc_registry.publish(PublishRecord(EPC_X, "A", 100, "https://epcis.a.example/q", AccessPolicy.hide()))
    epcds, services = build(abc_registry, Model.SECURE_EPCDS)
    final, to_epcds = pump(epcds, services["https://epcis.a.example/q"], QueryIs("ub", EPC_X), T0)
    assert isinstance(final, ErrorResponse) and final.error == "AccessDenied"
    assert to_epcds == 1


def test_wrong_service_rejected(abc_registry, keypair):
    epcds, services = build(abc_registry, Model.SIGN_EPC, keypair.private, keypair.public)
    g = epcds.handle_query("ua", EPC_X, T0).grants[0]
    other = next(u for u in services if u != g.epcis_url)
    final, _ = pump(epcds, services[other], QueryIs("ua", EPC_X, g.rights, g.tag), T0)
    assert final.reason == "RightsNotForThisService"


def test_message_kind_must_match_payload():
    with pytest.raises(ValueError):
        Message(Kind.DS_RESPONSE, "a", "b", QueryDs("u", EPC_X))
    assert message("a", "b", QueryDs("u", EPC_X)).kind is Kind.USER_QUERY_DS


# --- attacks -----------------------------------------------------------------------


@pytest.fixture
def attack_world(abc_registry, keypool):
    kp, forge = keypool[0], keypool[1].private
    abc_registry.bind_user("mallory", "M")
    abc_registry.publish(PublishRecord(EPC_Y, "M", 5, "https://epcis.m.example/q", AccessPolicy.all()))
    epcds, services = build(abc_registry, Model.SIGN_EPC, kp.private, kp.public)
    captured = epcds.handle_query("ub", EPC_X, T0 + 3600)
    return epcds, services, captured, forge


@pytest.mark.parametrize(
    "kind, fld, reasons",
    [
        (Attack.TAMPER_RIGHTS, "userid", {"DigestMismatch"}),
        (Attack.TAMPER_RIGHTS, "scope", {"DigestMismatch"}),
        (Attack.TAMPER_RIGHTS, "epc", {"DigestMismatch"}),
        (Attack.TAMPER_RIGHTS, "epcis_url", {"DigestMismatch"}),
        (Attack.REPLAY_AS_SELF, "userid", {"UseridMismatch", "DigestMismatch"}),
        (Attack.REUSE_EXPIRED, "userid", {"DigestMismatch"}),
        (Attack.FORGE_SIGNATURE, "userid", {"SignatureInvalid"}),
    ],
)
def test_attacks_rejected(attack_world, kind, fld, reasons):
    epcds, services, captured, forge = attack_world
    msg = attacker_action(kind, captured, "mallory", T0 + 3600, window=DAILY, forge_key=forge, field=fld)
    assert msg.kind is Kind.USER_QUERY_IS
    final, to_epcds = pump(epcds, services[msg.recipient], msg.payload, int(msg.sent_at))
    assert isinstance(final, ErrorResponse) and final.error == "AccessDenied"
    assert final.reason in reasons
    assert to_epcds == 0


def test_reuse_expired_waits_for_next_window(attack_world):
    _, _, captured, _ = attack_world
    msg = attacker_action(Attack.REUSE_EXPIRED, captured, "mallory", T0 + 3600, window=DAILY)
    assert msg.sent_at == T0 + 86400
    assert msg.payload.user == "ub"


def test_honest_control_accepted(attack_world):
    epcds, services, captured, _ = attack_world
    g = captured.grants[0]
    final, _ = pump(epcds, services[g.epcis_url], QueryIs("ub", EPC_X, g.rights, g.tag), T0 + 7200)
    assert isinstance(final, IsResponse)


# --- keys ----------------------------------------------------------------------------


def test_expired_signer_key_rejected_even_if_signature_verifies(abc_registry):
    old = generate_keypair(1024, valid_until=T0 + 10, allow_weak=True)
    epcds, services = build(abc_registry, Model.SIGN_EPC, old.private, old.public)
    g = epcds.handle_query("ua", EPC_X, T0).grants[0]
    assert check_token("ua", g.rights, g.tag, T0 + 11, DAILY, old.public)
    final, _ = pump(epcds, services[g.epcis_url], QueryIs("ua", EPC_X, g.rights, g.tag), T0 + 11)
    assert final.error == "SignerKeyExpired"


def test_key_rotation(abc_registry):
    old = generate_keypair(1024, valid_until=T0 + 100, allow_weak=True)
    new = generate_keypair(1024, valid_until=T0 + 10**6, allow_weak=True)
    epcds, services = build(abc_registry, Model.SIGN_EPC, old.private, old.public)
    for node in services.values():
        node.keyring.add(new.public)
    g_old = epcds.handle_query("ua", EPC_X, T0).grants[0]
    epcds.rotate_key(new.private)
    g_new = epcds.handle_query("ua", EPC_X, T0 + 50).grants[0]
    assert g_new.tag.key_id == new.key_id != g_old.tag.key_id
    node = services[g_old.epcis_url]
    assert isinstance(pump(epcds, node, QueryIs("ua", EPC_X, g_old.rights, g_old.tag), T0 + 100)[0], IsResponse)
    assert pump(epcds, node, QueryIs("ua", EPC_X, g_old.rights, g_old.tag), T0 + 101)[0].error == "SignerKeyExpired"
    assert isinstance(pump(epcds, node, QueryIs("ua", EPC_X, g_new.rights, g_new.tag), T0 + 101)[0], IsResponse)


# --- invariants ----------------------------------------------------------------------

SIGNER = ModeledKey.from_seed(9)


@given(st.integers(0, 2**32))
def test_signepc_never_contacts_epcds(seed):
    rng = random.Random(seed)
    reg, companies, _ = random_registry(rng)
    epcds, services = build(reg, Model.SIGN_EPC, SIGNER, SIGNER)
    forge = ModeledKey.from_seed(10)
    users = [f"user-{c}" for c in companies] + ["external"]
    for user in users:
        resp = epcds.handle_query(user, EPC, T0)
        for url, node in services.items():
            queries = [QueryIs(user, EPC)]
            if isinstance(resp, DsResponse):
                queries += [QueryIs(user, EPC, g.rights, g.tag) for g in resp.grants]
                for kind in Attack:
                    queries.append(attacker_action(kind, resp, rng.choice(users), T0, window=DAILY, forge_key=forge, rng=rng).payload)
            for q in queries:
                outs = node.handle_query(q, T0, "client")
                assert all(m.recipient != "epcds" for m in outs)


@given(st.integers(0, 2**32))
def test_secure_sends_exactly_one_check(seed):
    rng = random.Random(seed)
    reg, companies, _ = random_registry(rng)
    _, services = build(reg, Model.SECURE_EPCDS)
    for node in services.values():
        for user in [f"user-{c}" for c in companies] + ["external"]:
            outs = node.handle_query(QueryIs(user, EPC), T0, "client")
            assert [m.kind for m in outs] == [Kind.ACCESS_CHECK_REQUEST]


@given(st.integers(0, 2**32))
def test_models_grant_identical_triples(seed):
    reg, companies, _ = random_registry(random.Random(seed))
    users = [f"user-{c}" for c in companies] + ["external"]
    secure = granted_triples(reg, Model.SECURE_EPCDS, users, T0)
    signed = granted_triples(reg, Model.SIGN_EPC, users, T0, SIGNER, SIGNER)
    assert secure == signed
