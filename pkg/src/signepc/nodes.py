"""Message handlers for the discovery service, information services and attackers.

Handlers are deterministic functions of node state, the incoming payload and
the current time. Anything that would be a remote call is returned as an
outgoing :class:`Message`; the simulator (or a test) delivers it.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import random
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from . import policy
from .errors import BadSignature, NoGrant, UnknownEpc
from .model import EventRecord, PublishRegistry
from .pki import KeyRing, KeyStatus, check_key_expiry
from .tokens import (
    AccessRight,
    ExpiryWindow,
    RejectReason,
    SignatureTag,
    Token,
    check_token,
    compute_expiry,
    issue_token,
    make_digest,
    sign_tag,
)

EPCDS_ID = "epcds"


class Model(enum.Enum):
    DIRECTORY_OPEN = "directory_open"
    SECURE_EPCDS = "secure_epcds"
    SIGN_EPC = "sign_epc"


class Kind(enum.Enum):
    USER_QUERY_DS = "UserQueryDS"
    DS_RESPONSE = "DsResponse"
    USER_QUERY_IS = "UserQueryIS"
    IS_RESPONSE = "IsResponse"
    ACCESS_CHECK_REQUEST = "AccessCheckRequest"
    ACCESS_CHECK_RESPONSE = "AccessCheckResponse"
    CHALLENGE = "ChallengeMsg"
    CHALLENGE_RESPONSE = "ChallengeResponseMsg"
    ERROR = "ErrorResponse"


# --- payloads ----------------------------------------------------------------


@dataclass(frozen=True)
class QueryDs:
    user: str
    epc: str


@dataclass(frozen=True)
class Grant:
    company: str
    epcis_url: str
    rights: AccessRight | None = None
    tag: SignatureTag | None = None
    expiry_label: str = ""

    @property
    def token(self) -> Token | None:
        if self.rights is None or self.tag is None:
            return None
        return Token(self.rights, self.tag, self.expiry_label)


@dataclass(frozen=True)
class DsResponse:
    user: str
    epc: str
    grants: tuple[Grant, ...]


@dataclass(frozen=True)
class QueryIs:
    user: str
    epc: str
    rights: AccessRight | None = None
    tag: SignatureTag | None = None
    ref: int = 0


@dataclass(frozen=True)
class IsResponse:
    user: str
    epc: str
    events: tuple[EventRecord, ...]
    ref: int = 0


@dataclass(frozen=True)
class AccessCheckRequest:
    user: str
    epc: str
    owner: str
    ref: int = 0


@dataclass(frozen=True)
class AccessCheckResponse:
    granted: bool
    scope: frozenset[str] = frozenset()
    ref: int = 0


@dataclass(frozen=True)
class ErrorResponse:
    error: str
    reason: str = ""
    ref: int = 0


_PAYLOAD_KIND = {
    QueryDs: Kind.USER_QUERY_DS,
    DsResponse: Kind.DS_RESPONSE,
    QueryIs: Kind.USER_QUERY_IS,
    IsResponse: Kind.IS_RESPONSE,
    AccessCheckRequest: Kind.ACCESS_CHECK_REQUEST,
    AccessCheckResponse: Kind.ACCESS_CHECK_RESPONSE,
    ErrorResponse: Kind.ERROR,
}


@dataclass(frozen=True)
class Message:
    kind: Kind
    sender: str
    recipient: str
    payload: Any
    sent_at: float = 0.0

    def __post_init__(self):
        expected = _PAYLOAD_KIND.get(type(self.payload))
        if expected is not None and expected is not self.kind:
            raise ValueError(f"{type(self.payload).__name__} payload cannot travel as {self.kind.value}")


def message(sender: str, recipient: str, payload, sent_at: float = 0.0) -> Message:
    return Message(_PAYLOAD_KIND[type(payload)], sender, recipient, payload, sent_at)


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class ServiceTimes:
    """Simulated durations in seconds."""

    policy_check: float = 0.001
    sign: float = 0.005
    verify: float = 0.0005
    db_lookup: float = 0.001
    remote_check_roundtrip: float = 0.0  # EPCIS-side marshalling overhead per remote check

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"service time {name} must be >= 0")

    def ds_query(self, model: Model, related: int, grants: int) -> float:
        t = self.db_lookup
        if model is not Model.DIRECTORY_OPEN:
            t += related * self.policy_check
        if model is Model.SIGN_EPC:
            t += grants * self.sign
        return t

    def access_check(self) -> float:
        return self.db_lookup + self.policy_check

    def is_query(self, model: Model) -> float:
        if model is Model.SIGN_EPC:
            return self.db_lookup + self.verify
        if model is Model.SECURE_EPCDS:
            return self.db_lookup + self.remote_check_roundtrip
        return self.db_lookup


@dataclass(frozen=True)
class NodeConfig:
    model: Model = Model.SIGN_EPC
    window: ExpiryWindow = field(default_factory=ExpiryWindow)
    service_times: ServiceTimes = field(default_factory=ServiceTimes)


# --- discovery service -----------------------------------------------------------


class EpcdsNode:
    def __init__(self, registry: PublishRegistry, config: NodeConfig, signer=None, node_id: str = EPCDS_ID):
        if config.model is Model.SIGN_EPC and signer is None:
            raise ValueError("SignEpc discovery service needs a signing key")
        self.registry = registry
        self.config = config
        self.signer = signer
        self.node_id = node_id

    def rotate_key(self, signer) -> None:
        self.signer = signer

    def decide(self, user: str, epc: str) -> list[tuple[Any, policy.GrantDecision]]:
        records = self.registry.lookup(epc)
        if not records:
            raise UnknownEpc(epc)
        return [(r, policy.evaluate(self.registry, r.policy, r.company, user, epc)) for r in records]

    def handle_query(self, user: str, epc: str, now: int) -> DsResponse | ErrorResponse:
        try:
            grants = self._grants(user, epc, now)
        except UnknownEpc:
            return ErrorResponse("UnknownEpc", epc)
        except NoGrant:
            return ErrorResponse("NoGrant", epc)
        return DsResponse(user, epc, grants)

    def _grants(self, user: str, epc: str, now: int) -> tuple[Grant, ...]:
        model = self.config.model
        if model is Model.DIRECTORY_OPEN:
            records = self.registry.lookup(epc)
            if not records:
                raise UnknownEpc(epc)
            return tuple(Grant(r.company, r.epcis_url) for r in records)
        out = []
        for rec, decision in self.decide(user, epc):
            if not decision.granted:
                continue
            rights = AccessRight(user, rec.epc, rec.epcis_url, decision.scope)
            if model is Model.SIGN_EPC:
                tok = issue_token(self.signer, rights, now, self.config.window)
                out.append(Grant(rec.company, rec.epcis_url, rights, tok.tag, tok.expiry_label))
            else:
                out.append(Grant(rec.company, rec.epcis_url, rights))
        if not out:
            raise NoGrant(f"no publisher of {epc} grants {user}")
        return tuple(out)

    def handle_access_check(self, req: AccessCheckRequest) -> AccessCheckResponse:
        rec = self.registry.record(req.epc, req.owner)
        if rec is None:
            return AccessCheckResponse(False, ref=req.ref)
        decision = policy.evaluate(self.registry, rec.policy, req.owner, req.user, req.epc)
        return AccessCheckResponse(decision.granted, decision.scope, req.ref)

    def receive(self, msg: Message, now: int) -> list[Message]:
        p = msg.payload
        if isinstance(p, QueryDs):
            out = self.handle_query(p.user, p.epc, now)
        elif isinstance(p, AccessCheckRequest):
            out = self.handle_access_check(p)
        else:
            out = ErrorResponse("UnexpectedMessage", msg.kind.value)
        return [message(self.node_id, msg.sender, out)]


def epcds_handle_query(state: EpcdsNode, user: str, epc: str, now: int) -> DsResponse | ErrorResponse:
    return state.handle_query(user, epc, now)


def epcds_handle_access_check(state: EpcdsNode, user: str, epc: str, owner: str) -> AccessCheckResponse:
    return state.handle_access_check(AccessCheckRequest(user, epc, owner))


# --- information service ---------------------------------------------------------

ACCESS_DENIED = "AccessDenied"
SIGNER_KEY_EXPIRED = "SignerKeyExpired"
WRONG_SERVICE = "RightsNotForThisService"


class EpcisNode:
    """One company's information service.

    Under SecureEpcds every query becomes a pending entry until the discovery
    service answers the access check; under SignEpc queries are decided
    locally from the presented token.
    """

    def __init__(
        self,
        company: str,
        url: str,
        config: NodeConfig,
        events: Sequence[EventRecord] = (),
        keyring: KeyRing | None = None,
        epcds_id: str = EPCDS_ID,
        node_id: str | None = None,
    ):
        self.company = company
        self.url = url
        self.config = config
        self.events = list(events)
        self.keyring = keyring if keyring is not None else KeyRing()
        self.epcds_id = epcds_id
        self.node_id = node_id or url
        self._pending: dict[int, tuple[str, str, str, int]] = {}
        self._next_ref = 0

    def _events_for(self, epc: str, scope: frozenset[str]) -> tuple[EventRecord, ...]:
        return tuple(e.restricted_to(scope) for e in self.events if e.epc == epc)

    def verify(self, q: QueryIs, now: int) -> tuple[bool, str]:
        """Local SignEpc decision: (accepted, reason-or-empty)."""
        if q.rights is None or q.tag is None:
            return False, RejectReason.SIGNATURE_INVALID.value
        if q.tag.key_id in self.keyring:
            if check_key_expiry(self.keyring.get(q.tag.key_id), now) is KeyStatus.EXPIRED:
                return False, SIGNER_KEY_EXPIRED
        verdict = check_token(q.user, q.rights, q.tag, now, self.config.window, self.keyring)
        if not verdict:
            return False, verdict.reason.value
        if q.rights.epcis_url != self.url or q.rights.epc != q.epc:
            return False, WRONG_SERVICE
        return True, ""

    def handle_query(self, q: QueryIs, now: int, reply_to: str) -> list[Message]:
        model = self.config.model
        if model is Model.DIRECTORY_OPEN:
            out = IsResponse(q.user, q.epc, self._events_for(q.epc, frozenset()), q.ref)
            return [message(self.node_id, reply_to, out)]
        if model is Model.SIGN_EPC:
            ok, reason = self.verify(q, now)
            if ok:
                out = IsResponse(q.user, q.epc, self._events_for(q.epc, q.rights.scope), q.ref)
            elif reason == SIGNER_KEY_EXPIRED:
                out = ErrorResponse(SIGNER_KEY_EXPIRED, reason, q.ref)
            else:
                out = ErrorResponse(ACCESS_DENIED, reason, q.ref)
            return [message(self.node_id, reply_to, out)]
        self._next_ref += 1
        ref = self._next_ref
        self._pending[ref] = (q.user, q.epc, reply_to, q.ref)
        req = AccessCheckRequest(q.user, q.epc, self.company, ref)
        return [message(self.node_id, self.epcds_id, req)]

    def handle_access_check_response(self, resp: AccessCheckResponse) -> list[Message]:
        user, epc, reply_to, user_ref = self._pending.pop(resp.ref)
        if resp.granted:
            out = IsResponse(user, epc, self._events_for(epc, resp.scope), user_ref)
        else:
            out = ErrorResponse(ACCESS_DENIED, "DeniedByEpcds", user_ref)
        return [message(self.node_id, reply_to, out)]

    @property
    def pending(self) -> int:
        return len(self._pending)

    def receive(self, msg: Message, now: int) -> list[Message]:
        p = msg.payload
        if isinstance(p, QueryIs):
            return self.handle_query(p, now, msg.sender)
        if isinstance(p, AccessCheckResponse):
            return self.handle_access_check_response(p)
        return [message(self.node_id, msg.sender, ErrorResponse("UnexpectedMessage", msg.kind.value))]


def epcis_handle_query(state: EpcisNode, user: str, payload: QueryIs, now: int, reply_to: str = "client") -> list[Message]:
    if payload.user != user:
        payload = replace(payload, user=user)
    return state.handle_query(payload, now, reply_to)


# --- attacker ------------------------------------------------------------------------


class Attack(enum.Enum):
    TAMPER_RIGHTS = "tamper_rights"
    REPLAY_AS_SELF = "replay_as_self"
    REUSE_EXPIRED = "reuse_expired"
    FORGE_SIGNATURE = "forge_signature"


TAMPER_FIELDS = ("userid", "epc", "epcis_url", "scope")


def _tamper(rights: AccessRight, attacker_id: str, fld: str, rng: random.Random) -> AccessRight:
    # the attacker always claims the rights as their own, then optionally alters one more field
    out = replace(rights, userid=attacker_id)
    if fld == "userid":
        if attacker_id == rights.userid:
            out = replace(out, scope=rights.scope | {"x-escalated"})
        return out
    if fld == "epc":
        head, _, last = rights.epc.rpartition(".")
        return replace(out, epc=type(rights.epc)(f"{head}.{int(last) + 1 + rng.randrange(1000)}"))
    if fld == "epcis_url":
        return replace(out, epcis_url=rights.epcis_url + "/x")
    if fld == "scope":
        if rights.scope:
            return replace(out, scope=frozenset())  # empty scope widens to every attribute
        return replace(out, scope=frozenset({"location"}))
    raise ValueError(f"unknown field {fld!r}")


def attacker_action(
    kind: Attack,
    captured: DsResponse,
    attacker_id: str,
    now: int,
    *,
    window: ExpiryWindow,
    forge_key=None,
    grant_index: int = 0,
    field: str = "userid",
    rng: random.Random | None = None,
    sender: str | None = None,
) -> Message:
    """Build a malicious information-service query from an intercepted response.

    ``REUSE_EXPIRED`` resends the legitimate holder's own token at the start
    of the next expiry window; the returned message's ``sent_at`` carries
    that time.
    """
    rng = rng or random.Random(0)
    grant = captured.grants[grant_index]
    if grant.rights is None or grant.tag is None:
        raise ValueError("captured response carries no signed rights")
    rights, tag = grant.rights, grant.tag
    user, sent_at = attacker_id, now
    if kind is Attack.TAMPER_RIGHTS:
        rights = _tamper(rights, attacker_id, field, rng)
    elif kind is Attack.REPLAY_AS_SELF:
        pass
    elif kind is Attack.REUSE_EXPIRED:
        user = rights.userid
        sent_at = window.start_of_next(now)
    elif kind is Attack.FORGE_SIGNATURE:
        if forge_key is None:
            raise ValueError("forging needs a non-discovery-service key")
        rights = replace(rights, userid=attacker_id, scope=frozenset())
        digest = make_digest(attacker_id, rights, compute_expiry(now, window))
        # claim the genuine key id so the verifier picks the real public key
        tag = SignatureTag(sign_tag(forge_key, digest).signature, tag.key_id)
    q = QueryIs(user, captured.epc, rights, tag)
    return message(sender or attacker_id, grant.epcis_url, q, sent_at)


# --- modeled crypto ----------------------------------------------------------------


class ModeledKey:
    """Cheap stand-in for an RSA pair in large simulations.

    The "signature" is ``HMAC(secret, digest) || digest``: the digest is
    recoverable like an RSA tag and only the holder of ``secret`` can produce
    a tag that verifies.
    """

    def __init__(self, secret: bytes, valid_until: int = 2**62):
        self.secret = secret
        self.key_id = "modeled-" + hashlib.sha256(secret).hexdigest()[:8]
        self.valid_until = valid_until

    @classmethod
    def from_seed(cls, seed: int, valid_until: int = 2**62) -> ModeledKey:
        return cls(random.Random(seed).randbytes(32), valid_until)

    def sign_digest(self, digest: bytes) -> bytes:
        return hmac.new(self.secret, digest, hashlib.sha256).digest() + digest

    def recover_digest(self, signature: bytes) -> bytes:
        mac, digest = signature[:32], signature[32:]
        if len(signature) != 64 or not hmac.compare_digest(mac, hmac.new(self.secret, digest, hashlib.sha256).digest()):
            raise BadSignature("modeled signature does not verify")
        return digest


def events_from_mapping(rows: Sequence[Mapping[str, Any]]) -> list[EventRecord]:
    return [
        EventRecord(r["epc"], r["company"], int(r["event_time"]), r.get("location", ""), r.get("business_step", ""), r.get("attributes", {}))
        for r in rows
    ]


__all__ = [
    "Attack",
    "EpcdsNode",
    "EpcisNode",
    "Kind",
    "Message",
    "Model",
    "ModeledKey",
    "NodeConfig",
    "ServiceTimes",
    "attacker_action",
    "epcds_handle_access_check",
    "epcds_handle_query",
    "epcis_handle_query",
]
