"""Capability tokens: claims encoding, digest, RSA tag, expiry windows.

The discovery service signs ``SHA-256(userid, rights, expiry_label)``. The
information service recomputes the same digest from the requester's id, the
presented rights and the label of *its own* current window, and accepts only
when it equals the digest recovered from the tag.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Protocol

from .errors import BadSignature, UnknownKeyId
from .model import EpcCode, UserId, check_user_id, parse_epc

DAY = 86400
WIRE_VERSION = 1


class Digest(bytes):
    """A 32-byte SHA-256 value."""

    def __new__(cls, value: bytes):
        if len(value) != 32:
            raise ValueError(f"digest must be 32 bytes, got {len(value)}")
        return super().__new__(cls, value)


@dataclass(frozen=True)
class AccessRight:
    userid: UserId
    epc: EpcCode
    epcis_url: str
    scope: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "scope", frozenset(self.scope))
        if not self.epcis_url:
            raise ValueError("epcis_url must be non-empty")


@dataclass(frozen=True)
class SignatureTag:
    signature: bytes = field(repr=False)
    key_id: str


@dataclass(frozen=True)
class ExpiryWindow:
    """Validity period of issued tags, in seconds (86400 = calendar day, UTC)."""

    window_seconds: int = DAY

    def __post_init__(self):
        if not isinstance(self.window_seconds, int) or self.window_seconds <= 0:
            raise ValueError("window_seconds must be a positive integer")

    def label(self, t: int) -> str:
        return compute_expiry(t, self)

    def start_of_next(self, t: int) -> int:
        return (t // self.window_seconds + 1) * self.window_seconds


def compute_expiry(issue_time: int, window: ExpiryWindow) -> str:
    if issue_time < 0:
        raise ValueError("issue_time must be >= 0")
    if window.window_seconds == DAY:
        return datetime.fromtimestamp(issue_time, tz=timezone.utc).strftime("%Y-%m-%d")
    return str(issue_time // window.window_seconds)


def _field(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(">I", len(b)) + b


def canonical_claims_bytes(userid: str, rights: AccessRight, expiry_label: str) -> bytes:
    scope = sorted(rights.scope)
    parts = [_field(userid), _field(rights.epc), _field(rights.epcis_url), struct.pack(">I", len(scope))]
    parts.extend(_field(s) for s in scope)
    parts.append(_field(expiry_label))
    return b"".join(parts)


def make_digest(userid: str, rights: AccessRight, expiry_label: str) -> Digest:
    return Digest(hashlib.sha256(canonical_claims_bytes(userid, rights, expiry_label)).digest())


class Signer(Protocol):
    key_id: str

    def sign_digest(self, digest: bytes) -> bytes: ...


class Verifier(Protocol):
    key_id: str

    def recover_digest(self, signature: bytes) -> bytes: ...


def sign_tag(private_key: Signer, digest: Digest) -> SignatureTag:
    return SignatureTag(private_key.sign_digest(bytes(digest)), private_key.key_id)


def _select_key(keys, key_id: str) -> Verifier:
    if hasattr(keys, "get") and not hasattr(keys, "recover_digest"):
        return keys.get(key_id)
    if keys.key_id != key_id:
        raise UnknownKeyId(key_id)
    return keys


def verify_tag(public_key, tag: SignatureTag) -> Digest:
    """Recover the digest committed to by ``tag``.

    ``public_key`` is a single verifier or a key ring selected by
    ``tag.key_id``. Raises :class:`BadSignature` or :class:`UnknownKeyId`.
    """
    key = _select_key(public_key, tag.key_id)
    if not tag.signature:
        raise BadSignature("empty signature")
    recovered = key.recover_digest(tag.signature)
    try:
        return Digest(recovered)
    except ValueError as exc:
        raise BadSignature(str(exc)) from exc


class RejectReason(enum.Enum):
    SIGNATURE_INVALID = "SignatureInvalid"
    DIGEST_MISMATCH = "DigestMismatch"
    USERID_MISMATCH = "UseridMismatch"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        return "ACCEPT" if self.accepted else f"REJECT {self.reason.value}"


ACCEPT = Verdict(True)


def check_token(
    requester: str,
    rights: AccessRight,
    tag: SignatureTag,
    now: int,
    window: ExpiryWindow,
    epcds_key,
) -> Verdict:
    expected = make_digest(requester, rights, compute_expiry(now, window))
    try:
        recovered = verify_tag(epcds_key, tag)
    except (BadSignature, UnknownKeyId):
        return Verdict(False, RejectReason.SIGNATURE_INVALID)
    if requester != rights.userid:
        return Verdict(False, RejectReason.USERID_MISMATCH)
    if not hmac.compare_digest(recovered, expected):
        return Verdict(False, RejectReason.DIGEST_MISMATCH)
    return ACCEPT


@dataclass(frozen=True)
class Token:
    """What the user carries from the discovery service to an information service."""

    rights: AccessRight
    tag: SignatureTag
    expiry_label: str  # transported for debugging only; verifiers recompute it

    def to_wire(self) -> dict:
        return {
            "version": WIRE_VERSION,
            "userid": self.rights.userid,
            "epc": self.rights.epc,
            "epcis_url": self.rights.epcis_url,
            "scope": sorted(self.rights.scope),
            "expiry_label": self.expiry_label,
            "key_id": self.tag.key_id,
            "signature": base64.b64encode(self.tag.signature).decode(),
        }

    @classmethod
    def from_wire(cls, data: dict) -> Token:
        if data.get("version") != WIRE_VERSION:
            raise ValueError(f"unsupported token version {data.get('version')!r}")
        rights = AccessRight(
            check_user_id(data["userid"]),
            parse_epc(data["epc"]),
            data["epcis_url"],
            frozenset(data.get("scope", ())),
        )
        try:
            sig = base64.b64decode(data["signature"], validate=True)
        except ValueError as exc:
            raise ValueError(f"signature is not base64: {exc}") from None
        return cls(rights, SignatureTag(sig, data["key_id"]), data.get("expiry_label", ""))

    def with_rights(self, **changes) -> Token:
        return replace(self, rights=replace(self.rights, **changes))


def issue_token(signer: Signer, rights: AccessRight, now: int, window: ExpiryWindow) -> Token:
    label = compute_expiry(now, window)
    return Token(rights, sign_tag(signer, make_digest(rights.userid, rights, label)), label)
