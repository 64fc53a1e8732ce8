"""Domain types and the publish registry."""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NewType

from .errors import MalformedEpc, TimestampCollision

UserId = NewType("UserId", str)
CompanyId = NewType("CompanyId", str)

DEFAULT_EPC_PREFIX = "urn:epc:id:sgtin:"
_SEGMENTS = re.compile(r"[0-9]+\.[0-9]+\.[0-9]+")


class EpcCode(str):
    """Normalized EPC URN. Build with :func:`parse_epc`."""

    __slots__ = ()


def parse_epc(raw: str, prefix: str = DEFAULT_EPC_PREFIX) -> EpcCode:
    if not isinstance(raw, str) or not raw:
        raise MalformedEpc("empty EPC")
    head, tail = raw[: len(prefix)], raw[len(prefix):]
    if head.lower() != prefix.lower() or not _SEGMENTS.fullmatch(tail):
        raise MalformedEpc(f"not a {prefix}<n>.<n>.<n> URN: {raw!r}")
    return EpcCode(prefix.lower() + tail)


def _has_control(s: str) -> bool:
    return any(unicodedata.category(ch) == "Cc" for ch in s)


def check_user_id(value: str) -> UserId:
    if not isinstance(value, str) or not value or _has_control(value):
        raise ValueError(f"invalid user id: {value!r}")
    return UserId(value)


def check_company_id(value: str) -> CompanyId:
    if not isinstance(value, str) or not value:
        raise ValueError(f"invalid company id: {value!r}")
    return CompanyId(value)


class Rule(enum.Enum):
    ALL = "all"
    LIMITED = "limited"
    HIDE = "hide"


class Visibility(enum.Enum):
    UP = "up"
    DOWN = "down"
    WHOLE = "whole"
    NOT_APPLICABLE = "n/a"


@dataclass(frozen=True)
class AccessPolicy:
    """Per-(company, EPC) disclosure rule.

    ``visibility`` only refines ``Rule.LIMITED``; it must be
    ``NOT_APPLICABLE`` for ``ALL`` and ``HIDE``. An empty ``scope`` grants
    every attribute.
    """

    rule: Rule
    visibility: Visibility = Visibility.NOT_APPLICABLE
    scope: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "scope", frozenset(self.scope))
        limited = self.rule is Rule.LIMITED
        if limited == (self.visibility is Visibility.NOT_APPLICABLE):
            raise ValueError(
                f"visibility {self.visibility.value!r} is inconsistent with rule {self.rule.value!r}"
            )

    @classmethod
    def all(cls, scope: Iterable[str] = ()) -> AccessPolicy:
        return cls(Rule.ALL, Visibility.NOT_APPLICABLE, frozenset(scope))

    @classmethod
    def hide(cls) -> AccessPolicy:
        return cls(Rule.HIDE)

    @classmethod
    def limited(cls, visibility: Visibility = Visibility.WHOLE, scope: Iterable[str] = ()) -> AccessPolicy:
        return cls(Rule.LIMITED, visibility, frozenset(scope))


@dataclass(frozen=True)
class EventRecord:
    epc: EpcCode
    company: CompanyId
    event_time: int
    location: str
    business_step: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.epc or not self.company:
            raise ValueError("event record needs epc and company")
        object.__setattr__(self, "attributes", dict(self.attributes))

    def restricted_to(self, scope: frozenset[str]) -> EventRecord:
        """Copy keeping only attributes in ``scope`` (empty scope keeps all)."""
        if not scope:
            return self
        kept = {k: v for k, v in self.attributes.items() if k in scope}
        return EventRecord(self.epc, self.company, self.event_time, self.location, self.business_step, kept)


@dataclass(frozen=True)
class PublishRecord:
    epc: EpcCode
    company: CompanyId
    publish_time: int
    epcis_url: str
    policy: AccessPolicy

    def __post_init__(self):
        if not self.epc or not self.company or not self.epcis_url:
            raise ValueError("publish record needs epc, company and url")
        if not isinstance(self.publish_time, int) or self.publish_time < 0:
            raise ValueError(f"publish_time must be a non-negative int, got {self.publish_time!r}")


class PublishRegistry:
    """Which companies published which EPC, when, where and under what policy.

    One record per (epc, company); one URL per record. Lookups come back
    sorted by publish time.
    """

    def __init__(self, records: Iterable[PublishRecord] = (), user_company: Mapping[str, str] | None = None):
        self._by_epc: dict[EpcCode, dict[CompanyId, PublishRecord]] = {}
        self.user_company: dict[UserId, CompanyId] = {}
        for uid, cid in (user_company or {}).items():
            self.bind_user(uid, cid)
        for rec in records:
            self.publish(rec)

    def bind_user(self, user: str, company: str) -> None:
        self.user_company[check_user_id(user)] = check_company_id(company)

    def company_of(self, user: str) -> CompanyId | None:
        return self.user_company.get(user)

    def publish(self, rec: PublishRecord) -> PublishRegistry:
        bucket = self._by_epc.setdefault(rec.epc, {})
        for other in bucket.values():
            if other.company != rec.company and other.publish_time == rec.publish_time:
                raise TimestampCollision(
                    f"{rec.company} and {other.company} both published {rec.epc} at t={rec.publish_time}"
                )
        bucket[rec.company] = rec
        return self

    def lookup(self, epc: str) -> list[PublishRecord]:
        return sorted(self._by_epc.get(epc, {}).values(), key=lambda r: r.publish_time)

    def record(self, epc: str, company: str) -> PublishRecord | None:
        return self._by_epc.get(epc, {}).get(company)

    def epcs(self) -> list[EpcCode]:
        return sorted(self._by_epc)

    def __len__(self) -> int:
        return sum(len(b) for b in self._by_epc.values())

    def __iter__(self):
        for epc in self.epcs():
            yield from self.lookup(epc)


def registry_publish(registry: PublishRegistry, rec: PublishRecord) -> PublishRegistry:
    return registry.publish(rec)


def registry_lookup(registry: PublishRegistry, epc: str) -> list[PublishRecord]:
    return registry.lookup(epc)
