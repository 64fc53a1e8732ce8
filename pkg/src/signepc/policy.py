"""Grant decisions from All/Limited/Hide rules and stream visibility."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import OwnerNotPublished
from .model import AccessPolicy, CompanyId, PublishRegistry, Rule, Visibility

__all__ = [
    "AccessPolicy",
    "GrantDecision",
    "Reason",
    "Rule",
    "Visibility",
    "downstream_set",
    "evaluate",
    "upstream_set",
    "whole_stream_set",
]


class Reason(enum.Enum):
    RULE_ALL = "RuleAll"
    RULE_LIMITED_MEMBER = "RuleLimitedMember"
    VISIBILITY_MATCH = "VisibilityMatch"
    DENIED_HIDE = "DeniedHide"
    DENIED_NOT_PARTNER = "DeniedNotPartner"
    DENIED_UNKNOWN_USER = "DeniedUnknownUser"

    @property
    def grants(self) -> bool:
        return self in (Reason.RULE_ALL, Reason.RULE_LIMITED_MEMBER, Reason.VISIBILITY_MATCH)


@dataclass(frozen=True)
class GrantDecision:
    granted: bool
    scope: frozenset[str]
    reason: Reason

    def __post_init__(self):
        if self.granted != self.reason.grants:
            raise ValueError(f"granted={self.granted} contradicts reason {self.reason.value}")
        if not self.granted and self.scope:
            raise ValueError("a denial carries no scope")

    @classmethod
    def deny(cls, reason: Reason) -> GrantDecision:
        return cls(False, frozenset(), reason)


def _owner_time(registry: PublishRegistry, epc: str, owner: str) -> int:
    rec = registry.record(epc, owner)
    if rec is None:
        raise OwnerNotPublished(f"{owner} has not published {epc}")
    return rec.publish_time


def upstream_set(registry: PublishRegistry, epc: str, owner: str) -> set[CompanyId]:
    """Companies that published ``epc`` strictly before ``owner``."""
    t = _owner_time(registry, epc, owner)
    return {r.company for r in registry.lookup(epc) if r.publish_time < t}


def downstream_set(registry: PublishRegistry, epc: str, owner: str) -> set[CompanyId]:
    t = _owner_time(registry, epc, owner)
    return {r.company for r in registry.lookup(epc) if r.publish_time > t}


def whole_stream_set(registry: PublishRegistry, epc: str, owner: str) -> set[CompanyId]:
    _owner_time(registry, epc, owner)
    return {r.company for r in registry.lookup(epc) if r.company != owner}


_STREAM = {
    Visibility.UP: upstream_set,
    Visibility.DOWN: downstream_set,
    Visibility.WHOLE: whole_stream_set,
}


def evaluate(registry: PublishRegistry, policy: AccessPolicy, owner: str, requester: str, epc: str) -> GrantDecision:
    """Decide whether ``requester`` may read ``owner``'s events for ``epc``.

    Under ``Limited`` the requester's own company is always a member; other
    companies must appear in the stream set selected by ``policy.visibility``.
    """
    _owner_time(registry, epc, owner)
    if policy.rule is Rule.ALL:
        return GrantDecision(True, policy.scope, Reason.RULE_ALL)
    if policy.rule is Rule.HIDE:
        return GrantDecision.deny(Reason.DENIED_HIDE)

    company = registry.company_of(requester)
    if company is None:
        return GrantDecision.deny(Reason.DENIED_UNKNOWN_USER)
    member_reason = Reason.RULE_LIMITED_MEMBER if policy.visibility is Visibility.WHOLE else Reason.VISIBILITY_MATCH
    if company == owner:
        return GrantDecision(True, policy.scope, Reason.RULE_LIMITED_MEMBER)
    if company in _STREAM[policy.visibility](registry, epc, owner):
        return GrantDecision(True, policy.scope, member_reason)
    return GrantDecision.deny(Reason.DENIED_NOT_PARTNER)
