"""Scenario files: versioned JSON describing a registry, workload and run settings.

Validation errors point at the line of the offending JSON object.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
from pathlib import Path
from typing import Any

from .errors import ConfigInvalid
from .model import AccessPolicy, PublishRecord, PublishRegistry, Rule, Visibility, parse_epc
from .nodes import Attack, Model, ServiceTimes, events_from_mapping
from .simnet import Arrival, AttackSpec, Crypto, Latency, ScenarioConfig, UserSpec
from .tokens import ExpiryWindow

FORMAT_VERSION = 1


class _Obj(dict):
    """A decoded JSON object that remembers the line it started on."""

    line: int = 0


class _LineDecoder(json.JSONDecoder):
    def __init__(self):
        super().__init__()
        base = json.decoder.JSONObject

        def parse_object(s_and_end, *args, **kw):
            s, end = s_and_end
            obj, new_end = base(s_and_end, *args, **kw)
            out = _Obj(obj)
            out.line = s.count("\n", 0, end) + 1
            return out, new_end

        self.parse_object = parse_object
        self.scan_once = json.scanner.py_make_scanner(self)


def _line(obj) -> int | None:
    return getattr(obj, "line", None)


def _req(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigInvalid(f"missing required key {key!r}", _line(obj), path)
    return obj[key]


def _num(obj: dict, key: str, path: str, default=None, *, kind=float, minimum=None):
    raw = obj.get(key, default) if default is not None else _req(obj, key, path)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or (kind is int and not isinstance(raw, int)):
        raise ConfigInvalid(f"{key!r} must be {'an integer' if kind is int else 'a number'}", _line(obj), f"{path}.{key}")
    if minimum is not None and raw < minimum:
        raise ConfigInvalid(f"{key!r} must be >= {minimum}", _line(obj), f"{path}.{key}")
    return kind(raw)


def _enum(enum_cls, raw, obj, path, aliases: dict[str, Any] | None = None):
    table = {e.value: e for e in enum_cls}
    table.update(aliases or {})
    try:
        return table[str(raw).lower()]
    except KeyError:
        choices = ", ".join(sorted(table))
        raise ConfigInvalid(f"unknown value {raw!r} (expected one of: {choices})", _line(obj), path) from None


_VIS_ALIASES = {"upstream": Visibility.UP, "downstream": Visibility.DOWN, "wholestream": Visibility.WHOLE}
_MODEL_ALIASES = {"signepc": Model.SIGN_EPC, "secureepcds": Model.SECURE_EPCDS, "directoryopen": Model.DIRECTORY_OPEN}


def parse_policy(obj: dict, path: str = "policy") -> AccessPolicy:
    rule = _enum(Rule, _req(obj, "rule", path), obj, f"{path}.rule")
    vis_raw = obj.get("visibility")
    if rule is Rule.LIMITED:
        vis = _enum(Visibility, vis_raw or "whole", obj, f"{path}.visibility", _VIS_ALIASES)
    elif vis_raw not in (None, "n/a"):
        raise ConfigInvalid(f"visibility only applies to rule 'limited', not {rule.value!r}", _line(obj), f"{path}.visibility")
    else:
        vis = Visibility.NOT_APPLICABLE
    scope = obj.get("scope", [])
    if not isinstance(scope, list) or not all(isinstance(s, str) and s for s in scope):
        raise ConfigInvalid("scope must be a list of attribute names", _line(obj), f"{path}.scope")
    if len(set(scope)) != len(scope):
        raise ConfigInvalid("scope attribute names must be unique", _line(obj), f"{path}.scope")
    return AccessPolicy(rule, vis, frozenset(scope))


def policy_to_dict(p: AccessPolicy) -> dict:
    d: dict[str, Any] = {"rule": p.rule.value}
    if p.visibility is not Visibility.NOT_APPLICABLE:
        d["visibility"] = p.visibility.value
    d["scope"] = sorted(p.scope)
    return d


def _registry(doc: dict) -> PublishRegistry:
    reg = PublishRegistry()
    companies = doc.get("companies")
    for i, u in enumerate(doc.get("users", [])):
        path = f"users[{i}]"
        if not isinstance(u, dict):
            raise ConfigInvalid("user entry must be an object", _line(doc), path)
        company = u.get("company")
        if company is not None:
            if companies is not None and company not in companies:
                raise ConfigInvalid(f"unknown company {company!r}", _line(u), f"{path}.company")
            try:
                reg.bind_user(_req(u, "id", path), company)
            except ValueError as exc:
                raise ConfigInvalid(str(exc), _line(u), path) from None
    for i, p in enumerate(doc.get("publishes", [])):
        path = f"publishes[{i}]"
        if not isinstance(p, dict):
            raise ConfigInvalid("publish entry must be an object", _line(doc), path)
        company = _req(p, "company", path)
        if companies is not None and company not in companies:
            raise ConfigInvalid(f"unknown company {company!r}", _line(p), f"{path}.company")
        try:
            rec = PublishRecord(
                parse_epc(_req(p, "epc", path)),
                company,
                _num(p, "time", path, kind=int, minimum=0),
                _req(p, "url", path),
                parse_policy(_req(p, "policy", path), f"{path}.policy"),
            )
            reg.publish(rec)
        except ConfigInvalid:
            raise
        except Exception as exc:  # MalformedEpc, TimestampCollision, ValueError
            raise ConfigInvalid(f"{type(exc).__name__}: {exc}", _line(p), path) from None
    return reg


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("scenario must be a JSON object", 1)
    if doc.get("format") != FORMAT_VERSION:
        raise ConfigInvalid(f"unsupported format {doc.get('format')!r}; expected {FORMAT_VERSION}", _line(doc), "format")
    registry = _registry(doc)

    users = []
    for i, u in enumerate(doc.get("users", [])):
        users.append(UserSpec(u["id"], _num(u, "rate", f"users[{i}]", 0.0, minimum=0)))

    st_doc = doc.get("service_times", _Obj())
    known = set(ServiceTimes.__dataclass_fields__)
    for key in st_doc:
        if key not in known:
            raise ConfigInvalid(f"unknown service time {key!r}", _line(st_doc), f"service_times.{key}")
    service_times = ServiceTimes(**{k: _num(st_doc, k, "service_times", minimum=0) for k in st_doc})

    lat = doc.get("latency", _Obj())
    latency = Latency(_num(lat, "one_way", "latency", 0.010, minimum=0), _num(lat, "jitter", "latency", 0.0, minimum=0))

    attacks = []
    for i, a in enumerate(doc.get("attacks", [])):
        path = f"attacks[{i}]"
        attacks.append(
            AttackSpec(
                _num(a, "time", path, minimum=0),
                _enum(Attack, _req(a, "kind", path), a, f"{path}.kind"),
                _req(a, "attacker", path),
                _req(a, "victim", path),
                a.get("field", "userid"),
            )
        )

    events = None
    if "events" in doc:
        try:
            events = events_from_mapping([{**e, "epc": parse_epc(e["epc"])} for e in doc["events"]])
        except Exception as exc:
            raise ConfigInvalid(f"bad event record: {exc}", _line(doc), "events") from None

    weights = doc.get("epc_weights")
    if weights is not None:
        try:
            weights = {parse_epc(k): float(v) for k, v in weights.items()}
        except Exception as exc:
            raise ConfigInvalid(str(exc), _line(weights), "epc_weights") from None

    window = _num(doc, "window_seconds", "scenario", 86400, kind=int, minimum=1)
    cfg = ScenarioConfig(
        registry=registry,
        users=users,
        k=_num(doc, "k", "scenario", 1, kind=int, minimum=1),
        model=_enum(Model, doc.get("model", "sign_epc"), doc, "model", _MODEL_ALIASES),
        service_times=service_times,
        latency=latency,
        duration=_num(doc, "duration", "scenario", 60.0),
        seed=_num(doc, "seed", "scenario", 0, kind=int),
        arrival=_enum(Arrival, doc.get("arrival", "poisson"), doc, "arrival"),
        window=ExpiryWindow(window),
        start_time=_num(doc, "start_time", "scenario", 1_700_000_000, kind=int, minimum=0),
        epc_weights=weights,
        events=events,
        attacks=attacks,
        crypto=_enum(Crypto, doc.get("crypto", "modeled"), doc, "crypto"),
        key_bits=_num(doc, "key_bits", "scenario", 2048, kind=int, minimum=1024),
    )
    try:
        cfg.validate()
    except ConfigInvalid as exc:
        if exc.line is None:
            exc = ConfigInvalid(str(exc), _line(doc))
        raise exc from None
    return cfg


def loads_scenario(text: str) -> ScenarioConfig:
    try:
        doc = _LineDecoder().decode(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return scenario_from_dict(doc)


def load_scenario(path: str | Path) -> ScenarioConfig:
    return loads_scenario(Path(path).read_text())


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`scenario_from_dict` (events and weights included when set)."""
    reg = cfg.registry
    companies = sorted({r.company for r in reg} | set(reg.user_company.values()))
    doc: dict[str, Any] = {
        "format": FORMAT_VERSION,
        "model": cfg.model.value,
        "seed": cfg.seed,
        "k": cfg.k,
        "duration": cfg.duration,
        "arrival": cfg.arrival.value,
        "crypto": cfg.crypto.value,
        "key_bits": cfg.key_bits,
        "window_seconds": cfg.window.window_seconds,
        "start_time": cfg.start_time,
        "service_times": dict(cfg.service_times.__dict__),
        "latency": {"one_way": cfg.latency.one_way, "jitter": cfg.latency.jitter},
        "companies": companies,
        "users": [{"id": u.id, "company": reg.company_of(u.id), "rate": u.rate} for u in cfg.users],
        "publishes": [
            {"epc": r.epc, "company": r.company, "time": r.publish_time, "url": r.epcis_url, "policy": policy_to_dict(r.policy)}
            for r in reg
        ],
        "attacks": [
            {"time": a.time, "kind": a.kind.value, "attacker": a.attacker, "victim": a.victim, "field": a.field}
            for a in cfg.attacks
        ],
    }
    if cfg.epc_weights is not None:
        doc["epc_weights"] = dict(cfg.epc_weights)
    return doc
