"""``epcsign-sim`` command line.

Exit codes: 0 success, 1 I/O or environment failure, 2 usage or
configuration error, 3 token rejected (token-verify), 4 security regression
(attack-suite).
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import enum
import json
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .attack_suite import run_attack_suite
from .errors import ConfigInvalid, MalformedEpc, WeakKeyRequested
from .model import EventRecord, check_user_id, parse_epc
from .nodes import EpcdsNode, EpcisNode, Model, ModeledKey, NodeConfig, QueryIs
from .pki import KeyPair, KeyRing, KeyStatus, VerifyKey, check_key_expiry, generate_keypair
from .scenario import load_scenario
from .simnet import Crypto, comparison_csv, compare_models, default_events, real_keypair, run_scenario
from .tokens import AccessRight, ExpiryWindow, Token, check_token, issue_token

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_REJECT, EXIT_REGRESSION = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bytes, bytearray)):
        return base64.b64encode(obj).decode()
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(x) for x in obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(x) for x in obj]
    return obj


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _read_json(path: str) -> dict:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno}: {exc.msg}", EXIT_USAGE) from None


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None


def _now(value: int | None) -> int:
    return int(time.time()) if value is None else value


def _scope(values: Sequence[str] | None) -> frozenset[str]:
    out: set[str] = set()
    for v in values or ():
        out.update(s.strip() for s in v.split(",") if s.strip())
    return frozenset(out)


def _load_verify_key(path: str) -> VerifyKey:
    doc = _read_json(path)
    bundle = doc.get("public", doc)
    try:
        return VerifyKey.from_bundle(bundle)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path}: not a public-key bundle ({exc})", EXIT_USAGE) from None


def _load_keypair(path: str) -> KeyPair:
    doc = _read_json(path)
    record = doc.get("private", doc)
    try:
        return KeyPair.from_private_record(record)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path}: not a private-key record ({exc})", EXIT_USAGE) from None


def _scenario(path: str, seed: int | None = None):
    try:
        cfg = load_scenario(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except ConfigInvalid as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None
    if seed is not None:
        cfg = cfg.with_(seed=seed)
    return cfg


# --- subcommands --------------------------------------------------------------------


def cmd_keygen(args) -> int:
    try:
        kp = generate_keypair(args.bits, valid_until=args.valid_until, rng_seed=args.seed, allow_weak=args.allow_weak)
    except WeakKeyRequested as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    bundle = kp.public.to_bundle()
    if args.out is None:
        _write(_dump({"public": bundle, "private": kp.to_private_record()}), None)
    else:
        _write(_dump(bundle), f"{args.out}.pub.json")
        _write(_dump(kp.to_private_record()), f"{args.out}.key.json")
        print(f"wrote {args.out}.pub.json and {args.out}.key.json (key_id {kp.key_id})", file=sys.stderr)
    return EXIT_OK


def _rights(args) -> AccessRight:
    try:
        return AccessRight(check_user_id(args.userid), parse_epc(args.epc), args.url, _scope(args.scope))
    except (MalformedEpc, ValueError) as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def cmd_token_sign(args) -> int:
    kp = _load_keypair(args.key)
    try:
        window = ExpiryWindow(args.window)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    tok = issue_token(kp.private, _rights(args), _now(args.now), window)
    _write(_dump(tok.to_wire()), args.out)
    return EXIT_OK


def cmd_token_verify(args) -> int:
    key = _load_verify_key(args.pub)
    try:
        tok = Token.from_wire(_read_json(args.token))
        window = ExpiryWindow(args.window)
    except (KeyError, ValueError) as exc:
        raise CliError(f"malformed token: {exc}", EXIT_USAGE) from None
    if args.scope is not None:
        tok = tok.with_rights(scope=_scope(args.scope))
    requester = args.userid or tok.rights.userid
    now = _now(args.now)
    if check_key_expiry(key, now) is KeyStatus.EXPIRED:
        print("REJECT SignerKeyExpired")
        return EXIT_REJECT
    verdict = check_token(requester, tok.rights, tok.tag, now, window, key)
    print(verdict)
    return EXIT_OK if verdict else EXIT_REJECT


def cmd_run_sim(args) -> int:
    cfg = _scenario(args.scenario, args.seed)
    report = run_scenario(cfg)
    _write(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _scenario(args.scenario, args.seed)
    try:
        ks = [int(k) for k in args.k.split(",") if k]
    except ValueError:
        raise CliError(f"--k must be comma-separated integers, got {args.k!r}", EXIT_USAGE) from None
    if not ks or min(ks) < 1:
        raise CliError("--k values must be >= 1", EXIT_USAGE)
    try:
        rows = compare_models(cfg, ks)
    except ConfigInvalid as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    _write(comparison_csv(rows) if args.format == "csv" else _dump(rows), args.out)
    return EXIT_OK


def cmd_attack_suite(args) -> int:
    cfg = _scenario(args.scenario)
    if cfg.model is not Model.SIGN_EPC:
        raise CliError("attack-suite needs a scenario with model sign_epc", EXIT_USAGE)
    verifier = _load_verify_key(args.verifier_key) if args.verifier_key else None
    if args.trials == 0:
        print("warning: --trials 0, nothing to check (vacuous pass)", file=sys.stderr)
    try:
        result = run_attack_suite(cfg, args.trials, args.seed, verifier)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    for line in result.lines():
        print(line)
    return EXIT_OK if result.passed else EXIT_REGRESSION


def cmd_node_eval(args) -> int:
    cfg = _scenario(args.scenario)
    model = Model(args.model) if args.model else cfg.model
    node_cfg = NodeConfig(model, cfg.window, cfg.service_times)
    if cfg.crypto is Crypto.REAL:
        kp = real_keypair(cfg.key_bits, cfg.seed)
        signer, trusted = kp.private, kp.public
    else:
        signer = trusted = ModeledKey.from_seed(cfg.seed)
    epcds = EpcdsNode(cfg.registry, node_cfg, signer if model is Model.SIGN_EPC else None)
    now = _now(args.now)
    try:
        epc = parse_epc(args.epc)
    except MalformedEpc as exc:
        raise CliError(str(exc), EXIT_USAGE) from None

    if args.role == "epcds":
        out: Any = epcds.handle_query(args.user, epc, now)
        _write(_dump({"kind": type(out).__name__, "payload": jsonable(out)}), None)
        return EXIT_OK

    rec = cfg.registry.record(epc, args.company) if args.company else None
    if rec is None:
        raise CliError("--company must name a publisher of --epc for role epcis", EXIT_USAGE)
    events: list[EventRecord] = cfg.events if cfg.events is not None else default_events(cfg.registry)
    node = EpcisNode(rec.company, rec.epcis_url, node_cfg, [e for e in events if e.company == rec.company], KeyRing([trusted]))
    rights = tag = None
    if args.token:
        tok = Token.from_wire(_read_json(args.token))
        rights, tag = tok.rights, tok.tag
    trace = []
    pending = node.handle_query(QueryIs(args.user, epc, rights, tag), now, "client")
    while pending:
        msg = pending.pop(0)
        trace.append({"kind": msg.kind.value, "from": msg.sender, "to": msg.recipient, "payload": jsonable(msg.payload)})
        if msg.recipient == epcds.node_id:
            (reply,) = epcds.receive(msg, now)
            pending.insert(0, reply)
        elif msg.sender == epcds.node_id:
            pending[:0] = node.receive(msg, now)
    _write(_dump(trace), None)
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epcsign-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate a discovery-service RSA key pair")
    k.add_argument("--bits", type=int, default=2048)
    k.add_argument("--valid-until", type=int, default=2**62)
    k.add_argument("--seed", type=int, default=None)
    k.add_argument("--allow-weak", action="store_true", help="permit 1024-bit keys (tests only)")
    k.add_argument("--out", default=None, help="path prefix; writes PREFIX.pub.json and PREFIX.key.json")
    k.set_defaults(func=cmd_keygen)

    def token_fields(sp):
        sp.add_argument("--now", type=int, default=None, help="UTC epoch seconds (default: wall clock)")
        sp.add_argument("--window", type=int, default=86400, help="expiry window in seconds")

    s = sub.add_parser("token-sign", help="issue a signed capability token")
    s.add_argument("--key", required=True)
    s.add_argument("--userid", required=True)
    s.add_argument("--epc", required=True)
    s.add_argument("--url", required=True)
    s.add_argument("--scope", action="append", help="attribute names, comma-separated or repeated")
    s.add_argument("--out", default=None)
    token_fields(s)
    s.set_defaults(func=cmd_token_sign)

    v = sub.add_parser("token-verify", help="verify a token as an information service would")
    v.add_argument("--pub", required=True)
    v.add_argument("--token", required=True, help="token JSON file, or - for stdin")
    v.add_argument("--userid", default=None, help="requester id (default: the token's userid)")
    v.add_argument("--scope", action="append", default=None, help="present a different scope than the token's")
    token_fields(v)
    v.set_defaults(func=cmd_token_verify)

    r = sub.add_parser("run-sim", help="run one scenario and emit its report")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run_sim)

    c = sub.add_parser("compare", help="sweep k for both access-control models")
    c.add_argument("--scenario", required=True)
    c.add_argument("--k", default="1,5,25")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--format", choices=("json", "csv"), default="csv")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("attack-suite", help="randomized tamper/replay/expiry/forgery checks")
    a.add_argument("--scenario", required=True)
    a.add_argument("--trials", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--verifier-key", default=None, help="public key the information services trust instead")
    a.set_defaults(func=cmd_attack_suite)

    n = sub.add_parser("node-eval", help="invoke one node handler and print the messages")
    n.add_argument("--scenario", required=True)
    n.add_argument("--role", choices=("epcds", "epcis"), required=True)
    n.add_argument("--user", required=True)
    n.add_argument("--epc", required=True)
    n.add_argument("--company", default=None, help="information-service owner (role epcis)")
    n.add_argument("--token", default=None, help="token JSON presented to the information service")
    n.add_argument("--model", choices=[m.value for m in Model], default=None)
    n.add_argument("--now", type=int, default=None)
    n.set_defaults(func=cmd_node_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
