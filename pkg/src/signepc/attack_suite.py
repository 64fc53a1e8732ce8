"""Randomized attack suite against a SignEpc deployment built from a scenario."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

from .nodes import (
    TAMPER_FIELDS,
    Attack,
    DsResponse,
    EpcdsNode,
    EpcisNode,
    Model,
    ModeledKey,
    NodeConfig,
    QueryIs,
    attacker_action,
)
from .pki import KeyRing, VerifyKey
from .simnet import Crypto, ScenarioConfig, real_keypair, default_events


@dataclass
class SuiteResult:
    trials: int
    honest_accepted: int = 0
    honest_rejected: Counter = field(default_factory=Counter)
    rejections: dict[str, Counter] = field(default_factory=lambda: {a.value: Counter() for a in Attack})
    accepted_attacks: Counter = field(default_factory=Counter)

    @property
    def passed(self) -> bool:
        return self.honest_accepted == self.trials and not self.accepted_attacks and not self.honest_rejected

    def lines(self) -> list[str]:
        out = [f"honest controls: {self.honest_accepted}/{self.trials} accepted"]
        for reason, n in sorted(self.honest_rejected.items()):
            out.append(f"  honest rejected {reason}: {n}")
        for kind, reasons in self.rejections.items():
            total = sum(reasons.values())
            detail = ", ".join(f"{r}={n}" for r, n in sorted(reasons.items())) or "-"
            out.append(f"{kind}: {total} rejected ({detail}), {self.accepted_attacks[kind]} accepted")
        out.append("PASS" if self.passed else "FAIL")
        return out


def run_attack_suite(cfg: ScenarioConfig, trials: int, seed: int, verifier: VerifyKey | None = None) -> SuiteResult:
    """Capture ``trials`` honest discovery responses and attack each one four ways.

    ``verifier`` overrides the public key the information services trust
    (a wrong key makes every honest control fail).
    """
    if cfg.model is not Model.SIGN_EPC:
        raise ValueError("the attack suite needs a sign_epc scenario")
    rng = random.Random(seed)
    node_cfg = NodeConfig(Model.SIGN_EPC, cfg.window, cfg.service_times)
    if cfg.crypto is Crypto.REAL:
        kp = real_keypair(cfg.key_bits, cfg.seed)
        signer, trusted = kp.private, kp.public
        forge = real_keypair(cfg.key_bits, cfg.seed + 1).private
    else:
        signer = trusted = ModeledKey.from_seed(cfg.seed)
        forge = ModeledKey.from_seed(cfg.seed + 1)
    if verifier is not None:
        trusted = verifier
    epcds = EpcdsNode(cfg.registry, node_cfg, signer)
    events = cfg.events if cfg.events is not None else default_events(cfg.registry)
    services = {
        rec.epcis_url: EpcisNode(rec.company, rec.epcis_url, node_cfg, [e for e in events if e.company == rec.company], KeyRing([trusted]))
        for rec in cfg.registry
    }

    users = sorted(cfg.registry.user_company)
    pairs = [(u, e) for u in users for e in cfg.registry.epcs()]
    grantable = [(u, e) for u, e in pairs if any(d.granted for _, d in epcds.decide(u, e))]
    result = SuiteResult(trials)
    if trials <= 0:
        return result
    if not grantable:
        raise ValueError("no (user, epc) pair in the scenario is granted anything")

    for _ in range(trials):
        user, epc = rng.choice(grantable)
        now = cfg.start_time + rng.randrange(0, 30 * 86400)
        captured = epcds.handle_query(user, epc, now)
        assert isinstance(captured, DsResponse)
        gi = rng.randrange(len(captured.grants))
        g = captured.grants[gi]
        node = services[g.epcis_url]
        ok, reason = node.verify(QueryIs(user, epc, g.rights, g.tag), now)
        if ok:
            result.honest_accepted += 1
        else:
            result.honest_rejected[reason] += 1

        others = [u for u in users if u != user] or ["attacker"]
        attacker = rng.choice(others)
        for kind in Attack:
            msg = attacker_action(
                kind,
                captured,
                attacker,
                now,
                window=cfg.window,
                forge_key=forge,
                grant_index=gi,
                field=rng.choice(TAMPER_FIELDS),
                rng=rng,
            )
            ok, reason = node.verify(msg.payload, int(msg.sent_at))
            if ok:
                result.accepted_attacks[kind.value] += 1
            else:
                result.rejections[kind.value][reason] += 1
    return result
