"""In-process message pump: runs one user query through nodes without the simulator."""

from signepc.nodes import EPCDS_ID, DsResponse, EpcdsNode, EpcisNode, IsResponse, Model, NodeConfig, QueryIs
from signepc.pki import KeyRing
from signepc.simnet import default_events


def build(registry, model, signer=None, trusted=None, window=None):
    cfg = NodeConfig(model) if window is None else NodeConfig(model, window)
    epcds = EpcdsNode(registry, cfg, signer if model is Model.SIGN_EPC else None)
    events = default_events(registry)
    ring = KeyRing([trusted]) if trusted is not None else KeyRing()
    services = {}
    for rec in registry:
        services.setdefault(
            rec.epcis_url,
            EpcisNode(rec.company, rec.epcis_url, cfg, [e for e in events if e.company == rec.company], ring),
        )
    return epcds, services


def pump(epcds, service, query: QueryIs, now: int):
    """Deliver ``query`` to ``service``; relay any access checks. Returns (final payload, messages to EPCDS)."""
    to_epcds = 0
    pending = service.handle_query(query, now, "client")
    while True:
        msg = pending.pop(0)
        if msg.recipient == EPCDS_ID:
            to_epcds += 1
            pending.extend(service.receive(epcds.receive(msg, now)[0], now))
            continue
        return msg.payload, to_epcds


def granted_triples(registry, model, users, now, signer=None, trusted=None):
    epcds, services = build(registry, model, signer, trusted)
    out = set()
    for user in users:
        for epc in registry.epcs():
            resp = epcds.handle_query(user, epc, now)
            if not isinstance(resp, DsResponse):
                continue
            for g in resp.grants:
                final, _ = pump(epcds, services[g.epcis_url], QueryIs(user, epc, g.rights, g.tag), now)
                if isinstance(final, IsResponse):
                    out.add((user, epc, g.company))
    return out
