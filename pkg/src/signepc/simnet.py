"""Discrete-event simulation of discovery/information-service traffic.

The discovery service is a single FIFO server with an unbounded buffer;
information services are uncontended. A transaction is one discovery query
followed by ``k`` information-service queries spread round-robin over the
granted services. Everything is driven by seeded, per-purpose RNG streams so
that a run is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Iterable, Sequence

from .errors import ConfigInvalid
from .model import EventRecord, PublishRegistry
from .nodes import (
    EPCDS_ID,
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
    ServiceTimes,
    attacker_action,
    message,
)
from .pki import KeyRing, generate_keypair
from .tokens import ExpiryWindow


class Arrival(enum.Enum):
    POISSON = "poisson"
    FIXED = "fixed"


class Crypto(enum.Enum):
    MODELED = "modeled"
    REAL = "real"


@dataclass(frozen=True)
class UserSpec:
    id: str
    rate: float  # transactions per simulated second

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"user {self.id}: rate must be >= 0")


@dataclass(frozen=True)
class Latency:
    one_way: float = 0.010
    jitter: float = 0.0  # uniform extra delay in [0, jitter) per message

    def __post_init__(self):
        if self.one_way < 0 or self.jitter < 0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class AttackSpec:
    time: float
    kind: Attack
    attacker: str
    victim: str
    field: str = "userid"


@dataclass
class ScenarioConfig:
    registry: PublishRegistry
    users: list[UserSpec]
    k: int = 1
    model: Model = Model.SIGN_EPC
    service_times: ServiceTimes = field(default_factory=ServiceTimes)
    latency: Latency = field(default_factory=Latency)
    duration: float = 60.0
    seed: int = 0
    arrival: Arrival = Arrival.POISSON
    window: ExpiryWindow = field(default_factory=ExpiryWindow)
    start_time: int = 1_700_000_000
    epc_weights: dict[str, float] | None = None
    events: list[EventRecord] | None = None
    attacks: list[AttackSpec] = field(default_factory=list)
    crypto: Crypto = Crypto.MODELED
    key_bits: int = 2048

    def validate(self) -> None:
        if self.duration <= 0:
            raise ConfigInvalid("duration must be > 0", path="duration")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigInvalid("k must be an integer >= 1", path="k")
        if self.start_time < 0:
            raise ConfigInvalid("start_time must be >= 0", path="start_time")
        if any(u.rate < 0 for u in self.users):
            raise ConfigInvalid("user rates must be >= 0", path="users")
        if len({u.id for u in self.users}) != len(self.users):
            raise ConfigInvalid("duplicate user id", path="users")
        epcs = set(self.registry.epcs())
        weights = self.epc_weights or {}
        for epc, w in weights.items():
            if epc not in epcs:
                raise ConfigInvalid(f"weighted EPC {epc} was never published", path="epc_weights")
            if w < 0:
                raise ConfigInvalid("EPC weights must be >= 0", path="epc_weights")
        if any(u.rate > 0 for u in self.users) and not epcs:
            raise ConfigInvalid("users generate queries but nothing is published", path="publishes")
        if self.epc_weights is not None and any(u.rate > 0 for u in self.users) and sum(weights.values()) <= 0:
            raise ConfigInvalid("EPC weights sum to zero", path="epc_weights")
        urls: dict[str, str] = {}
        for rec in self.registry:
            if urls.setdefault(rec.epcis_url, rec.company) != rec.company:
                raise ConfigInvalid(f"URL {rec.epcis_url} is claimed by two companies", path="publishes")

    def with_(self, **changes) -> ScenarioConfig:
        return replace(self, **changes)


# --- report --------------------------------------------------------------------


def _percentile(xs: Sequence[float], q: float) -> float:
    if not xs:
        return 0.0
    s = sorted(xs)
    idx = max(0, math.ceil(q * len(s)) - 1)
    return s[idx]


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


@dataclass
class SimReport:
    model: str
    k: int
    seed: int
    duration: float
    virtual_time: float = 0.0
    messages_sent: dict[str, dict[str, int]] = field(default_factory=dict)
    messages_inbound: dict[str, dict[str, int]] = field(default_factory=dict)
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    transactions_started: int = 0
    transactions_completed: int = 0
    transactions_denied: int = 0
    e2e_latency: list[float] = field(default_factory=list)
    authz_latency: list[float] = field(default_factory=list)
    issuance_latency: list[float] = field(default_factory=list)
    epcds_queue: list[tuple[float, int]] = field(default_factory=list)
    epcds_jobs: int = 0
    epcds_demand: float = 0.0
    epcds_sojourn_total: float = 0.0
    verdicts: dict[str, int] = field(default_factory=dict)
    crypto_ops: dict[str, int] = field(default_factory=dict)
    attacks: dict[str, dict[str, int]] = field(default_factory=dict)

    # derived metrics -----------------------------------------------------------

    def inbound_total(self, node: str = EPCDS_ID) -> int:
        return sum(self.messages_inbound.get(node, {}).values())

    @property
    def epcds_utilization(self) -> float:
        """Offered load: total discovery-service demand of the run's transactions per second of arrivals.

        Above 1 the server cannot keep up and its queue grows without bound.
        """
        return self.epcds_demand / self.duration

    @property
    def accepted(self) -> int:
        return self.verdicts.get("Accept", 0)

    @property
    def rejected(self) -> int:
        return sum(v for k, v in self.verdicts.items() if k != "Accept")

    def queue_mean(self, t0: float, t1: float) -> float:
        """Time-averaged number of jobs at the discovery service over [t0, t1)."""
        if t1 <= t0:
            return 0.0
        area, level, last = 0.0, 0, t0
        for t, n in self.epcds_queue:
            if t > t1:
                break
            if t > t0:
                area += level * (t - last)
                last = t
            level = n
        area += level * (t1 - last)
        return area / (t1 - t0)

    def queue_growth(self, fraction: float = 0.1) -> tuple[float, float]:
        """Mean queue over the first and the last ``fraction`` of the arrival period."""
        span = self.duration * fraction
        return self.queue_mean(0.0, span), self.queue_mean(self.duration - span, self.duration)

    def summary(self) -> dict[str, Any]:
        first, last = self.queue_growth()
        end = self.virtual_time or self.duration
        return {
            "model": self.model,
            "k": self.k,
            "transactions_completed": self.transactions_completed,
            "epcds_inbound": self.inbound_total(),
            "epcds_utilization": self.epcds_utilization,
            "epcds_mean_queue": self.queue_mean(0.0, end),
            "epcds_queue_first_decile": first,
            "epcds_queue_last_decile": last,
            "authz_latency_mean": _mean(self.authz_latency),
            "authz_latency_p95": _percentile(self.authz_latency, 0.95),
            "issuance_latency_mean": _mean(self.issuance_latency),
            "issuance_latency_p95": _percentile(self.issuance_latency, 0.95),
            "e2e_latency_mean": _mean(self.e2e_latency),
        }

    # serialization ----------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["epcds_queue"] = [list(p) for p in self.epcds_queue]
        d["summary"] = self.summary()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "node", "key", "value"])
        for name, s in sorted(self.summary().items()):
            w.writerow(["summary", "", name, s])
        for direction, table in (("sent", self.messages_sent), ("inbound", self.messages_inbound)):
            for node in sorted(table):
                for kind in sorted(table[node]):
                    w.writerow([f"messages_{direction}", node, kind, table[node][kind]])
        for name in ("delivered", "dropped", "in_flight", "transactions_started", "transactions_completed", "transactions_denied"):
            w.writerow([name, "", "", getattr(self, name)])
        for key in sorted(self.verdicts):
            w.writerow(["verdicts", "", key, self.verdicts[key]])
        for key in sorted(self.crypto_ops):
            w.writerow(["crypto_ops", "", key, self.crypto_ops[key]])
        for kind in sorted(self.attacks):
            for outcome in sorted(self.attacks[kind]):
                w.writerow(["attacks", kind, outcome, self.attacks[kind][outcome]])
        return buf.getvalue()


# --- simulation ------------------------------------------------------------------


@lru_cache(maxsize=8)
def real_keypair(bits: int, seed: int):
    return generate_keypair(bits, valid_until=2**62, rng_seed=seed, allow_weak=bits < 2048)


def default_events(registry: PublishRegistry) -> list[EventRecord]:
    return [
        EventRecord(
            rec.epc,
            rec.company,
            rec.publish_time,
            f"{rec.company}-site",
            "receiving",
            {"location": f"{rec.company}-dock", "warehouse": f"{rec.company}-wh1", "quality": "pass"},
        )
        for rec in registry
    ]


@dataclass
class _Txn:
    user: str
    start: float
    outstanding: int = 0


@dataclass
class _Job:
    msg: Message
    arrived: float


class Simulation:
    """One scenario run. ``run()`` executes to quiescence; ``snapshot()`` reads counters at any point."""

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable, tuple]] = []
        self._seq = 0
        self._rng_arrivals = random.Random(f"{cfg.seed}:arrivals")
        self._rng_epc = random.Random(f"{cfg.seed}:epc")
        self._rng_latency = random.Random(f"{cfg.seed}:latency")
        self._rng_attack = random.Random(f"{cfg.seed}:attack")

        node_cfg = NodeConfig(cfg.model, cfg.window, cfg.service_times)
        if cfg.crypto is Crypto.REAL:
            signer = real_keypair(cfg.key_bits, cfg.seed).private
            verify_key = real_keypair(cfg.key_bits, cfg.seed).public
            self._forge_key = real_keypair(cfg.key_bits, cfg.seed + 1).private
        else:
            signer = verify_key = ModeledKey.from_seed(cfg.seed)
            self._forge_key = ModeledKey.from_seed(cfg.seed + 1)
        self.epcds = EpcdsNode(cfg.registry, node_cfg, signer if cfg.model is Model.SIGN_EPC else None)
        events = cfg.events if cfg.events is not None else default_events(cfg.registry)
        self.epcis: dict[str, EpcisNode] = {}
        for rec in cfg.registry:
            if rec.epcis_url not in self.epcis:
                own = [e for e in events if e.company == rec.company]
                self.epcis[rec.epcis_url] = EpcisNode(rec.company, rec.epcis_url, node_cfg, own, KeyRing([verify_key]))

        self._epcs = cfg.registry.epcs()
        weights = cfg.epc_weights or {}
        self._weights = [weights.get(e, 0.0) for e in self._epcs] if cfg.epc_weights else None

        self.report = SimReport(cfg.model.value, cfg.k, cfg.seed, cfg.duration)
        self.report.epcds_queue.append((0.0, 0))
        self._sent: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        self._inbound: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        self._verdicts: dict[str, int] = defaultdict(int)
        self._crypto: dict[str, int] = defaultdict(int)
        self._attacks: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))

        self._epcds_queue: list[_Job] = []
        self._epcds_busy = False
        self._txns: dict[int, _Txn] = {}
        self._next_txn = 0
        self._last_capture: dict[str, DsResponse] = {}
        self._attack_refs: dict[int, str] = {}
        self._authz_started: dict[tuple[str, int], float] = {}

        for user in cfg.users:
            self._schedule_arrivals(user)
        for spec in cfg.attacks:
            self._at(spec.time, self._launch_attack, spec)

    # event plumbing -----------------------------------------------------------------

    def _at(self, t: float, fn: Callable, *args) -> None:
        if t < self.now:
            raise RuntimeError("event scheduled in the past")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def epoch(self) -> int:
        return self.cfg.start_time + int(math.floor(self.now))

    def _schedule_arrivals(self, user: UserSpec) -> None:
        if user.rate <= 0:
            return
        if self.cfg.arrival is Arrival.FIXED:
            n = math.ceil(self.cfg.duration * user.rate - 1e-9)
            for i in range(n):
                self._at(i / user.rate, self._start_txn, user.id)
            return
        t = self._rng_arrivals.expovariate(user.rate)
        while t < self.cfg.duration:
            self._at(t, self._start_txn, user.id)
            t += self._rng_arrivals.expovariate(user.rate)

    def _send(self, msg: Message, at: float | None = None) -> None:
        t = self.now if at is None else at
        self._sent[msg.sender][msg.kind.value] += 1
        delay = self.cfg.latency.one_way
        if self.cfg.latency.jitter:
            delay += self._rng_latency.random() * self.cfg.latency.jitter
        self.report.in_flight += 1
        self._at(t + delay, self._deliver, msg)

    def _deliver(self, msg: Message) -> None:
        self.report.in_flight -= 1
        r = msg.recipient
        if r == EPCDS_ID:
            handler = self._epcds_arrive
        elif r in self.epcis:
            handler = self._epcis_arrive
        elif r.startswith("user:"):
            handler = self._client_receive
        else:
            self.report.dropped += 1
            return
        self.report.delivered += 1
        self._inbound[r][msg.kind.value] += 1
        handler(msg)

    # clients --------------------------------------------------------------------------

    def _start_txn(self, user: str) -> None:
        if self._weights is not None:
            epc = self._rng_epc.choices(self._epcs, weights=self._weights)[0]
        else:
            epc = self._epcs[self._rng_epc.randrange(len(self._epcs))]
        self._next_txn += 1
        self._txns[self._next_txn] = _Txn(user, self.now)
        self.report.transactions_started += 1
        self._send(message(f"user:{user}#{self._next_txn}", EPCDS_ID, QueryDs(user, epc)))

    def _client_receive(self, msg: Message) -> None:
        addr = msg.recipient
        if addr.startswith("user:attacker:"):
            self._attack_result(msg)
            return
        txn_id = int(addr.rsplit("#", 1)[1])
        txn = self._txns[txn_id]
        p = msg.payload
        if isinstance(p, DsResponse):
            if any(g.tag is not None for g in p.grants):
                self._last_capture[txn.user] = p
            grants = p.grants
            txn.outstanding = self.cfg.k
            for i in range(self.cfg.k):
                g = grants[i % len(grants)]
                q = QueryIs(txn.user, p.epc, g.rights, g.tag, ref=i)
                self._send(message(addr, g.epcis_url, q))
        elif isinstance(p, ErrorResponse) and msg.sender == EPCDS_ID:
            self.report.transactions_denied += 1
            self._finish(txn_id)
        else:
            txn.outstanding -= 1
            if txn.outstanding == 0:
                self._finish(txn_id)

    def _finish(self, txn_id: int) -> None:
        txn = self._txns.pop(txn_id)
        self.report.transactions_completed += 1
        self.report.e2e_latency.append(self.now - txn.start)

    # discovery service: single FIFO server --------------------------------------------

    def _record_queue(self) -> None:
        n = len(self._epcds_queue) + (1 if self._epcds_busy else 0)
        self.report.epcds_queue.append((self.now, n))

    def _epcds_arrive(self, msg: Message) -> None:
        self._epcds_queue.append(_Job(msg, self.now))
        self.report.epcds_jobs += 1
        if not self._epcds_busy:
            self._epcds_start()
        else:
            self._record_queue()

    def _epcds_start(self) -> None:
        job = self._epcds_queue.pop(0)
        self._epcds_busy = True
        self._record_queue()
        st = self.cfg.service_times
        p = job.msg.payload
        if isinstance(p, QueryDs):
            related = len(self.cfg.registry.lookup(p.epc))
            (out,) = self.epcds.receive(job.msg, self.epoch())
            grants = len(out.payload.grants) if isinstance(out.payload, DsResponse) else 0
            if self.cfg.model is Model.SIGN_EPC:
                self._crypto["sign"] += grants
            service = st.ds_query(self.cfg.model, related, grants)
        else:
            (out,) = self.epcds.receive(job.msg, self.epoch())
            service = st.access_check()
        self.report.epcds_demand += service
        self._at(self.now + service, self._epcds_done, job, out)

    def _epcds_done(self, job: _Job, out: Message) -> None:
        self._epcds_busy = False
        self.report.epcds_sojourn_total += self.now - job.arrived
        if job.msg.kind is Kind.USER_QUERY_DS:
            self.report.issuance_latency.append(self.now - job.arrived)
        self._send(out)
        if self._epcds_queue:
            self._epcds_start()
        else:
            self._record_queue()

    # information services: infinite server --------------------------------------------

    def _epcis_arrive(self, msg: Message) -> None:
        node = self.epcis[msg.recipient]
        outs = node.receive(msg, self.epoch())
        if isinstance(msg.payload, QueryIs):
            if self.cfg.model is Model.SIGN_EPC:
                self._crypto["verify"] += 1
            service = self.cfg.service_times.is_query(self.cfg.model)
            self._at(self.now + service, self._epcis_done, msg.recipient, outs, self.now)
        else:
            started = self._authz_started.pop((msg.recipient, msg.payload.ref))
            self._epcis_done(msg.recipient, outs, started)

    def _epcis_done(self, url: str, outs: list[Message], started: float) -> None:
        for out in outs:
            p = out.payload
            if out.recipient == EPCDS_ID:
                self._authz_started[(url, p.ref)] = started
            else:
                self._verdicts["Accept" if isinstance(p, IsResponse) else (p.reason or p.error)] += 1
                self.report.authz_latency.append(self.now - started)
            self._send(out)

    # attacks ---------------------------------------------------------------------------

    def _launch_attack(self, spec: AttackSpec) -> None:
        captured = self._last_capture.get(spec.victim)
        if captured is None:
            self._attacks[spec.kind.value]["NoCapture"] += 1
            return
        sender = f"user:attacker:{spec.attacker}:{len(self._attack_refs)}"
        self._attack_refs[len(self._attack_refs)] = spec.kind.value
        if self.cfg.model is Model.SIGN_EPC:
            msg = attacker_action(
                spec.kind,
                captured,
                spec.attacker,
                self.epoch(),
                window=self.cfg.window,
                forge_key=self._forge_key,
                field=spec.field,
                rng=self._rng_attack,
                sender=sender,
            )
            at = self.now + (msg.sent_at - self.epoch())
        else:
            g = captured.grants[0]
            msg = message(sender, g.epcis_url, QueryIs(spec.attacker, captured.epc))
            at = self.now
        self._send(msg, at=at)

    def _attack_result(self, msg: Message) -> None:
        kind = self._attack_refs[int(msg.recipient.rsplit(":", 1)[1])]
        p = msg.payload
        outcome = "Accepted" if isinstance(p, IsResponse) else f"Rejected:{p.reason or p.error}"
        self._attacks[kind][outcome] += 1

    # driving ---------------------------------------------------------------------------

    def step(self) -> bool:
        if not self._heap:
            return False
        t, _, fn, args = heapq.heappop(self._heap)
        if t < self.now:
            raise RuntimeError("virtual clock went backwards")
        self.now = t
        fn(*args)
        return True

    def run(self, until: float | None = None) -> SimReport:
        while self._heap and (until is None or self._heap[0][0] <= until):
            self.step()
        if until is not None:
            self.now = max(self.now, until)
        return self.snapshot()

    def snapshot(self) -> SimReport:
        r = replace(
            self.report,
            e2e_latency=list(self.report.e2e_latency),
            authz_latency=list(self.report.authz_latency),
            issuance_latency=list(self.report.issuance_latency),
            epcds_queue=list(self.report.epcds_queue),
        )
        r.virtual_time = self.now
        r.messages_sent = {n: dict(sorted(v.items())) for n, v in sorted(self._sent.items())}
        r.messages_inbound = {n: dict(sorted(v.items())) for n, v in sorted(self._inbound.items())}
        r.verdicts = dict(sorted(self._verdicts.items()))
        r.crypto_ops = dict(sorted(self._crypto.items()))
        r.attacks = {k: dict(sorted(v.items())) for k, v in sorted(self._attacks.items())}
        return r


def run_scenario(cfg: ScenarioConfig) -> SimReport:
    return Simulation(cfg).run()


def metrics_snapshot(sim: Simulation) -> SimReport:
    return sim.snapshot()


COMPARE_COLUMNS = (
    "model",
    "k",
    "transactions_completed",
    "epcds_inbound",
    "epcds_utilization",
    "epcds_mean_queue",
    "epcds_queue_first_decile",
    "epcds_queue_last_decile",
    "authz_latency_mean",
    "authz_latency_p95",
    "issuance_latency_mean",
    "issuance_latency_p95",
)


def compare_models(
    cfg_base: ScenarioConfig,
    k_values: Sequence[int],
    models: Sequence[Model] = (Model.SECURE_EPCDS, Model.SIGN_EPC),
) -> list[dict[str, Any]]:
    """Run every (model, k) pair on the same seed and workload; one summary row each."""
    rows = []
    for k in k_values:
        for m in models:
            rep = run_scenario(cfg_base.with_(k=k, model=m))
            s = rep.summary()
            rows.append({c: s[c] for c in COMPARE_COLUMNS})
    return rows


def comparison_csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(COMPARE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
