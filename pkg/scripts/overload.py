"""Drive the discovery service past saturation and print its queue over time.

Under secure_epcds every information-service query comes back to the
discovery service, so the queue explodes once k is large enough; under
sign_epc the discovery-service load does not depend on k.
"""

import argparse

from signepc.model import AccessPolicy, PublishRecord, PublishRegistry, parse_epc
from signepc.nodes import Model
from signepc.simnet import Arrival, ScenarioConfig, UserSpec, run_scenario


def chain(publishers: int, rate: float, k: int, duration: float, seed: int) -> ScenarioConfig:
    epc = parse_epc("urn:epc:id:sgtin:0614141.112345.400")
    reg = PublishRegistry()
    for i in range(publishers):
        reg.publish(PublishRecord(epc, f"c{i}", 100 + i, f"https://epcis.c{i}.example/q", AccessPolicy.all()))
    reg.bind_user("client", "c0")
    return ScenarioConfig(reg, [UserSpec("client", rate)], k=k, duration=duration, seed=seed, arrival=Arrival.POISSON)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rate", type=float, default=25.0, help="transactions per second")
    ap.add_argument("--k", type=int, default=25)
    ap.add_argument("--publishers", type=int, default=3)
    ap.add_argument("--duration", type=float, default=200.0)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--slices", type=int, default=10)
    args = ap.parse_args()

    base = chain(args.publishers, args.rate, args.k, args.duration, args.seed)
    print(f"rate {args.rate}/s, k {args.k}, {args.publishers} publishers, {args.duration:g}s")
    header = "slice".ljust(14) + "".join(m.value.rjust(16) for m in (Model.SECURE_EPCDS, Model.SIGN_EPC))
    reports = [run_scenario(base.with_(model=m)) for m in (Model.SECURE_EPCDS, Model.SIGN_EPC)]
    print("utilization".ljust(14) + "".join(f"{r.epcds_utilization:16.3f}" for r in reports))
    print(header)
    step = args.duration / args.slices
    for i in range(args.slices):
        t0, t1 = i * step, (i + 1) * step
        print(f"{t0:6.0f}-{t1:<6.0f} " + "".join(f"{r.queue_mean(t0, t1):16.2f}" for r in reports))


if __name__ == "__main__":
    main()
