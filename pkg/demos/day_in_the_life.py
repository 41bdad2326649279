"""Two phones meet, one owner tests positive, the other gets warned.

Runs the whole pipeline in-process: the radio simulator produces
sightings, each device files them in its own store, the sick device
uploads its daily keys with a clinic-issued code, and the healthy one
checks the published batch twice, once by plain download and once
through the private intersection protocol. Both paths must agree.

    python3 demos/day_in_the_life.py [seed]
"""

import datetime as dt
import random
import sys

from cotrace.backend import ServerConfig, TracingServer
from cotrace.client import direct_check, psi_check, submit_report
from cotrace.harness import MEDICAL_CREDENTIAL, ingest_trace
from cotrace.sim import RadioConfig, SimNode, run_scenario
from cotrace.store import DeviceStore, ExposureThresholds

BASE = dt.datetime(2020, 4, 20, 10, 0, 0)

# A scanner only hears a quarter of each 10 minute interval, so a
# contact number never accumulates the default 600 s of presence; 540 s
# is the practical ceiling for a contact spanning a whole interval.
THRESHOLDS = ExposureThresholds(high_duration_s=540.0)


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7

    print("== morning: three phones advertise rotating contact numbers ==")
    nodes = [
        SimNode("alice", [(0.0, 0.0, 0.0)]),
        SimNode("bob", [(0.0, 2.0, 0.0)]),
        SimNode("carol", [(0.0, 500.0, 0.0)]),  # across town, never in range
    ]
    trace = run_scenario(RadioConfig(), nodes, duration_ms=900_000,
                         seed=seed, base_time=BASE)
    print(f"simulated 15 min, {len(trace.records)} receptions")
    for node in nodes:
        first = node.tcn_at(BASE)
        later = node.tcn_at(BASE + dt.timedelta(minutes=12))
        print(f"  {node.node_id}: number at 10:00 {first.hex()[:16]}.., "
              f"at 10:12 {later.hex()[:16]}.. (rotated: {first != later})")

    print("\n== each phone files what it heard, keyed by hashed sightings ==")
    stores = {
        node.node_id: DeviceStore(rng=random.Random(seed * 1009 + i))
        for i, node in enumerate(nodes)
    }
    for node in nodes:
        stores[node.node_id].keys_by_date[BASE.date()] = node.key
    ingest_trace(trace, stores)
    for name, store in stores.items():
        print(f"  {name}: {len(store.records)} distinct sighting records")

    print("\n== afternoon: alice tests positive and reports ==")
    server = TracingServer(ServerConfig(min_query=20),
                           rng=random.Random(seed * 1009 + 99))
    now = BASE + dt.timedelta(hours=4)
    tan = server.issue_tan("MEDICAL", MEDICAL_CREDENTIAL, now).tan
    uploaded = submit_report(stores["alice"], server, tan, now)
    batch = server.seal_batch(now + dt.timedelta(seconds=1), force=True)
    print(f"  clinic code {tan} accepted, {uploaded} hashes uploaded,"
          f" batch {batch.batch_id} sealed with {len(batch.entries)} entries")

    print("\n== evening: everyone checks ==")
    for name in ("bob", "carol"):
        plain = direct_check(stores[name], server, thresholds=THRESHOLDS)
        private = psi_check(stores[name], server, client_token=name,
                            batch_id=batch.batch_id,
                            rng=random.Random(seed * 1009 + 500),
                            thresholds=THRESHOLDS, min_query=20,
                            now=now + dt.timedelta(hours=2))
        cats = {c.name: n for c, n in private.category_counts.items() if n}
        print(f"  {name}: direct matched {plain.matched}"
              f" ({[n.category.name for n in plain.notifications]}),"
              f" private matched {private.matched} {cats or '{}'}"
              f" decoy_refinement={private.decoy_refinement}")
        assert plain.matched == private.matched

    print("\nbob is told how long and how close, never who. carol hears nothing.")


if __name__ == "__main__":
    main()
