"""Step through the private exposure check one message at a time.

Shows the commutative trick first on toy values, then replays a real
query against a server batch, printing what each side can see at every
step: the server gets blinded group elements and a count floor, the
client gets back a shuffled echo it can only count, not align.

    python3 demos/private_check_walkthrough.py [seed]
"""

import datetime as dt
import random
import sys

from cotrace import psi
from cotrace.backend import ServerConfig, TracingServer
from cotrace.harness import MEDICAL_CREDENTIAL
from cotrace.store import DeviceStore

BASE = dt.datetime(2020, 4, 20, 10, 0, 0)


def show_commutativity(rng: random.Random) -> None:
    print("== the primitive: two blindings that commute ==")
    a = psi.generate_key(rng)
    b = psi.generate_key(rng)
    x = psi.hash_to_group(b"hello")
    ab = psi.commute_encrypt(b, psi.commute_encrypt(a, x))
    ba = psi.commute_encrypt(a, psi.commute_encrypt(b, x))
    print(f"  E_b(E_a(x)) == E_a(E_b(x)): {ab == ba}")
    stripped = psi.strip_layer(a, ab)
    print(f"  stripping a from E_b(E_a(x)) leaves E_b(x):"
          f" {stripped == psi.commute_encrypt(b, x)}")
    print("  so the client can remove its own layer from a doubly")
    print("  blinded value and compare against server-only blindings.\n")


def build_world(seed: int):
    rng = random.Random(seed)
    server = TracingServer(ServerConfig(min_query=8), rng=random.Random(seed + 1))
    sick = DeviceStore(rng=random.Random(seed + 2))
    sick.ensure_key(BASE.date())

    # the checker saw the sick device during three intervals plus two
    # strangers who never report
    checker = DeviceStore(rng=random.Random(seed + 3))
    checker.ensure_key(BASE.date())
    for minute in (0, 10, 20):
        t = BASE + dt.timedelta(minutes=minute)
        checker.record_sighting(sick.current_tcn(t), t, rssi=-60)
    for i, minute in enumerate((5, 15)):
        t = BASE + dt.timedelta(minutes=minute)
        stranger = DeviceStore(rng=random.Random(seed + 10 + i))
        stranger.ensure_key(BASE.date())
        checker.record_sighting(stranger.current_tcn(t), t, rssi=-70)

    now = BASE + dt.timedelta(hours=3)
    tan = server.issue_tan("MEDICAL", MEDICAL_CREDENTIAL, now).tan
    server.accept_report(tan, sick.prepare_report(server.config.retention, now), now)
    batch = server.seal_batch(now + dt.timedelta(seconds=1), force=True)
    return rng, server, checker, batch, now


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
    rng = random.Random(seed)
    show_commutativity(rng)

    rng, server, checker, batch, now = build_world(seed)
    observed = list(checker.records)
    print("== a real check against a sealed batch ==")
    print(f"  batch holds {len(batch.entries)} hashes from one report")
    print(f"  checker holds {len(observed)} sightings, 3 of them the sick phone")

    session = psi.PsiClientSession(rng)
    blob = psi.client_round1(session, observed, min_query=8)
    print(f"\nclient -> server: {len(blob)} blinded elements"
          f" ({len(blob) - len(observed)} random padding, real ones hidden among them)")

    session_id, echo, got = server.psi_round1("walkthrough", batch.batch_id, blob, now)
    print(f"server -> client: the same {len(echo)} elements, server layer added,")
    print("  order shuffled, so the client cannot tell WHICH matched")

    total, second = session.finish_multi(
        [echo], [got.filter, got.filter_second_order])[0]
    print(f"\nclient strips its layer and counts filter hits: {total} matched,"
          f" {second} of them second order")
    print("  padding cannot match: it never passed through a device key")

    refine = psi.PsiClientSession(rng)
    blocks = psi.refine_blocks(refine, [observed[:1], observed[1:2], observed[2:3]],
                               pad_to=len(blob))
    reply = server.psi_refine(session_id, blocks, now)
    counts = refine.finish(reply, got.filter)
    print(f"\nsecond exchange, three equal-size blocks: per-block counts {counts}")
    print("  the client buckets its own sightings (say, by exposure level) and")
    print("  learns a count per bucket; a clean client sends a decoy partition")
    print("  instead, so the server sees identical traffic either way")

    print(f"\nwhat the server learned: one client token, {len(blob)} opaque blobs,"
          " twice")
    print(f"what the client learned: counts only ({total} total, {counts} refined)")


if __name__ == "__main__":
    main()
