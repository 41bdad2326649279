"""Device-side flows against a tracing server.

Three jobs: check the published infected set against locally stored
encounters (in direct-download or private-intersection mode), upload
the device's daily keys after a positive test, and prove contact with
an infected hash to obtain a second-order upload authorization.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Optional

from . import psi
from .backend import FIRST_ORDER, TracingServer, utcnow
from .store import DeviceStore, ExposureCategory, ExposureThresholds


@dataclass(frozen=True)
class Notification:
    """One matched encounter worth telling the user about."""

    category: ExposureCategory
    order: str  # FIRST_ORDER or SECOND_ORDER


@dataclass
class CheckResult:
    """Outcome of one exposure check.

    Direct mode fills notifications (one per matched encounter above
    NONE). Intersection mode only learns cardinalities: the total match
    count, how many matches were second-order reports, and a count per
    exposure category from the refinement step; matched is the total in
    both modes.
    """

    mode: str
    matched: int = 0
    second_order_matched: int = 0
    notifications: list[Notification] = field(default_factory=list)
    category_counts: dict[ExposureCategory, int] = field(default_factory=dict)
    decoy_refinement: bool = False

    @property
    def notified(self) -> bool:
        if self.mode == "direct":
            return bool(self.notifications)
        return any(self.category_counts.get(c, 0) > 0 for c in (
            ExposureCategory.HIGH, ExposureCategory.MEDIUM, ExposureCategory.LOW))


def direct_check(store: DeviceStore, server: TracingServer, since: int = 0,
                 thresholds: ExposureThresholds = ExposureThresholds()) -> CheckResult:
    """Download the published entries and intersect locally.

    Cheap and exact, but the device learns the whole infected set and
    the entries' order tags; the private-intersection mode below exists
    for deployments that consider that a problem.
    """
    infected: dict[bytes, str] = {}
    for batch in server.release_batches(since):
        for ce, order in batch.entries:
            infected[ce] = order
    result = CheckResult(mode="direct")
    classified = store.classify_exposures(thresholds)
    for ce in store.records:
        order = infected.get(ce)
        if order is None:
            continue
        result.matched += 1
        if order != FIRST_ORDER:
            result.second_order_matched += 1
        category = classified[ce]
        if category != ExposureCategory.NONE:
            result.notifications.append(Notification(category=category, order=order))
            result.category_counts[category] = result.category_counts.get(category, 0) + 1
    return result


def psi_check(store: DeviceStore, server: TracingServer, client_token: str,
              batch_id: int, rng: Optional[random.Random] = None,
              thresholds: ExposureThresholds = ExposureThresholds(),
              min_query: int = psi.MIN_QUERY,
              now: Optional[dt.datetime] = None) -> CheckResult:
    """Query one batch without revealing the device's encounters.

    Round 1 yields the total and second-order match counts. The second
    step always happens: a real category refinement when something
    matched, a decoy with a random partition otherwise, so the server
    sees the same traffic shape either way.
    """
    now = now or utcnow()
    observed = list(store.records)
    session = psi.PsiClientSession(rng)
    blob = psi.client_round1(session, observed, min_query=min_query)
    session_id, echo, batch = server.psi_round1(client_token, batch_id, blob, now)
    total, second = session.finish_multi(
        [echo], [batch.filter, batch.filter_second_order]
    )[0]

    refine_session = psi.PsiClientSession(rng)
    pad_to = len(blob)
    if total > 0:
        classified = store.classify_exposures(thresholds)
        partitions: dict[ExposureCategory, list[bytes]] = {
            ExposureCategory.HIGH: [], ExposureCategory.MEDIUM: [], ExposureCategory.LOW: [],
        }
        for ce in observed:
            category = classified[ce]
            if category != ExposureCategory.NONE:
                partitions[category].append(ce)
        blocks = psi.refine_blocks(refine_session, [
            partitions[ExposureCategory.HIGH],
            partitions[ExposureCategory.MEDIUM],
            partitions[ExposureCategory.LOW],
        ], pad_to)
        decoy = False
    else:
        blocks = psi.decoy_second_query(refine_session, observed, pad_to, rng)
        decoy = True
    reply = server.psi_refine(session_id, blocks, now)
    refined = refine_session.finish(reply, batch.filter)

    result = CheckResult(mode="psi", matched=total, second_order_matched=second,
                         decoy_refinement=decoy)
    if not decoy:
        result.category_counts = {
            ExposureCategory.HIGH: refined[0],
            ExposureCategory.MEDIUM: refined[1],
            ExposureCategory.LOW: refined[2],
        }
    else:
        result.category_counts = {
            ExposureCategory.HIGH: 0, ExposureCategory.MEDIUM: 0, ExposureCategory.LOW: 0,
        }
    return result


def submit_report(store: DeviceStore, server: TracingServer, tan: str,
                  now: Optional[dt.datetime] = None) -> int:
    """Upload the retention window's daily keys, then rotate today's key
    since the uploaded one is public from here on. Returns how many
    contact-event hashes the server regenerated."""
    now = now or utcnow()
    keys = store.prepare_report(server.config.retention, now)
    count = server.accept_report(tan, keys, now)
    store.rotate_after_report(now)
    return count


def proof_macs(cetcns: list[bytes], nonce: bytes, limit: int = 1000) -> list[bytes]:
    return [hmac.new(ce, nonce, hashlib.sha256).digest() for ce in cetcns[:limit]]


def request_contact_authorization(store: DeviceStore, server: TracingServer,
                                  matched: Optional[list[bytes]] = None,
                                  now: Optional[dt.datetime] = None) -> str:
    """Challenge-response proof that this device saw an infected hash.

    In direct mode the device knows which encounters matched and sends
    just those; in intersection mode it doesn't, so it answers with MACs
    over everything it observed and lets the server find the match.
    Returns a single-use second-order upload TAN.
    """
    now = now or utcnow()
    cetcns = matched if matched is not None else list(store.records)
    challenge_id, nonce = server.proof_challenge(now)
    auth = server.proof_response(challenge_id, proof_macs(cetcns, nonce), now)
    return auth.tan
