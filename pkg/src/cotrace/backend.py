"""Reporting server: verified uploads, hourly batches, private queries.

Infected users upload daily keys under a single-use authorization. The
server expands each key into the 144 contact-event hashes the device
produced that day, drops the key, and accumulates the hashes in an open
batch. Batches seal hourly: entries from all reports are shuffled
together, sorted bytewise, and published immutably, so nothing in a
released batch ties an entry to an upload. Clients check exposure either
by downloading batches directly or through the cardinality protocol,
which is rate limited per client token to keep membership probing
expensive. Contacts of a confirmed case can earn a second-order upload
authorization by proving knowledge of an infected hash.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import hmac
import json
import secrets
import string
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
import random

from . import psi, tcn
from .bloom import DEFAULT_K, BloomFilter
from .store import RetentionPolicy

FIRST_ORDER = "FIRST_ORDER"
SECOND_ORDER = "SECOND_ORDER"
MEDICAL = "MEDICAL"

TAN_LENGTH = 12
TAN_ALPHABET = string.ascii_uppercase + string.digits


def utcnow() -> dt.datetime:
    """Naive UTC; all protocol timestamps are UTC without tzinfo."""
    return dt.datetime.now(dt.timezone.utc).replace(tzinfo=None)


class AuthError(Exception):
    pass


class ReportRejected(Exception):
    pass


class RateLimited(Exception):
    def __init__(self, retry_after_s: float):
        super().__init__(f"query limit reached, retry after {retry_after_s:.0f}s")
        self.retry_after_s = retry_after_s


class NotFound(Exception):
    pass


@dataclass(frozen=True)
class ServerConfig:
    retention: RetentionPolicy = RetentionPolicy(14)
    min_query: int = psi.MIN_QUERY
    sessions_per_day: int = 12
    rate_limit_enabled: bool = True
    batch_seconds: int = 3600
    bloom_k: int = DEFAULT_K
    tan_validity_s: int = 24 * 3600
    proof_validity_s: int = 600
    max_proof_macs: int = 1000
    medical_credentials: frozenset = frozenset({"clinic-demo-credential"})


@dataclass
class UploadAuthorization:
    tan: str
    kind: str
    issued_at: dt.datetime
    validity_s: int
    consumed: bool = False

    def usable(self, now: dt.datetime) -> bool:
        age = (now - self.issued_at).total_seconds()
        return not self.consumed and 0 <= age <= self.validity_s


class InfectedBatch:
    """Sealed, immutable hour of verified contact-event hashes.

    Entries are (ce_tcn, order_tag) sorted by hash bytes. The combined
    filter and the second-order-only filter are built lazily from the
    per-batch key so direct-download deployments never pay for them.
    """

    __slots__ = ("_batch_id", "_sealed_at", "_entries", "_server_key", "_k",
                 "_filter", "_filter_second")

    def __init__(self, batch_id: int, sealed_at: dt.datetime,
                 entries: tuple[tuple[bytes, str], ...], server_key: psi.CommutativeKey,
                 bloom_k: int = DEFAULT_K):
        self._batch_id = batch_id
        self._sealed_at = sealed_at
        self._entries = entries
        self._server_key = server_key
        self._k = bloom_k
        self._filter: Optional[BloomFilter] = None
        self._filter_second: Optional[BloomFilter] = None

    @property
    def batch_id(self) -> int:
        return self._batch_id

    @property
    def sealed_at(self) -> dt.datetime:
        return self._sealed_at

    @property
    def entries(self) -> tuple[tuple[bytes, str], ...]:
        return self._entries

    @property
    def server_key(self) -> psi.CommutativeKey:
        return self._server_key

    def _build_filters(self) -> None:
        second = [ce for ce, order in self._entries if order == SECOND_ORDER]
        combined = BloomFilter(len(self._entries), k=self._k)
        second_only = BloomFilter(len(second), k=self._k)
        for ce, order in self._entries:
            encoded = psi.element_to_bytes(
                psi.commute_encrypt(self._server_key, psi.hash_to_group(ce))
            )
            combined.add(encoded)
            if order == SECOND_ORDER:
                second_only.add(encoded)
        self._filter = combined
        self._filter_second = second_only

    @property
    def filter(self) -> BloomFilter:
        if self._filter is None:
            self._build_filters()
        return self._filter

    @property
    def filter_second_order(self) -> BloomFilter:
        if self._filter_second is None:
            self._build_filters()
        return self._filter_second


@dataclass
class PsiServerSession:
    session_id: str
    client_token: str
    batch_id: int
    round1_size: int
    created_at: dt.datetime
    state: str = "ROUND1_DONE"


class TracingServer:
    def __init__(self, config: ServerConfig = ServerConfig(),
                 rng: Optional[random.Random] = None,
                 storage_path: Optional[str | Path] = None):
        self.config = config
        self._rng = rng
        self._tans: dict[str, UploadAuthorization] = {}
        self._open_reports: list[tuple[list[tuple[bytes, str]], dt.datetime]] = []
        self._open_since: Optional[dt.datetime] = None
        self.batches: list[InfectedBatch] = []
        self._next_batch_id = 1
        self._query_log: dict[str, deque] = {}
        self._challenges: dict[str, tuple[bytes, dt.datetime]] = {}
        self._sessions: dict[str, PsiServerSession] = {}
        self._storage_path = Path(storage_path) if storage_path else None
        if self._storage_path and self._storage_path.exists():
            self._replay_log()

    # randomness helpers: seeded rng for reproducible runs, OS entropy
    # otherwise

    def _rand_tan(self) -> str:
        if self._rng is None:
            return "".join(secrets.choice(TAN_ALPHABET) for _ in range(TAN_LENGTH))
        return "".join(self._rng.choice(TAN_ALPHABET) for _ in range(TAN_LENGTH))

    def _rand_bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n) if self._rng is None else self._rng.randbytes(n)

    def _shuffle(self, items: list) -> None:
        if self._rng is None:
            for i in range(len(items) - 1, 0, -1):
                j = secrets.randbelow(i + 1)
                items[i], items[j] = items[j], items[i]
        else:
            self._rng.shuffle(items)

    # append-only persistence; daily keys are never written

    def _append_event(self, event: dict) -> None:
        if self._storage_path is None:
            return
        with self._storage_path.open("a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _replay_log(self) -> None:
        for line in self._storage_path.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            kind = event["type"]
            if kind == "tan":
                auth = UploadAuthorization(
                    tan=event["tan"],
                    kind=event["kind"],
                    issued_at=dt.datetime.fromisoformat(event["issued_at"]),
                    validity_s=event["validity_s"],
                )
                self._tans[auth.tan] = auth
            elif kind == "tan_consumed":
                if event["tan"] in self._tans:
                    self._tans[event["tan"]].consumed = True
            elif kind == "report":
                entries = [(bytes.fromhex(ce), event["order"]) for ce in event["ce_tcns"]]
                received = dt.datetime.fromisoformat(event["received_at"])
                self._open_reports.append((entries, received))
                if self._open_since is None:
                    self._open_since = received
            elif kind == "batch":
                batch = InfectedBatch(
                    batch_id=event["batch_id"],
                    sealed_at=dt.datetime.fromisoformat(event["sealed_at"]),
                    entries=tuple(
                        (bytes.fromhex(ce), order) for ce, order in event["entries"]
                    ),
                    server_key=psi.CommutativeKey(int(event["server_key"], 16)),
                    bloom_k=self.config.bloom_k,
                )
                self.batches.append(batch)
                self._next_batch_id = max(self._next_batch_id, batch.batch_id + 1)
                self._open_reports = []
                self._open_since = None
            elif kind == "purge":
                gone = set(event["batch_ids"])
                self.batches = [b for b in self.batches if b.batch_id not in gone]

    # authorization

    def issue_tan(self, kind: str, credential: Optional[str] = None,
                  now: Optional[dt.datetime] = None) -> UploadAuthorization:
        """Medical TANs need a configured credential; second-order TANs
        are only issued through verify_contact_proof."""
        now = now or utcnow()
        if kind == MEDICAL:
            if credential not in self.config.medical_credentials:
                raise AuthError("invalid medical credential")
        elif kind == SECOND_ORDER:
            pass
        else:
            raise AuthError(f"unknown authorization kind {kind!r}")
        auth = UploadAuthorization(
            tan=self._rand_tan(), kind=kind, issued_at=now,
            validity_s=self.config.tan_validity_s,
        )
        self._tans[auth.tan] = auth
        self._append_event({
            "type": "tan", "tan": auth.tan, "kind": kind,
            "issued_at": now.isoformat(), "validity_s": auth.validity_s,
        })
        return auth

    def _consume_tan(self, tan: str, now: dt.datetime) -> UploadAuthorization:
        auth = self._tans.get(tan)
        if auth is None or not auth.usable(now):
            raise AuthError("invalid, expired, or already-used TAN")
        auth.consumed = True
        self._append_event({"type": "tan_consumed", "tan": tan, "at": now.isoformat()})
        return auth

    # reports

    def accept_report(self, tan: str, keys: list[tcn.DailyKey],
                      now: Optional[dt.datetime] = None) -> int:
        """Verify-by-regeneration: expand each daily key into its 144
        contact-event hashes and enqueue them. The keys themselves are
        consumed here and never stored or logged."""
        now = now or utcnow()
        if not keys:
            raise ReportRejected("report contains no keys")
        window = self.config.retention.window_days
        if len({k.date for k in keys}) > window:
            raise ReportRejected(f"report covers more than {window} days")
        auth = self._consume_tan(tan, now)
        order = SECOND_ORDER if auth.kind == SECOND_ORDER else FIRST_ORDER
        entries = []
        for key in keys:
            for _, _, ce in tcn.regenerate_day_tcns(key):
                entries.append((ce, order))
        self._open_reports.append((entries, now))
        if self._open_since is None:
            self._open_since = now
        self._append_event({
            "type": "report", "received_at": now.isoformat(), "order": order,
            "ce_tcns": [ce.hex() for ce, _ in entries],
        })
        return len(entries)

    # batches

    def open_batch_age_s(self, now: dt.datetime) -> float:
        if self._open_since is None:
            return 0.0
        return (now - self._open_since).total_seconds()

    def seal_batch(self, now: Optional[dt.datetime] = None, force: bool = False) -> InfectedBatch:
        """Close the open hour: shuffle entries across reports, sort for
        release, attach a fresh per-batch key. Empty hours still publish
        an empty batch so clients can observe liveness."""
        now = now or utcnow()
        if not force and self.open_batch_age_s(now) < self.config.batch_seconds:
            raise ReportRejected("open batch is younger than the batch interval")
        pooled = [entry for report, _ in self._open_reports for entry in report]
        self._shuffle(pooled)
        pooled.sort(key=lambda e: e[0])
        batch = InfectedBatch(
            batch_id=self._next_batch_id,
            sealed_at=now,
            entries=tuple(pooled),
            server_key=psi.generate_key(self._rng),
            bloom_k=self.config.bloom_k,
        )
        self._next_batch_id += 1
        self.batches.append(batch)
        self._open_reports = []
        self._open_since = None
        self._append_event({
            "type": "batch", "batch_id": batch.batch_id, "sealed_at": now.isoformat(),
            "server_key": f"{batch.server_key.exponent:x}",
            "entries": [[ce.hex(), order] for ce, order in batch.entries],
        })
        return batch

    def release_batches(self, since: int = 0) -> list[InfectedBatch]:
        return [b for b in self.batches if b.batch_id > since]

    def purge_batches(self, now: Optional[dt.datetime] = None,
                      policy: Optional[RetentionPolicy] = None) -> int:
        now = now or utcnow()
        policy = policy or self.config.retention
        cutoff = policy.cutoff(now)
        stale = [b.batch_id for b in self.batches if b.sealed_at.date() < cutoff]
        if stale:
            self.batches = [b for b in self.batches if b.batch_id not in stale]
            self._append_event({"type": "purge", "batch_ids": stale, "at": now.isoformat()})
        return len(stale)

    # rate limiting: a hard cap of sessions_per_day queries in any
    # sliding 24 h window per client token; a refill-style bucket would
    # let a burst plus refill exceed the daily bound the privacy
    # argument needs

    def rate_limit_check(self, client_token: str, now: Optional[dt.datetime] = None,
                         consume: bool = True) -> None:
        if not self.config.rate_limit_enabled:
            return
        now = now or utcnow()
        log = self._query_log.setdefault(client_token, deque())
        day = dt.timedelta(hours=24)
        while log and now - log[0] >= day:
            log.popleft()
        if len(log) >= self.config.sessions_per_day:
            retry = (log[0] + day - now).total_seconds()
            raise RateLimited(max(retry, 0.0))
        if consume:
            log.append(now)

    # cardinality queries

    def _batch_by_id(self, batch_id: int) -> InfectedBatch:
        for b in self.batches:
            if b.batch_id == batch_id:
                return b
        raise NotFound(f"no batch {batch_id}")

    def psi_round1(self, client_token: str, batch_id: int, elements: list[bytes],
                   now: Optional[dt.datetime] = None) -> tuple[str, list[bytes], InfectedBatch]:
        """One metered query: echo the blob under the batch key, shuffled.

        Returns (session_id, echo, batch); the session entitles the
        client to exactly one category-refinement exchange.
        """
        now = now or utcnow()
        self.rate_limit_check(client_token, now)
        batch = self._batch_by_id(batch_id)
        echo = psi.server_respond(
            batch.server_key, [elements], self._rng, min_query=self.config.min_query
        )[0]
        session = PsiServerSession(
            session_id=self._rand_bytes(16).hex(),
            client_token=client_token,
            batch_id=batch_id,
            round1_size=len(elements),
            created_at=now,
        )
        self._sessions[session.session_id] = session
        return session.session_id, echo, batch

    def psi_refine(self, session_id: str, blocks: list[list[bytes]],
                   now: Optional[dt.datetime] = None) -> list[list[bytes]]:
        """The refinement leg of an existing session: same batch key,
        fixed shape (three blocks, each exactly the round-1 size), at
        most once per session, so it adds no query budget."""
        session = self._sessions.get(session_id)
        if session is None:
            raise NotFound("unknown or expired session")
        if session.state != "ROUND1_DONE":
            raise psi.ProtocolError("refinement already used for this session")
        if len(blocks) != psi.REFINE_BLOCKS:
            raise psi.ProtocolError(f"refinement uses exactly {psi.REFINE_BLOCKS} blocks")
        for block in blocks:
            if len(block) != session.round1_size:
                raise psi.ProtocolError(
                    f"refinement blocks must match the round-1 size {session.round1_size}"
                )
        batch = self._batch_by_id(session.batch_id)
        echo = psi.server_respond(batch.server_key, blocks, self._rng)
        session.state = "REFINED"
        return echo

    # proof of contact: challenge-response over an infected hash

    def proof_challenge(self, now: Optional[dt.datetime] = None) -> tuple[str, bytes]:
        now = now or utcnow()
        challenge_id = self._rand_bytes(16).hex()
        nonce = self._rand_bytes(32)
        self._challenges[challenge_id] = (nonce, now)
        return challenge_id, nonce

    def proof_response(self, challenge_id: str, macs: list[bytes],
                       now: Optional[dt.datetime] = None) -> UploadAuthorization:
        """Accept if any provided MAC equals HMAC-SHA256(infected ceTCN,
        nonce) for an entry in a retained batch. The challenge is burned
        on first use, matched or not, so responses cannot be replayed.
        """
        now = now or utcnow()
        entry = self._challenges.pop(challenge_id, None)
        if entry is None:
            raise AuthError("unknown or already-used challenge")
        nonce, issued = entry
        if (now - issued).total_seconds() > self.config.proof_validity_s:
            raise AuthError("challenge expired")
        if not macs or len(macs) > self.config.max_proof_macs:
            raise AuthError("proof must contain between 1 and "
                            f"{self.config.max_proof_macs} responses")
        provided = {m for m in macs if len(m) == 32}
        for batch in self.batches:
            for ce, _ in batch.entries:
                expected = hmac.new(ce, nonce, hashlib.sha256).digest()
                if expected in provided:
                    return self.issue_tan(SECOND_ORDER, now=now)
        raise AuthError("no response matched an infected entry")
