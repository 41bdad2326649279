"""Rotating contact number derivation.

Devices broadcast a 16-byte temporary contact number (TCN) that changes
every 10 minutes and is derived from a daily random key. Receivers never
store the raw TCN; they store a 32-byte contact-event TCN (ceTCN) that
binds the received value to the UTC date and 10-minute interval in which
it was heard. All derivations here are pure functions over immutable
inputs and are safe to call concurrently.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import hmac
import secrets
from dataclasses import dataclass
from typing import Optional
import random

TCN_LABEL = b"CT-RPI"
TCN_LENGTH = 16
CETCN_LENGTH = 32
KEY_LENGTH = 32
INTERVAL_SECONDS = 600
INTERVALS_PER_DAY = 144


@dataclass(frozen=True)
class DailyKey:
    """One device's random key for one UTC calendar day."""

    data: bytes
    date: dt.date

    def __post_init__(self) -> None:
        if len(self.data) != KEY_LENGTH:
            raise ValueError(f"daily key must be {KEY_LENGTH} bytes, got {len(self.data)}")

    @property
    def hex(self) -> str:
        return self.data.hex()


def generate_daily_key(date: dt.date, rng: Optional[random.Random] = None) -> DailyKey:
    """Sample a fresh 32-byte key for a day.

    Keys are drawn independently every day; nothing links one day's key
    to the next, so publishing a key exposes that day only. Pass a seeded
    ``random.Random`` for reproducible tests; production callers omit it
    and get the OS CSPRNG.
    """
    if rng is None:
        data = secrets.token_bytes(KEY_LENGTH)
    else:
        data = rng.randbytes(KEY_LENGTH)
    return DailyKey(data=data, date=date)


def tin_of(timestamp: dt.datetime) -> int:
    """Index of the 10-minute UTC interval containing timestamp, 0..143.

    Aware datetimes are converted to UTC; naive ones are taken as UTC.
    """
    if timestamp.tzinfo is not None:
        timestamp = timestamp.astimezone(dt.timezone.utc)
    seconds = timestamp.hour * 3600 + timestamp.minute * 60 + timestamp.second
    return seconds // INTERVAL_SECONDS


def encode_tin(tin: int) -> bytes:
    """2-byte big-endian encoding used inside both derivations."""
    if not 0 <= tin < INTERVALS_PER_DAY:
        raise ValueError(f"tin must be in [0, {INTERVALS_PER_DAY - 1}], got {tin}")
    return tin.to_bytes(2, "big")


def derive_tcn(key: DailyKey | bytes, tin: int) -> bytes:
    """First 16 bytes of HMAC-SHA256(key, "CT-RPI" || tin)."""
    key_bytes = key.data if isinstance(key, DailyKey) else key
    mac = hmac.new(key_bytes, TCN_LABEL + encode_tin(tin), hashlib.sha256)
    return mac.digest()[:TCN_LENGTH]


def contact_event_tcn(tcn: bytes, date: dt.date, tin: int) -> bytes:
    """SHA-256 over tcn || ASCII "YYYY-MM-DD" || 2-byte big-endian tin.

    Binding the date and interval means a captured broadcast replayed in
    a later interval produces a different ceTCN on the victim's device
    and never matches the reporter's regenerated values.
    """
    if len(tcn) != TCN_LENGTH:
        raise ValueError(f"tcn must be {TCN_LENGTH} bytes, got {len(tcn)}")
    return hashlib.sha256(tcn + date.isoformat().encode("ascii") + encode_tin(tin)).digest()


def regenerate_day_tcns(key: DailyKey) -> list[tuple[int, bytes, bytes]]:
    """All 144 (tin, tcn, cetcn) triples a key produced on its day.

    This is the reporting-side expansion: given an uploaded daily key,
    anyone can reconstruct every value the device broadcast that day and
    every ceTCN a nearby receiver would have recorded.
    """
    out = []
    for tin in range(INTERVALS_PER_DAY):
        tcn = derive_tcn(key, tin)
        out.append((tin, tcn, contact_event_tcn(tcn, key.date, tin)))
    return out
