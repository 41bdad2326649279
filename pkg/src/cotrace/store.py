"""Device-side state: own daily keys, observed encounters, exposure scoring.

A device records every broadcast it hears as a contact-event hash with
signal strength samples, keeps two or three weeks of history, scores
each contact by duration and median RSSI, and can assemble the key
upload for an infection report. Observed raw contact numbers are never
persisted; only their date-and-interval-bound hashes are.
"""

from __future__ import annotations

import base64
import datetime as dt
import json
import statistics
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional
import random

from cryptography.fernet import Fernet

from . import tcn

RSSI_MIN = -120
RSSI_MAX = 0


class ExposureCategory(IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3


@dataclass(frozen=True)
class ExposureThresholds:
    """Decision table: a contact must clear both the duration and the
    median-RSSI bar of a category to earn it. Defaults approximate the
    usual 10-minute close-contact guidance and can be overridden from
    config."""

    high_duration_s: float = 600.0
    high_rssi_dbm: float = -65.0
    medium_duration_s: float = 300.0
    medium_rssi_dbm: float = -80.0
    low_duration_s: float = 60.0

    def classify(self, duration_s: float, median_rssi: float) -> ExposureCategory:
        if duration_s >= self.high_duration_s and median_rssi >= self.high_rssi_dbm:
            return ExposureCategory.HIGH
        if duration_s >= self.medium_duration_s and median_rssi >= self.medium_rssi_dbm:
            return ExposureCategory.MEDIUM
        if duration_s >= self.low_duration_s:
            return ExposureCategory.LOW
        return ExposureCategory.NONE


@dataclass(frozen=True)
class RetentionPolicy:
    window_days: int = 14

    def __post_init__(self) -> None:
        if self.window_days not in (14, 21):
            raise ValueError("retention window must be 14 or 21 days")

    def cutoff(self, now: dt.datetime) -> dt.date:
        """Oldest date still retained."""
        return now.date() - dt.timedelta(days=self.window_days)


@dataclass
class EncounterRecord:
    ce_tcn: bytes
    date: dt.date
    tin: int
    first_seen: dt.datetime
    last_seen: dt.datetime
    rssi_samples: list[tuple[dt.datetime, int]] = field(default_factory=list)

    @property
    def duration_seconds(self) -> float:
        return (self.last_seen - self.first_seen).total_seconds()

    @property
    def median_rssi(self) -> float:
        return statistics.median(rssi for _, rssi in self.rssi_samples)


class ReportError(Exception):
    pass


class DeviceStore:
    """Single-owner store for one device; readers may share snapshots."""

    def __init__(self, rng: Optional[random.Random] = None):
        self._rng = rng
        self.keys_by_date: dict[dt.date, tcn.DailyKey] = {}
        self.records: dict[bytes, EncounterRecord] = {}
        self.rejected_count = 0

    def ensure_key(self, date: dt.date) -> tcn.DailyKey:
        key = self.keys_by_date.get(date)
        if key is None:
            key = tcn.generate_daily_key(date, self._rng)
            self.keys_by_date[date] = key
        return key

    def current_tcn(self, timestamp: dt.datetime) -> bytes:
        """The value this device broadcasts at the given moment."""
        return tcn.derive_tcn(self.ensure_key(timestamp.date()), tcn.tin_of(timestamp))

    def record_sighting(self, raw_tcn: bytes, timestamp: dt.datetime,
                        rssi: int) -> Optional[EncounterRecord]:
        """Fold one received broadcast into the encounter history.

        Returns the updated record, or None if the sighting was rejected
        for an implausible RSSI (counted in rejected_count).
        """
        if not RSSI_MIN <= rssi <= RSSI_MAX:
            self.rejected_count += 1
            return None
        date = timestamp.date()
        tin = tcn.tin_of(timestamp)
        ce = tcn.contact_event_tcn(raw_tcn, date, tin)
        record = self.records.get(ce)
        if record is None:
            record = EncounterRecord(
                ce_tcn=ce, date=date, tin=tin, first_seen=timestamp, last_seen=timestamp
            )
            self.records[ce] = record
        else:
            record.first_seen = min(record.first_seen, timestamp)
            record.last_seen = max(record.last_seen, timestamp)
        record.rssi_samples.append((timestamp, rssi))
        return record

    def purge_expired(self, now: dt.datetime, policy: RetentionPolicy) -> int:
        """Delete records and own keys dated before the retention cutoff."""
        cutoff = policy.cutoff(now)
        stale_records = [ce for ce, r in self.records.items() if r.date < cutoff]
        for ce in stale_records:
            del self.records[ce]
        stale_keys = [d for d in self.keys_by_date if d < cutoff]
        for d in stale_keys:
            del self.keys_by_date[d]
        return len(stale_records) + len(stale_keys)

    def classify_exposures(
        self, thresholds: ExposureThresholds = ExposureThresholds()
    ) -> dict[bytes, ExposureCategory]:
        return {
            ce: thresholds.classify(r.duration_seconds, r.median_rssi)
            for ce, r in self.records.items()
        }

    def prepare_report(self, policy: RetentionPolicy, now: dt.datetime) -> list[tcn.DailyKey]:
        """Keys for the most recent window_days, oldest first.

        This is the payload an infected user uploads; the server expands
        each key into that day's 144 contact-event hashes.
        """
        newest_allowed = now.date()
        oldest_allowed = now.date() - dt.timedelta(days=policy.window_days - 1)
        keys = [
            k for d, k in sorted(self.keys_by_date.items())
            if oldest_allowed <= d <= newest_allowed
        ]
        if not keys:
            raise ReportError("nothing to report")
        return keys

    def rotate_after_report(self, now: dt.datetime) -> tcn.DailyKey:
        """Replace today's key once a report is acknowledged.

        The uploaded key is public from this point on, so future
        broadcasts must come from a fresh secret.
        """
        new_key = tcn.generate_daily_key(now.date(), self._rng)
        self.keys_by_date[now.date()] = new_key
        return new_key

    # Encrypted-at-rest persistence. The on-disk format is private; the
    # contract is save/load round-tripping under the device secret.

    def _to_payload(self) -> dict:
        return {
            "keys": [
                {"date": d.isoformat(), "key_hex": k.data.hex()}
                for d, k in sorted(self.keys_by_date.items())
            ],
            "records": [
                {
                    "ce_tcn": r.ce_tcn.hex(),
                    "date": r.date.isoformat(),
                    "tin": r.tin,
                    "first_seen": r.first_seen.isoformat(),
                    "last_seen": r.last_seen.isoformat(),
                    "rssi_samples": [[ts.isoformat(), rssi] for ts, rssi in r.rssi_samples],
                }
                for r in self.records.values()
            ],
            "rejected_count": self.rejected_count,
        }

    def save(self, path: str | Path, secret: bytes) -> None:
        if len(secret) != 32:
            raise ValueError("device secret must be 32 bytes")
        f = Fernet(base64.urlsafe_b64encode(secret))
        Path(path).write_bytes(f.encrypt(json.dumps(self._to_payload()).encode()))

    @classmethod
    def load(cls, path: str | Path, secret: bytes,
             rng: Optional[random.Random] = None) -> "DeviceStore":
        if len(secret) != 32:
            raise ValueError("device secret must be 32 bytes")
        f = Fernet(base64.urlsafe_b64encode(secret))
        payload = json.loads(f.decrypt(Path(path).read_bytes()))
        store = cls(rng)
        for entry in payload["keys"]:
            d = dt.date.fromisoformat(entry["date"])
            store.keys_by_date[d] = tcn.DailyKey(data=bytes.fromhex(entry["key_hex"]), date=d)
        for entry in payload["records"]:
            record = EncounterRecord(
                ce_tcn=bytes.fromhex(entry["ce_tcn"]),
                date=dt.date.fromisoformat(entry["date"]),
                tin=entry["tin"],
                first_seen=dt.datetime.fromisoformat(entry["first_seen"]),
                last_seen=dt.datetime.fromisoformat(entry["last_seen"]),
                rssi_samples=[
                    (dt.datetime.fromisoformat(ts), rssi) for ts, rssi in entry["rssi_samples"]
                ],
            )
            store.records[record.ce_tcn] = record
        store.rejected_count = payload["rejected_count"]
        return store

    # Plaintext record exchange with the simulator and attack harness:
    # one JSON object per line.

    def export_records(self, path: str | Path) -> int:
        lines = []
        for r in sorted(self.records.values(), key=lambda r: (r.date, r.tin, r.ce_tcn)):
            lines.append(json.dumps({
                "ce_tcn": r.ce_tcn.hex(),
                "date": r.date.isoformat(),
                "tin": r.tin,
                "first_seen": r.first_seen.isoformat(),
                "last_seen": r.last_seen.isoformat(),
                "rssi_samples": [[ts.isoformat(), rssi] for ts, rssi in r.rssi_samples],
            }))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
        return len(lines)

    def import_records(self, path: str | Path) -> int:
        count = 0
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            record = EncounterRecord(
                ce_tcn=bytes.fromhex(entry["ce_tcn"]),
                date=dt.date.fromisoformat(entry["date"]),
                tin=entry["tin"],
                first_seen=dt.datetime.fromisoformat(entry["first_seen"]),
                last_seen=dt.datetime.fromisoformat(entry["last_seen"]),
                rssi_samples=[
                    (dt.datetime.fromisoformat(ts), rssi) for ts, rssi in entry["rssi_samples"]
                ],
            )
            existing = self.records.get(record.ce_tcn)
            if existing is None:
                self.records[record.ce_tcn] = record
            else:
                existing.first_seen = min(existing.first_seen, record.first_seen)
                existing.last_seen = max(existing.last_seen, record.last_seen)
                existing.rssi_samples.extend(record.rssi_samples)
            count += 1
        return count
