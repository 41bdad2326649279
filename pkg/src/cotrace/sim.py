"""Deterministic discrete-event simulation of BLE neighbor discovery.

Advertisers wake every Ta (plus 0..10 ms of jitter) and send one 1 ms
packet back-to-back on each of the 3 advertising channels. Scanners
open a ds-long listen window every Ts, hopping to the next channel each
interval. A packet is received when its sub-transmission on the
scanner's current channel lies fully inside an open window, the sender
is within radio range, and no other in-range sender transmitted on that
channel at an overlapping time (overlaps kill both packets). Received
signal strength follows log-distance path loss with Gaussian noise.

Everything random is drawn from generators derived from the scenario
seed, so identical inputs reproduce identical traces byte for byte.
"""

from __future__ import annotations

import datetime as dt
import heapq
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import tcn

DEFAULT_BASE_TIME = dt.datetime(2020, 4, 20, 10, 0, 0)


@dataclass(frozen=True)
class RadioConfig:
    adv_interval_ms: float = 250.0
    adv_jitter_max_ms: float = 10.0
    scan_interval_ms: float = 4096.0
    scan_window_ms: float = 1024.0
    tx_duration_ms: float = 1.0
    channels: int = 3
    range_m: float = 30.0
    rssi_at_1m_dbm: float = -45.0
    path_loss_exponent: float = 2.2
    rssi_sigma_db: float = 4.0

    def __post_init__(self) -> None:
        if self.adv_interval_ms <= 0:
            raise ValueError("advertising interval must be positive")
        if not 0 < self.scan_window_ms <= self.scan_interval_ms:
            raise ValueError("scan window must satisfy 0 < ds <= Ts")
        if self.channels < 1:
            raise ValueError("at least one advertising channel")


@dataclass
class SimNode:
    """A simulated device: identity, movement, and its daily secret.

    waypoints are (time_ms, x_m, y_m); position is interpolated linearly
    between them and clamped outside. The advertised MAC and TCN both
    derive from the daily key and the current 10-minute interval, so
    they rotate at the same instant.
    """

    node_id: str
    waypoints: list[tuple[float, float, float]]
    key: Optional[tcn.DailyKey] = None

    def position(self, t_ms: float) -> tuple[float, float]:
        pts = self.waypoints
        if t_ms <= pts[0][0]:
            return pts[0][1], pts[0][2]
        if t_ms >= pts[-1][0]:
            return pts[-1][1], pts[-1][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:]):
            if t0 <= t_ms <= t1:
                if t1 == t0:
                    return x1, y1
                f = (t_ms - t0) / (t1 - t0)
                return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        return pts[-1][1], pts[-1][2]

    def tcn_at(self, wall: dt.datetime) -> bytes:
        return tcn.derive_tcn(self.key, tcn.tin_of(wall))

    def mac_at(self, wall: dt.datetime) -> bytes:
        import hashlib
        import hmac as hmac_mod

        tin = tcn.tin_of(wall)
        return hmac_mod.new(self.key.data, b"MAC" + tcn.encode_tin(tin), hashlib.sha256).digest()[:6]


@dataclass
class RxRecord:
    time_ms: float
    rx_node: str
    tx_node: str
    tcn: bytes
    rssi_dbm: int
    channel: int


@dataclass
class SimTrace:
    config: RadioConfig
    nodes: list[SimNode]
    duration_ms: float
    seed: int
    base_time: dt.datetime
    records: list[RxRecord] = field(default_factory=list)
    energy_fraction: dict[str, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        return [
            f"{r.time_ms!r}\t{r.rx_node}\t{r.tx_node}\t{r.tcn.hex()}\t{r.rssi_dbm}\t{r.channel}"
            for r in self.records
        ]

    def write(self, path: str | Path) -> None:
        text = "\n".join(self.lines())
        Path(path).write_text(text + ("\n" if text else ""))


def rssi_model(distance_m: float, rng: random.Random,
               config: RadioConfig = RadioConfig()) -> int:
    """Log-distance path loss with Gaussian shadowing, clamped to
    [-120, -20] dBm and rounded to whole dBm."""
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    mean = config.rssi_at_1m_dbm - 10.0 * config.path_loss_exponent * math.log10(distance_m)
    noisy = mean + (rng.gauss(0.0, config.rssi_sigma_db) if config.rssi_sigma_db > 0 else 0.0)
    return int(round(min(-20.0, max(-120.0, noisy))))


def transmissions_collide(a_start: float, a_end: float, a_channel: int,
                          b_start: float, b_end: float, b_channel: int) -> bool:
    """Two packets are lost at a listener iff they overlap in time on
    the same channel; different channels never interfere."""
    return a_channel == b_channel and a_start < b_end and b_start < a_end


def _distance(a: SimNode, b: SimNode, t_ms: float) -> float:
    ax, ay = a.position(t_ms)
    bx, by = b.position(t_ms)
    return math.hypot(ax - bx, ay - by)


def first_time_within_range(a: SimNode, b: SimNode, range_m: float,
                            duration_ms: float) -> Optional[float]:
    """Earliest time the pair is within range, solved per linear segment."""
    knots = sorted({0.0, duration_ms}
                   | {t for t, _, _ in a.waypoints if 0 <= t <= duration_ms}
                   | {t for t, _, _ in b.waypoints if 0 <= t <= duration_ms})
    r2 = range_m * range_m
    for t0, t1 in zip(knots, knots[1:]):
        ax0, ay0 = a.position(t0)
        bx0, by0 = b.position(t0)
        dx0, dy0 = ax0 - bx0, ay0 - by0
        if dx0 * dx0 + dy0 * dy0 <= r2:
            return t0
        span = t1 - t0
        if span <= 0:
            continue
        ax1, ay1 = a.position(t1)
        bx1, by1 = b.position(t1)
        vx = ((ax1 - bx1) - dx0) / span
        vy = ((ay1 - by1) - dy0) / span
        # |d0 + v s|^2 = r^2 for s in [0, span]
        qa = vx * vx + vy * vy
        qb = 2 * (dx0 * vx + dy0 * vy)
        qc = dx0 * dx0 + dy0 * dy0 - r2
        if qa == 0:
            continue
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            continue
        root = (-qb - math.sqrt(disc)) / (2 * qa)
        if 0 <= root <= span:
            return t0 + root
    # check the endpoint too
    ax, ay = a.position(duration_ms)
    bx, by = b.position(duration_ms)
    if (ax - bx) ** 2 + (ay - by) ** 2 <= r2:
        return duration_ms
    return None


def run_scenario(config: RadioConfig, nodes: Sequence[SimNode], duration_ms: float,
                 seed: int, base_time: dt.datetime = DEFAULT_BASE_TIME) -> SimTrace:
    """Simulate all advertising and scanning for duration_ms."""
    if duration_ms <= 0:
        raise ValueError("duration must be positive")
    nodes = list(nodes)
    n = len(nodes)
    key_rng = random.Random(seed * 7_368_787 + 1)
    for node in nodes:
        if node.key is None:
            node.key = tcn.generate_daily_key(base_time.date(), key_rng)

    node_rngs = [random.Random(seed * 1_000_003 + i) for i in range(n)]
    rssi_rng = random.Random(seed * 7_368_787 + 2)

    ts = config.scan_interval_ms
    ds = config.scan_window_ms
    tx_ms = config.tx_duration_ms
    n_ch = config.channels
    burst_ms = tx_ms * n_ch
    range_m = config.range_m

    # Per-node scan phase and channel rotation offset.
    phases = [node_rngs[i].uniform(0.0, ts) for i in range(n)]
    offsets = [node_rngs[i].randrange(n_ch) for i in range(n)]

    static = all(len(node.waypoints) == 1 for node in nodes)
    if static:
        positions = [node.position(0.0) for node in nodes]
        in_range: list[list[int]] = [[] for _ in range(n)]
        dist0: dict[tuple[int, int], float] = {}
        for i in range(n):
            xi, yi = positions[i]
            for j in range(i + 1, n):
                xj, yj = positions[j]
                d = math.hypot(xi - xj, yi - yj)
                if d <= range_m:
                    if d <= 0:
                        raise ValueError(
                            f"nodes {nodes[i].node_id} and {nodes[j].node_id} are co-located; "
                            "distances must be positive"
                        )
                    in_range[i].append(j)
                    in_range[j].append(i)
                    dist0[(i, j)] = dist0[(j, i)] = d

    # Wall-clock TCN per node, cached per 10-minute interval.
    tcn_cache: list[dict[int, bytes]] = [{} for _ in range(n)]
    base_midnight_offset_s = (
        base_time.hour * 3600 + base_time.minute * 60 + base_time.second
    )

    def tcn_of(i: int, t_ms: float) -> bytes:
        tin = int((base_midnight_offset_s + t_ms / 1000.0) // 600) % 144
        cached = tcn_cache[i].get(tin)
        if cached is None:
            cached = tcn.derive_tcn(nodes[i].key, tin)
            tcn_cache[i][tin] = cached
        return cached

    # Event heap: one stream of advertising events; scan windows are
    # arithmetic, not events. Ties break on (node index, sequence).
    heap: list[tuple[float, int, int]] = []
    tx_counts = [0] * n
    for i in range(n):
        heapq.heappush(heap, (node_rngs[i].uniform(0.0, config.adv_interval_ms), i, 0))

    def window_channel(s: int, t: float) -> Optional[tuple[int, float]]:
        # Which channel is scanner s listening on at time t, and when
        # does the current window end? None when the radio is idle.
        rel = t - phases[s]
        k = math.floor(rel / ts)
        within = rel - k * ts
        if within >= ds:
            return None
        return (k + offsets[s]) % n_ch, phases[s] + k * ts + ds

    records: list[RxRecord] = []
    # Tentative deliveries awaiting the collision horizon: an entry is
    # (event_time, tx_index, {rx_index: (channel, rssi)}).
    pending: list[tuple[float, int, dict[int, tuple[int, int]]]] = []

    def flush(now: float) -> None:
        while pending and pending[0][0] + tx_ms <= now:
            t_evt, tx_idx, deliveries = pending.pop(0)
            for rx_idx, (channel, rssi) in sorted(deliveries.items()):
                records.append(RxRecord(
                    time_ms=t_evt,
                    rx_node=nodes[rx_idx].node_id,
                    tx_node=nodes[tx_idx].node_id,
                    tcn=tcn_of(tx_idx, t_evt),
                    rssi_dbm=rssi,
                    channel=channel,
                ))

    while heap:
        t, i, seq = heapq.heappop(heap)
        if t >= duration_ms:
            continue
        flush(t)
        tx_counts[i] += 1

        deliveries: dict[int, tuple[int, int]] = {}
        if static:
            candidates = in_range[i]
        else:
            candidates = [j for j in range(n) if j != i and _distance(nodes[i], nodes[j], t) <= range_m]
        for s in candidates:
            got = window_channel(s, t)
            if got is None:
                continue
            channel, window_end = got
            sub_start = t + channel * tx_ms
            if sub_start + tx_ms > window_end:
                continue
            if static:
                d = dist0[(i, s)]
            else:
                d = _distance(nodes[i], nodes[s], t)
                if d <= 0:
                    raise ValueError("co-located nodes; distances must be positive")
            deliveries[s] = (channel, rssi_model(d, rssi_rng, config))

        # Collision pass: any other burst within one packet time
        # overlaps on every channel, so shared listeners in range of
        # both senders hear neither.
        for t_other, j, other_deliveries in pending:
            if j == i or t - t_other >= tx_ms:
                continue
            for s in list(deliveries):
                near_j = (s in in_range[j]) if static else (
                    _distance(nodes[j], nodes[s], t) <= range_m
                )
                if near_j:
                    del deliveries[s]
            for s in list(other_deliveries):
                near_i = (s in in_range[i]) if static else (
                    _distance(nodes[i], nodes[s], t) <= range_m
                )
                if near_i:
                    del other_deliveries[s]

        pending.append((t, i, deliveries))
        jitter = node_rngs[i].uniform(0.0, config.adv_jitter_max_ms)
        heapq.heappush(heap, (t + config.adv_interval_ms + jitter, i, seq + 1))

    flush(float("inf"))

    trace = SimTrace(
        config=config, nodes=nodes, duration_ms=duration_ms, seed=seed, base_time=base_time
    )
    trace.records = records
    for i, node in enumerate(nodes):
        on_fraction = ds / ts + (tx_counts[i] * burst_ms) / duration_ms
        trace.energy_fraction[node.node_id] = on_fraction
    return trace


@dataclass
class LatencyStats:
    # ordered (rx, tx) -> discovery latency in ms, or None if the pair
    # was in range but never discovered (censored)
    latencies: dict[tuple[str, str], Optional[float]]

    @property
    def censored(self) -> int:
        return sum(1 for v in self.latencies.values() if v is None)

    def summary(self) -> dict[str, float]:
        observed = sorted(v for v in self.latencies.values() if v is not None)
        if not observed:
            return {}
        def pct(p: float) -> float:
            idx = min(len(observed) - 1, math.ceil(p * len(observed)) - 1)
            return observed[max(idx, 0)]
        return {
            "min": observed[0],
            "median": pct(0.5),
            "p95": pct(0.95),
            "max": observed[-1],
        }


def latency_stats(trace: SimTrace) -> LatencyStats:
    """Discovery latency per ordered pair: first reception minus the
    time the pair entered radio range. Pairs never in range are absent;
    pairs in range but never heard are present as censored."""
    first_rx: dict[tuple[str, str], float] = {}
    for r in trace.records:
        pair = (r.rx_node, r.tx_node)
        if pair not in first_rx:
            first_rx[pair] = r.time_ms
    out: dict[tuple[str, str], Optional[float]] = {}
    for a in trace.nodes:
        for b in trace.nodes:
            if a.node_id == b.node_id:
                continue
            entry = first_time_within_range(a, b, trace.config.range_m, trace.duration_ms)
            if entry is None:
                continue
            rx_t = first_rx.get((a.node_id, b.node_id))
            out[(a.node_id, b.node_id)] = None if rx_t is None else rx_t - entry
    return LatencyStats(out)
