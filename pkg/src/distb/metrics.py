"""Windowed throughput, security rate and node-failure accounting.

Count columns in samples and CSV rows are cumulative since t=0, which keeps
``security_rate_pct`` inside [0, 100] (a packet sent in one window may be
delivered in the next). ``throughput_pps`` uses only the window's deliveries.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

CSV_COLUMNS = [
    "variant", "window_end_ms", "sent", "delivered", "delivered_verified",
    "dropped_no_route", "dropped_congestion", "dropped_security",
    "insecure_delivered", "throughput_pps", "security_rate_pct", "node_failure_pct",
]

DROP_KINDS = ("no_route", "congestion", "security")


@dataclass
class Counters:
    sent: int = 0
    delivered: int = 0
    delivered_verified: int = 0
    dropped_no_route: int = 0
    dropped_congestion: int = 0
    dropped_security: int = 0
    insecure_delivered: int = 0
    nodes_total: int = 0
    nodes_failed: int = 0

    def dropped(self) -> int:
        return self.dropped_no_route + self.dropped_congestion + self.dropped_security

    def copy(self) -> "Counters":
        return Counters(**asdict(self))


@dataclass
class MetricSample:
    window_end: int
    variant: str
    throughput_pps: float
    security_rate_pct: float
    node_failure_pct: float
    counters: Counters
    in_flight: int
    window_delivered: int
    conserved: bool

    def row(self) -> list:
        c = self.counters
        return [
            self.variant, self.window_end, c.sent, c.delivered, c.delivered_verified,
            c.dropped_no_route, c.dropped_congestion, c.dropped_security,
            c.insecure_delivered, f"{self.throughput_pps:.4f}",
            f"{self.security_rate_pct:.4f}", f"{self.node_failure_pct:.4f}",
        ]


class DoubleCount(AssertionError):
    pass


class Recorder:
    """Per-run counters. Every sent packet gets exactly one outcome."""

    def __init__(self, variant: str, nodes_total: int, window_ms: int = 10_000, keep_log=False):
        self.variant = variant
        self.window_ms = window_ms
        self.total = Counters(nodes_total=nodes_total)
        self.in_flight = set()
        self.failed = set()
        self.samples = []
        self._delivered_at_window_start = 0
        self._window_start = 0
        self.keep_log = keep_log
        self.log = []
        self.extra = {"junk_sent": 0, "junk_delivered": 0, "junk_dropped": 0,
                      "ledger_sent": 0, "ledger_delivered": 0, "ledger_dropped": 0}

    def record_sent(self, pkt) -> None:
        if pkt.pkt_id in self.in_flight:
            raise DoubleCount(f"packet {pkt.pkt_id} sent twice")
        self.in_flight.add(pkt.pkt_id)
        self.total.sent += 1

    def _finish(self, pkt_id):
        try:
            self.in_flight.remove(pkt_id)
        except KeyError:
            raise DoubleCount(f"packet {pkt_id} already has an outcome") from None

    def record_delivery(self, pkt, verified: bool, t: int = 0) -> None:
        self._finish(pkt.pkt_id)
        c = self.total
        c.delivered += 1
        if verified:
            c.delivered_verified += 1
        else:
            c.insecure_delivered += 1
        if self.keep_log:
            self.log.append((t, pkt.pkt_id, "delivered", pkt.payload, pkt.payload_digest))

    def record_drop(self, pkt, reason: str, t: int = 0) -> None:
        self._finish(pkt.pkt_id)
        if reason == "no_route":
            self.total.dropped_no_route += 1
        elif reason == "congestion":
            self.total.dropped_congestion += 1
        elif reason == "security":
            self.total.dropped_security += 1
        else:
            raise ValueError(f"unknown drop reason {reason!r}")
        if self.keep_log:
            self.log.append((t, pkt.pkt_id, reason, None, None))

    def record_node_failure(self, node_id: int) -> None:
        if node_id in self.failed:
            raise DoubleCount(f"node {node_id} failed twice")
        self.failed.add(node_id)
        self.total.nodes_failed += 1

    def conserved(self) -> bool:
        c = self.total
        return c.sent == c.delivered + c.dropped() + len(self.in_flight)

    def close_window(self, t: int) -> MetricSample:
        c = self.total
        span_s = max(t - self._window_start, 1) / 1000.0
        window_delivered = c.delivered - self._delivered_at_window_start
        sample = MetricSample(
            window_end=t,
            variant=self.variant,
            throughput_pps=window_delivered / span_s,
            security_rate_pct=100.0 * c.delivered_verified / max(c.sent, 1),
            node_failure_pct=100.0 * c.nodes_failed / c.nodes_total if c.nodes_total else 0.0,
            counters=c.copy(),
            in_flight=len(self.in_flight),
            window_delivered=window_delivered,
            conserved=self.conserved(),
        )
        self._delivered_at_window_start = c.delivered
        self._window_start = t
        self.samples.append(sample)
        return sample


def write_csv(samples, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in samples:
        w.writerow(s.row())


def csv_text(samples) -> str:
    buf = io.StringIO()
    write_csv(samples, buf)
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
