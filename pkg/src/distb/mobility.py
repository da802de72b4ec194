"""Perception layer: random-waypoint sensors and the packets they emit."""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

SENSOR = "sensor"
GATEWAY = "gateway"
PAPER_PACKET_SIZES = (256, 800, 1024)


@dataclass
class Position:
    x: float
    y: float

    def dist(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass
class WaypointState:
    waypoint: Position
    speed: float
    pause_until: int = 0


@dataclass
class Field:
    width: float = 3000.0
    height: float = 3000.0
    speed_min: float = 1.0
    speed_max: float = 20.0
    pause_min_ms: int = 0
    pause_max_ms: int = 2000

    def random_point(self, rng) -> Position:
        return Position(rng.uniform(0.0, self.width), rng.uniform(0.0, self.height))

    def contains(self, p: Position) -> bool:
        return 0.0 <= p.x <= self.width and 0.0 <= p.y <= self.height


@dataclass
class SensorNode:
    id: int
    pos: Position
    motion: WaypointState
    role: str = SENSOR
    gen_interval: int = 500
    packet_size: int = 256
    radio_range: float = 250.0
    alive: bool = True
    rng: object = None


def new_sensor(node_id, rng, fld: Field, **kw) -> SensorNode:
    pos = fld.random_point(rng)
    motion = WaypointState(fld.random_point(rng), rng.uniform(fld.speed_min, fld.speed_max), 0)
    return SensorNode(node_id, pos, motion, rng=rng, **kw)


def step_mobility(node: SensorNode, dt: int, now: int, fld: Field) -> Position:
    """Advance ``node`` by ``dt`` ms ending at time ``now``.

    Travel is straight-line at the current speed. Reaching the waypoint starts
    a uniform pause; the next waypoint and speed are drawn from the node's own
    stream when the pause is over (immediately if the pause is zero).
    """
    if dt <= 0 or not node.alive:
        return node.pos
    m = node.motion
    start = now - dt
    if m.pause_until > start:
        if m.pause_until >= now:
            return node.pos
        dt = now - m.pause_until
    pos = node.pos
    if pos.x == m.waypoint.x and pos.y == m.waypoint.y:
        _new_leg(node, fld)
        return node.pos
    remaining = pos.dist(m.waypoint)
    travel = m.speed * dt / 1000.0
    if travel >= remaining:
        node.pos = Position(m.waypoint.x, m.waypoint.y)
        arrive = now - int((travel - remaining) / m.speed * 1000.0)
        pause = node.rng.uniform(fld.pause_min_ms, fld.pause_max_ms) if node.rng else 0
        m.pause_until = arrive + int(pause)
        if m.pause_until <= now:
            _new_leg(node, fld)
    else:
        f = travel / remaining
        x = pos.x + (m.waypoint.x - pos.x) * f
        y = pos.y + (m.waypoint.y - pos.y) * f
        # guard against float drift past the field edge
        node.pos = Position(min(max(x, 0.0), fld.width), min(max(y, 0.0), fld.height))
    return node.pos


def _new_leg(node: SensorNode, fld: Field) -> None:
    m = node.motion
    m.waypoint = fld.random_point(node.rng)
    m.speed = node.rng.uniform(fld.speed_min, fld.speed_max)


class DataPacket:
    """A packet in flight.

    ``tampered`` is ground truth for reporting only; forwarding and
    verification code must not read it.
    """

    __slots__ = ("pkt_id", "src", "dst", "size", "created", "payload",
                 "payload_digest", "tampered", "kind", "tx", "body", "junk")

    def __init__(self, pkt_id, src, dst, size, created, payload, payload_digest,
                 kind="data", tx=None, body=None, junk=False):
        self.pkt_id = pkt_id
        self.src = src
        self.dst = dst
        self.size = size
        self.created = created
        self.payload = payload
        self.payload_digest = payload_digest
        self.tampered = False
        self.kind = kind
        self.tx = tx
        self.body = body
        self.junk = junk


_pkt_ids = itertools.count(1)


@dataclass
class PacketFactory:
    """Issues packet ids; one per simulated world keeps runs independent."""

    counter: itertools.count = field(default_factory=lambda: itertools.count(1))

    def next_id(self) -> int:
        return next(self.counter)


def make_payload(pkt_id: int, src: int, t: int, size: int) -> bytes:
    head = pkt_id.to_bytes(8, "big") + src.to_bytes(8, "big") + t.to_bytes(8, "big")
    return head + bytes(size - len(head)) if size >= len(head) else head[:size]


def generate_packet(node: SensorNode, t: int, dst: int, factory: PacketFactory | None = None) -> DataPacket:
    if not node.alive:
        raise RuntimeError(f"node {node.id} is dead and cannot generate packets")
    if node.role != SENSOR:
        raise RuntimeError(f"node {node.id} is a {node.role}, not a sensor")
    pkt_id = factory.next_id() if factory is not None else next(_pkt_ids)
    payload = make_payload(pkt_id, node.id, t, node.packet_size)
    return DataPacket(pkt_id, node.id, dst, node.packet_size, t, payload,
                      hashlib.sha256(payload).digest())


def neighbors(node, world) -> set:
    """Alive nodes within ``node.radio_range`` of ``node``, excluding itself."""
    r = node.radio_range
    out = set()
    for other in world:
        if other.id == node.id or not other.alive:
            continue
        if node.pos.dist(other.pos) <= r:
            out.add(other.id)
    return out
