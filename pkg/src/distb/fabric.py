"""Control layer: flow tables, a path-installing controller, and links.

The southbound protocol is abstract: ``PacketIn`` (switch to controller on a
table miss), ``FlowMod`` (controller to switch, one rule each) and
``PortStatus`` (liveness change). Switch and host ids share one id space;
a ``Forward`` port is the id of the next hop.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .kernel import PACKET_ARRIVE, RULE_TIMEOUT, Kernel

ANY = None
DATA, LEDGER, CONTROL = "data", "ledger", "control"
PACKET_IN, FLOW_MOD, PORT_STATUS = "PacketIn", "FlowMod", "PortStatus"
HOST_ARRIVE = "HostArrive"
PATH_HOP = "PathHop"

ROUTE_PRIORITY = 10
BLOCK_PRIORITY = 100


@dataclass(frozen=True)
class FlowMatch:
    src: int | None = ANY
    dst: int | None = ANY
    pkt_kind: str | None = ANY

    def matches(self, pkt) -> bool:
        return ((self.src is None or self.src == pkt.src)
                and (self.dst is None or self.dst == pkt.dst)
                and (self.pkt_kind is None or self.pkt_kind == pkt.kind))

    @property
    def exact(self) -> bool:
        return self.src is not None and self.dst is not None and self.pkt_kind is not None


@dataclass(frozen=True)
class Forward:
    port: int


DROP = "Drop"
TO_CONTROLLER = "ToController"


@dataclass
class FlowRule:
    rule_id: int
    priority: int
    match: FlowMatch
    action: object
    idle_timeout: int
    last_hit: int = 0

    def expired(self, now: int) -> bool:
        return now - self.last_hit > self.idle_timeout


@dataclass
class SouthboundMsg:
    kind: str
    switch: int
    body: object = None


class FlowTable:
    """Priority match-action table.

    Fully specified matches are indexed by their key; wildcard rules are
    scanned. Highest priority wins, ties go to the lowest rule id.
    """

    def __init__(self):
        self.rules = {}
        self._exact = {}
        self._wild = []

    def __len__(self):
        return len(self.rules)

    def install(self, rule: FlowRule) -> FlowRule | None:
        replaced = None
        for r in self._candidates_for(rule.match):
            if r.priority == rule.priority and r.match == rule.match:
                replaced = r
                break
        if replaced is not None:
            self.remove(replaced.rule_id)
        self.rules[rule.rule_id] = rule
        m = rule.match
        if m.exact:
            self._exact.setdefault((m.src, m.dst, m.pkt_kind), []).append(rule)
        else:
            self._wild.append(rule)
        return replaced

    def _candidates_for(self, m: FlowMatch):
        if m.exact:
            return list(self._exact.get((m.src, m.dst, m.pkt_kind), ()))
        return list(self._wild)

    def remove(self, rule_id: int) -> None:
        rule = self.rules.pop(rule_id)
        m = rule.match
        if m.exact:
            key = (m.src, m.dst, m.pkt_kind)
            bucket = self._exact[key]
            bucket.remove(rule)
            if not bucket:
                del self._exact[key]
        else:
            self._wild.remove(rule)

    def lookup(self, pkt, now: int) -> FlowRule | None:
        """Best non-expired matching rule; pure, does not touch ``last_hit``."""
        best = None
        for r in self._exact.get((pkt.src, pkt.dst, pkt.kind), ()):
            if not r.expired(now) and (
                best is None or (-r.priority, r.rule_id) < (-best.priority, best.rule_id)
            ):
                best = r
        for r in self._wild:
            if r.match.matches(pkt) and not r.expired(now) and (
                best is None or (-r.priority, r.rule_id) < (-best.priority, best.rule_id)
            ):
                best = r
        return best

    def purge(self, now: int) -> int:
        dead = [rid for rid, r in self.rules.items() if r.expired(now)]
        for rid in dead:
            self.remove(rid)
        return len(dead)


@dataclass
class Switch:
    id: int
    x: float = 0.0
    y: float = 0.0
    alive: bool = True
    table: FlowTable = field(default_factory=FlowTable)


def match_packet(switch: Switch, pkt, now: int):
    """Action for ``pkt`` at ``switch``; a miss returns ``TO_CONTROLLER``.

    A hit refreshes the rule's idle timer.
    """
    rule = switch.table.lookup(pkt, now)
    if rule is None:
        return TO_CONTROLLER
    rule.last_hit = now
    return rule.action


class Link:
    """Directed link with propagation latency and a packets/s service rate.

    Packets are served FIFO; a packet that would find ``queue_limit`` or more
    packets waiting ahead of it is dropped.
    """

    __slots__ = ("a", "b", "latency", "capacity", "queue_limit", "alive",
                 "busy_until", "service", "sent", "dropped")

    def __init__(self, a, b, latency=5, capacity=1000.0, queue_limit=64):
        self.a = a
        self.b = b
        self.latency = latency
        self.capacity = capacity
        self.queue_limit = queue_limit
        self.alive = True
        self.busy_until = 0.0
        self.service = 1000.0 / capacity if capacity else 0.0
        self.sent = 0
        self.dropped = 0

    def transmit(self, now: int) -> int | None:
        """Arrival tick at the far end, or ``None`` if the queue is full."""
        start = self.busy_until if self.busy_until > now else float(now)
        if self.service and (start - now) / self.service >= self.queue_limit - 1e-9:
            self.dropped += 1
            return None
        self.busy_until = start + self.service
        self.sent += 1
        return int(math.floor(self.busy_until + 1e-9)) + self.latency


class NoRoute(Exception):
    pass


def shortest_path(adj: dict, src: int, dst: int, alive=None) -> list | None:
    """Hop-count BFS; neighbours are expanded in ascending id order."""
    if src == dst:
        return [src]
    prev = {src: None}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in sorted(adj.get(u, ())):
            if v in prev or (alive is not None and not alive(v)):
                continue
            prev[v] = u
            if v == dst:
                path = [v]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            q.append(v)
    return None


class Controller:
    """Single SDN controller.

    ``credential_check`` (distb mode) is asked about the first packet of every
    new flow; a failing flow gets a high-priority Drop rule at its ingress
    switch instead of a path.
    """

    def __init__(self, switches: dict, adj: dict, host_switch: dict, mode="core",
                 idle_timeout=10_000, credential_check=None):
        self.switches = switches
        self.adj = adj
        self.host_switch = host_switch
        self.mode = mode
        self.idle_timeout = idle_timeout
        self.credential_check = credential_check
        self._rule_ids = 0
        self.packet_ins = 0
        self.flow_mods = 0
        self.blocked_flows = 0

    def next_rule_id(self) -> int:
        self._rule_ids += 1
        return self._rule_ids

    def _alive(self, sid):
        sw = self.switches.get(sid)
        return sw is not None and sw.alive

    def handle_packet_in(self, msg: SouthboundMsg, now: int = 0) -> list:
        if msg.kind != PACKET_IN:
            raise ValueError(f"expected PacketIn, got {msg.kind}")
        self.packet_ins += 1
        pkt = msg.body
        ingress = msg.switch
        if self.mode == "distb" and self.credential_check is not None and not self.credential_check(pkt):
            self.blocked_flows += 1
            rule = FlowRule(self.next_rule_id(), BLOCK_PRIORITY, FlowMatch(pkt.src, ANY, ANY),
                            DROP, self.idle_timeout, now)
            self.flow_mods += 1
            return [SouthboundMsg(FLOW_MOD, ingress, rule)]
        egress = self.host_switch.get(pkt.dst)
        if egress is None or not self._alive(egress):
            raise NoRoute(pkt.dst)
        path = shortest_path(self.adj, ingress, egress, self._alive)
        if path is None:
            raise NoRoute(pkt.dst)
        match = FlowMatch(pkt.src, pkt.dst, pkt.kind)
        mods = []
        for i, sid in enumerate(path):
            nxt = path[i + 1] if i + 1 < len(path) else pkt.dst
            rule = FlowRule(self.next_rule_id(), ROUTE_PRIORITY, match, Forward(nxt),
                            self.idle_timeout, now)
            mods.append(SouthboundMsg(FLOW_MOD, sid, rule))
        self.flow_mods += len(mods)
        return mods


def install_rule(switch: Switch, rule: FlowRule, counters: dict | None = None) -> bool:
    if not switch.alive:
        if counters is not None:
            counters["flowmods_lost"] = counters.get("flowmods_lost", 0) + 1
        return False
    switch.table.install(rule)
    return True


class Fabric:
    """Event-driven data plane.

    Callers provide three hooks: ``on_host`` (packet reached a host),
    ``on_drop`` (packet lost, with a reason of ``no_route``, ``congestion`` or
    ``rule``) and optionally ``on_hop`` (called once per link traversal).
    """

    def __init__(self, kernel: Kernel, controller: Controller, links: dict,
                 control_latency=2, on_host=None, on_drop=None, on_hop=None):
        self.kernel = kernel
        self.controller = controller
        self.switches = controller.switches
        self.links = links
        self.control_latency = control_latency
        self.on_host = on_host
        self.on_drop = on_drop
        self.on_hop = on_hop
        self.counters = {"packet_ins": 0, "flow_mods": 0, "flowmods_lost": 0,
                         "reinjected": 0, "no_route": 0}
        self.log = []
        self.record_log = False
        kernel.on(PACKET_ARRIVE, self._on_switch)
        kernel.on(HOST_ARRIVE, self._on_host)
        kernel.on(PACKET_IN, self._on_packet_in)
        kernel.on(FLOW_MOD, self._on_flow_mod)
        kernel.on(RULE_TIMEOUT, self._on_purge)
        kernel.on(PATH_HOP, self._on_path_hop)

    def start_purge(self, period: int) -> None:
        self._purge_period = period
        self.kernel.after(period, RULE_TIMEOUT, 0)

    def _on_purge(self, ev):
        now = self.kernel.now
        for sw in self.switches.values():
            sw.table.purge(now)
        self.kernel.after(self._purge_period, RULE_TIMEOUT, 0)

    def inject(self, pkt, switch_id: int, delay: int = 0) -> None:
        """Hand ``pkt`` to ``switch_id`` after ``delay`` ms (wireless access hop)."""
        if self.on_hop is not None:
            self.on_hop(pkt)
        self.kernel.after(delay, PACKET_ARRIVE, switch_id, pkt)

    def send_from_host(self, host: int, pkt) -> None:
        sw = self.controller.host_switch[host]
        link = self.links[(host, sw)]
        self._traverse(link, pkt, sw, PACKET_ARRIVE)

    def _traverse(self, link: Link, pkt, target: int, kind: str) -> None:
        if not link.alive:
            self._drop(pkt, "no_route")
            return
        t = link.transmit(self.kernel.now)
        if t is None:
            self._drop(pkt, "congestion")
            return
        if self.on_hop is not None:
            self.on_hop(pkt)
        self.kernel.at(t, kind, target, pkt)

    def _drop(self, pkt, reason):
        if reason == "no_route":
            self.counters["no_route"] += 1
        if self.on_drop is not None:
            self.on_drop(pkt, reason)

    def _on_switch(self, ev):
        sw = self.switches.get(ev.target)
        pkt = ev.payload
        if sw is None or not sw.alive:
            self._drop(pkt, "no_route")
            return
        action = match_packet(sw, pkt, self.kernel.now)
        if action is TO_CONTROLLER:
            self.counters["packet_ins"] += 1
            if self.record_log:
                self.log.append((self.kernel.now, PACKET_IN, sw.id, pkt.pkt_id))
            self.kernel.after(self.control_latency, PACKET_IN, sw.id,
                              SouthboundMsg(PACKET_IN, sw.id, pkt))
        elif action is DROP:
            self._drop(pkt, "rule")
        else:
            nxt = action.port
            link = self.links.get((sw.id, nxt))
            if link is None:
                self._drop(pkt, "no_route")
                return
            kind = PACKET_ARRIVE if nxt in self.switches else HOST_ARRIVE
            self._traverse(link, pkt, nxt, kind)

    def _on_packet_in(self, ev):
        msg = ev.payload
        pkt = msg.body
        try:
            mods = self.controller.handle_packet_in(msg, self.kernel.now)
        except NoRoute:
            self._drop(pkt, "no_route")
            return
        for mod in mods:
            self.counters["flow_mods"] += 1
            if self.record_log:
                self.log.append((self.kernel.now, FLOW_MOD, mod.switch, mod.body.rule_id))
            self.kernel.after(self.control_latency, FLOW_MOD, mod.switch, mod)
        # scheduled after the FlowMods, so the rules are in place on arrival
        self.counters["reinjected"] += 1
        self.kernel.after(self.control_latency, PACKET_ARRIVE, msg.switch, pkt)

    def _on_flow_mod(self, ev):
        mod = ev.payload
        sw = self.switches[mod.switch]
        install_rule(sw, mod.body, self.counters)

    def _on_host(self, ev):
        if self.on_host is not None:
            self.on_host(ev.target, ev.payload)

    def forward(self, pkt, path: list) -> None:
        """Send ``pkt`` along an explicit node path, bypassing flow tables.

        A zero-length path delivers immediately at the current tick.
        """
        if len(path) <= 1:
            self.kernel.after(0, HOST_ARRIVE, path[0] if path else pkt.dst, pkt)
            return
        self.kernel.after(0, PATH_HOP, path[0], (pkt, list(path), 0))

    def _on_path_hop(self, ev):
        pkt, path, i = ev.payload
        link = self.links.get((path[i], path[i + 1]))
        if link is None or not link.alive:
            self._drop(pkt, "no_route")
            return
        t = link.transmit(self.kernel.now)
        if t is None:
            self._drop(pkt, "congestion")
            return
        if i + 2 == len(path):
            self.kernel.at(t, HOST_ARRIVE, path[-1], pkt)
        else:
            self.kernel.at(t, PATH_HOP, path[i + 1], (pkt, path, i + 1))

    def northbound(self) -> dict:
        """Structured snapshot of tables, topology and counters."""
        now = self.kernel.now
        tables = {}
        for sid, sw in sorted(self.switches.items()):
            tables[sid] = [
                {
                    "rule_id": r.rule_id,
                    "priority": r.priority,
                    "match": {"src": r.match.src, "dst": r.match.dst, "kind": r.match.pkt_kind},
                    "action": r.action if isinstance(r.action, str) else f"Forward({r.action.port})",
                    "idle_timeout_ms": r.idle_timeout,
                    "last_hit_ms": r.last_hit,
                }
                for r in sorted(sw.table.rules.values(), key=lambda r: r.rule_id)
                if not r.expired(now)
            ]
        return {
            "now_ms": now,
            "mode": self.controller.mode,
            "switches": {sid: {"alive": sw.alive, "pos": [round(sw.x, 1), round(sw.y, 1)]}
                         for sid, sw in sorted(self.switches.items())},
            "links": [
                {"a": a, "b": b, "latency_ms": l.latency, "capacity_pps": l.capacity,
                 "sent": l.sent, "dropped": l.dropped, "alive": l.alive}
                for (a, b), l in sorted(self.links.items())
            ],
            "hosts": {h: s for h, s in sorted(self.controller.host_switch.items())},
            "flow_tables": tables,
            "counters": dict(self.counters, blocked_flows=self.controller.blocked_flows),
        }
