"""Scenario runner: builds one world per variant and drives it to the end.

Layout: switches sit on a near-square grid covering the field and are wired
to their 4-neighbours. Gateways and miners are hosts wired to spread-out
switches. Sensors move by random waypoint and reach a gateway directly when
one is within radio range, otherwise through the nearest switch in
access-point range. Intruders are wired to the switch nearest a random spot.

``core`` runs the same fabric with no ledger and no credential checks.
``distb`` signs every reading, checks flow credentials at the controller,
verifies digests at the gateway, and commits verified readings through the
consensus rounds. Ledger traffic shares the fabric with data traffic.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from . import adversary as adv
from .consensus import Consensus, Miner
from .crypto import get_scheme, node_secret
from .fabric import (
    DATA, HOST_ARRIVE, LEDGER, Controller, Fabric, Link, Switch,
)
from .kernel import (
    ATTACK_ATTEMPT, METRIC_WINDOW, MOBILITY_STEP, PACKET_SEND, Kernel,
)
from .ledger import Chain, make_tx
from .metrics import Recorder
from .mobility import (
    GATEWAY, SENSOR, DataPacket, Field, PacketFactory, generate_packet, new_sensor, step_mobility,
)
from .scenario import Scenario

SWITCH_BASE = 1000
GATEWAY_BASE = 2000
MINER_BASE = 3000
SENSOR_BASE = 10_000
ATTACKER_BASE = 50_000

STREAM_LAYOUT = 90_001
STREAM_TAMPER = 90_002
STREAM_ATTEMPT = 90_003
STREAM_TARGET = 90_004
STREAM_SUCCESS = 90_005
STREAM_FORGE = 90_006
STREAM_FLOOD = 90_007

TX_FLUSH = "TxFlush"
HOST_LINK_LATENCY = 1
VOTE_BYTES = 113


@dataclass
class Host:
    id: int
    role: str
    x: float
    y: float
    switch: int
    alive: bool = True

    @property
    def pos(self):
        return (self.x, self.y)


@dataclass
class RunResult:
    variant: str
    scenario: Scenario
    samples: list
    recorder: Recorder
    world: "World"
    wall_time_s: float = 0.0
    events: int = 0
    attack_log: list = field(default_factory=list)
    rounds_log: list = field(default_factory=list)


def grid_shape(n: int) -> tuple[int, int]:
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


class FabricTransport:
    """Carries consensus messages as ledger packets over the fabric."""

    def __init__(self, world: "World"):
        self.world = world
        self.consensus = None

    def send(self, src, dst, msg, size):
        w = self.world
        pkt = DataPacket(w.packets.next_id(), src, dst, size, w.kernel.now, b"", b"",
                         kind=LEDGER, body=msg)
        w.recorder.extra["ledger_sent"] += 1
        w.fabric.send_from_host(src, pkt)


class World:
    def __init__(self, scn: Scenario, variant: str, trace=False, keep_log=False):
        if variant not in ("core", "distb"):
            raise ValueError(f"variant must be core or distb, got {variant!r}")
        self.scn = scn
        self.variant = variant
        self.distb = variant == "distb"
        self.kernel = k = Kernel(root_seed=scn.run.seed, trace=trace)
        self.packets = PacketFactory()
        self.scheme = get_scheme(scn.run.fast_crypto)
        self.end_ms = int(round(scn.run.duration_s * 1000))
        self.window_ms = max(1, int(round(scn.run.window_s * 1000)))
        self.attack = scn.attack
        self.attack_start = int(round(scn.attack.start_s * 1000))
        self.attack_log = []
        self.rounds_log = [] if scn.outputs.rounds_log else None
        t = scn.traffic
        self.area = Field(scn.field.width_m, scn.field.height_m, t.speed_min_mps,
                          t.speed_max_mps, int(t.pause_min_s * 1000), int(t.pause_max_s * 1000))
        self.recorder = Recorder(variant, scn.nodes_total, self.window_ms, keep_log=keep_log)
        for sid in (STREAM_LAYOUT, STREAM_TAMPER, STREAM_ATTEMPT, STREAM_TARGET,
                    STREAM_SUCCESS, STREAM_FORGE, STREAM_FLOOD):
            k.register_stream(sid)
        self._build_topology()
        self._build_nodes()
        self._build_ledger()
        k.on(PACKET_SEND, self._on_generate)
        k.on(MOBILITY_STEP, self._on_mobility)
        k.on(METRIC_WINDOW, self._on_window)
        k.on(ATTACK_ATTEMPT, self._on_attack)
        k.on(TX_FLUSH, self._on_flush)
        self._schedule_initial()

    # construction

    def _build_topology(self):
        scn = self.scn
        rows, cols = grid_shape(scn.nodes.switches)
        w, h = scn.field.width_m, scn.field.height_m
        self.switches = {}
        adj = {}
        for r in range(rows):
            for c in range(cols):
                sid = SWITCH_BASE + r * cols + c
                self.switches[sid] = Switch(sid, (c + 0.5) * w / cols, (r + 0.5) * h / rows)
                adj[sid] = set()
        fb = scn.fabric
        self.links = {}

        def wire(a, b, latency):
            self.links[(a, b)] = Link(a, b, latency, fb.link_capacity_pps, fb.queue_limit)
            self.links[(b, a)] = Link(b, a, latency, fb.link_capacity_pps, fb.queue_limit)

        for r in range(rows):
            for c in range(cols):
                sid = SWITCH_BASE + r * cols + c
                if c + 1 < cols:
                    wire(sid, sid + 1, fb.link_latency_ms)
                    adj[sid].add(sid + 1)
                    adj[sid + 1].add(sid)
                if r + 1 < rows:
                    wire(sid, sid + cols, fb.link_latency_ms)
                    adj[sid].add(sid + cols)
                    adj[sid + cols].add(sid)
        self.adj = adj
        self.switch_ids = sorted(self.switches)
        self.host_switch = {}
        self.hosts = {}
        n_sw = len(self.switch_ids)

        def attach(hid, role, sw):
            s = self.switches[sw]
            self.hosts[hid] = Host(hid, role, s.x, s.y, sw)
            self.host_switch[hid] = sw
            wire(hid, sw, HOST_LINK_LATENCY)

        for i in range(scn.nodes.gateways):
            attach(GATEWAY_BASE + i, GATEWAY, self.switch_ids[int((i + 0.5) * n_sw / scn.nodes.gateways) % n_sw])
        for i in range(scn.nodes.miners):
            attach(MINER_BASE + i, "miner", self.switch_ids[int(i * n_sw / scn.nodes.miners) % n_sw])
        layout = self.kernel.rng(STREAM_LAYOUT)
        self.attackers = []
        for i in range(scn.attack.attacker_count):
            p = self.area.random_point(layout)
            sw = self._nearest_switch(p.x, p.y, limit=None)
            attach(ATTACKER_BASE + i, "attacker", sw)
            self.attackers.append(ATTACKER_BASE + i)
        self.gateway_ids = [GATEWAY_BASE + i for i in range(scn.nodes.gateways)]
        self.miner_ids = [MINER_BASE + i for i in range(scn.nodes.miners)]

        fb_idle = int(scn.fabric.idle_timeout_s * 1000)
        self.controller = Controller(self.switches, adj, self.host_switch, self.variant,
                                     fb_idle, self._credential_ok if self.distb else None)
        self.fabric = Fabric(self.kernel, self.controller, self.links, fb.control_latency_ms,
                             on_host=self._on_host, on_drop=self._on_drop,
                             on_hop=self._on_hop)
        self.fabric.start_purge(max(fb_idle, 1))

    def _build_nodes(self):
        scn = self.scn
        t = scn.traffic
        self.sensors = {}
        for i in range(scn.nodes.sensors):
            nid = SENSOR_BASE + i
            rng = self.kernel.register_stream(nid)
            self.sensors[nid] = new_sensor(nid, rng, self.area, gen_interval=t.gen_interval_ms,
                                           packet_size=t.packet_size, radio_range=t.radio_range_m)
        self.sensor_ids = sorted(self.sensors)
        self.keys = {}
        self.registry = {}
        if self.distb:
            for nid in self.sensor_ids + self.gateway_ids + self.miner_ids:
                sk, pk = self.scheme.keypair(node_secret(scn.run.seed, nid))
                self.keys[nid] = sk
                self.registry[nid] = pk
        # compromise targets, in a fixed order
        self.targets = self.sensor_ids + self.gateway_ids + self.miner_ids
        self.alive_targets = list(self.targets)

    def _build_ledger(self):
        self.consensus = None
        self.tx_buffers = {g: [] for g in self.gateway_ids}
        if not self.distb:
            return
        lg = self.scn.ledger
        miners = []
        n_bad = self.attack.compromised_miners
        for i, mid in enumerate(self.miner_ids):
            replica = Chain(self.scheme, self.registry, lg.max_block_txs)
            miners.append(Miner(mid, self.keys[mid], self.registry[mid], replica,
                                compromised=i >= len(self.miner_ids) - n_bad))
        self.miners = {m.id: m for m in miners}
        self.transport = FabricTransport(self)
        self.consensus = Consensus(self.kernel, miners, self.transport, lg.tau,
                                   lg.round_period_ms, lg.max_block_txs,
                                   audit=self.rounds_log)
        self.transport.consensus = self.consensus

    def _schedule_initial(self):
        k = self.kernel
        for nid in self.sensor_ids:
            s = self.sensors[nid]
            k.at(s.rng.randbelow(s.gen_interval), PACKET_SEND, nid)
        if self.sensor_ids:
            k.at(self.scn.traffic.mobility_step_ms, MOBILITY_STEP, 0)
        k.at(self.window_ms, METRIC_WINDOW, 0)
        if self.distb:
            self.consensus.start()
            k.at(self.scn.ledger.tx_flush_ms, TX_FLUSH, 0)
        a = self.attack
        if a.flood_rate > 0:
            for aid in self.attackers:
                k.at(self.attack_start, ATTACK_ATTEMPT, aid, ("flood", 0))
        if a.compromise_attempt_rate > 0:
            self._next_compromise(self.attack_start)
        if self.distb and a.forge_block_rate > 0 and a.compromised_miners > 0:
            self._next_forge(self.attack_start)

    # helpers

    def _nearest_switch(self, x, y, limit):
        best, best_d = None, None
        for sid in self.switch_ids:
            sw = self.switches[sid]
            if not sw.alive:
                continue
            d = math.hypot(sw.x - x, sw.y - y)
            if (limit is None or d <= limit) and (best_d is None or d < best_d):
                best, best_d = sid, d
        return best

    def _nearest_gateway(self, x, y):
        best, best_d = None, None
        for gid in self.gateway_ids:
            g = self.hosts[gid]
            if not g.alive:
                continue
            d = math.hypot(g.x - x, g.y - y)
            if best_d is None or d < best_d:
                best, best_d = gid, d
        return best, best_d

    def _credential_ok(self, pkt) -> bool:
        if pkt.kind == LEDGER:
            return pkt.src in self.registry
        tx = pkt.tx
        if tx is None or tx.origin != pkt.src or tx.payload_digest != pkt.payload_digest:
            return False
        if self.registry.get(pkt.src) != tx.pubkey:
            return False
        return self.scheme.verify(tx.pubkey, tx.body(), tx.signature)

    # traffic

    def _on_generate(self, ev):
        node = self.sensors[ev.target]
        if not node.alive:
            return
        k = self.kernel
        now = k.now
        k.at(now + node.gen_interval, PACKET_SEND, node.id)
        gid, dist = self._nearest_gateway(node.pos.x, node.pos.y)
        pkt = generate_packet(node, now, gid if gid is not None else -1, self.packets)
        if self.distb:
            pkt.tx = make_tx(self.scheme, self.keys[node.id], self.registry[node.id],
                             node.id, pkt.pkt_id, pkt.payload_digest, now)
        rec = self.recorder
        rec.record_sent(pkt)
        if gid is None:
            rec.record_drop(pkt, "no_route", now)
            return
        access = self.scn.fabric.access_latency_ms
        if dist <= node.radio_range:
            self._on_hop(pkt)
            k.at(now + access, HOST_ARRIVE, gid, pkt)
            return
        sw = self._nearest_switch(node.pos.x, node.pos.y, self.scn.traffic.ap_range_m)
        if sw is None:
            rec.record_drop(pkt, "no_route", now)
            return
        self.fabric.inject(pkt, sw, access)

    def _on_hop(self, pkt):
        a = self.attack
        if (a.tamper_prob > 0.0 and pkt.kind == DATA and not pkt.junk
                and self.kernel.now >= self.attack_start):
            rng = self.kernel.rng(STREAM_TAMPER)
            # two draws per hop whatever the outcome, so runs that differ only
            # in tamper_prob see the same coin for every hop
            u, pos = rng.random(), rng.next_u64()
            if u < a.tamper_prob:
                adv.tamper(pkt, pos)

    def _on_drop(self, pkt, reason):
        rec = self.recorder
        if pkt.kind == LEDGER:
            rec.extra["ledger_dropped"] += 1
        elif pkt.junk:
            rec.extra["junk_dropped"] += 1
        else:
            rec.record_drop(pkt, "security" if reason == "rule" else reason, self.kernel.now)

    def _on_host(self, host_id, pkt):
        rec = self.recorder
        host = self.hosts.get(host_id)
        if host is None or not host.alive:
            self._on_drop(pkt, "no_route")
            return
        if pkt.kind == LEDGER:
            rec.extra["ledger_delivered"] += 1
            msg = pkt.body
            if msg[0] == "txs":
                self.consensus.submit(msg[1])
            else:
                self.consensus.deliver(host_id, msg)
            return
        if pkt.junk:
            rec.extra["junk_delivered"] += 1
            return
        if host.role != GATEWAY:
            self._on_drop(pkt, "no_route")
            return
        digest_ok = hashlib.sha256(pkt.payload).digest() == pkt.payload_digest
        now = self.kernel.now
        if self.distb:
            tx = pkt.tx
            if (not digest_ok or tx is None or tx.payload_digest != pkt.payload_digest
                    or not self.scheme.verify(tx.pubkey, tx.body(), tx.signature)):
                rec.record_drop(pkt, "security", now)
                return
            rec.record_delivery(pkt, True, now)
            self.tx_buffers[host_id].append(tx)
        else:
            rec.record_delivery(pkt, digest_ok, now)

    def _on_flush(self, ev):
        now = self.kernel.now
        self.kernel.at(now + self.scn.ledger.tx_flush_ms, TX_FLUSH, 0)
        for gid in self.gateway_ids:
            buf = self.tx_buffers[gid]
            if not buf:
                continue
            g = self.hosts[gid]
            self.tx_buffers[gid] = []
            if not g.alive:
                continue
            dst = self._nearest_miner(g.x, g.y)
            if dst is None:
                continue
            pkt = DataPacket(self.packets.next_id(), gid, dst, 64 + 184 * len(buf), now,
                             b"", b"", kind=LEDGER, body=("txs", buf))
            self.recorder.extra["ledger_sent"] += 1
            self.fabric.send_from_host(gid, pkt)

    def _nearest_miner(self, x, y):
        best, best_d = None, None
        for mid in self.miner_ids:
            m = self.hosts[mid]
            if not m.alive:
                continue
            d = math.hypot(m.x - x, m.y - y)
            if best_d is None or d < best_d:
                best, best_d = mid, d
        return best

    def _on_mobility(self, ev):
        step = self.scn.traffic.mobility_step_ms
        now = self.kernel.now
        for nid in self.sensor_ids:
            node = self.sensors[nid]
            if node.alive:
                step_mobility(node, step, now, self.area)
        self.kernel.at(now + step, MOBILITY_STEP, 0)

    def _on_window(self, ev):
        now = self.kernel.now
        self.recorder.close_window(now)
        nxt = now + self.window_ms
        if nxt <= self.end_ms:
            self.kernel.at(nxt, METRIC_WINDOW, 0)

    # attacks

    def _next_compromise(self, after):
        rate = self.attack.compromise_attempt_rate
        gap = self.kernel.rng(STREAM_ATTEMPT).expovariate(rate) * 1000.0
        t = after + max(1, int(math.ceil(gap)))
        self.kernel.at(t, ATTACK_ATTEMPT, 0, ("compromise",))

    def _next_forge(self, after):
        gap = self.kernel.rng(STREAM_FORGE).expovariate(self.attack.forge_block_rate) * 1000.0
        self.kernel.at(after + max(1, int(math.ceil(gap))), ATTACK_ATTEMPT, 0, ("forge",))

    def _on_attack(self, ev):
        kind = ev.payload[0]
        now = self.kernel.now
        if kind == "flood":
            self._flood(ev.target, ev.payload[1])
        elif kind == "compromise":
            self._next_compromise(now)
            if not self.alive_targets:
                return
            idx = self.kernel.rng(STREAM_TARGET).randbelow(len(self.alive_targets))
            node = self._node(self.alive_targets[idx])
            event = adv.attempt_compromise(node, self.variant, self.attack,
                                           self.kernel.rng(STREAM_SUCCESS), now)
            if event.succeeded:
                self.alive_targets.pop(idx)
                self._kill(node.id)
            if self.scn.outputs.attack_log:
                self.attack_log.append(
                    f"{now}\tcompromise\t{event.target}\t{int(event.succeeded)}\t{int(event.detected)}")
        elif kind == "forge":
            self._next_forge(now)
            bad = [m for m in self.consensus.miners if m.compromised and m.alive]
            if not bad:
                return
            forger = bad[self.consensus.stats["forged_attempts"] % len(bad)]
            block = adv.forge_block(forger.id, forger.replica, self.kernel.rng(STREAM_FORGE), now)
            self.consensus.open_proposal(forger, block, -1, forged=True)
            if self.scn.outputs.attack_log:
                self.attack_log.append(f"{now}\tforge\t{forger.id}\t-\t-")

    def _node(self, nid):
        if nid in self.sensors:
            return self.sensors[nid]
        return self.hosts[nid]

    def _kill(self, nid):
        self.recorder.record_node_failure(nid)
        if nid in self.hosts:
            self.hosts[nid].alive = False
        if self.consensus is not None and nid in self.miners:
            self.miners[nid].alive = False

    def _flood(self, aid, n):
        rate = self.attack.flood_rate
        k = self.kernel
        now = k.now
        # fractional schedule so the long-run rate is exact
        nxt = self.attack_start + int(round((n + 1) * 1000.0 / rate))
        if nxt <= self.end_ms:
            k.at(max(nxt, now), ATTACK_ATTEMPT, aid, ("flood", n + 1))
        gid = self.gateway_ids[(aid - ATTACKER_BASE) % len(self.gateway_ids)]
        size = self.scn.traffic.packet_size
        payload = bytes(size)
        digest = hashlib.sha256(payload).digest()
        pkt = DataPacket(self.packets.next_id(), aid, gid, size, now, payload, digest, junk=True)
        if self.distb:
            pkt.tx = adv.junk_tx(aid, k.rng(STREAM_FLOOD), now, digest)
        self.recorder.extra["junk_sent"] += 1
        self.fabric.send_from_host(aid, pkt)

    # running

    def run(self) -> RunResult:
        summary = self.kernel.run_until(self.end_ms)
        if not self.recorder.samples or self.recorder.samples[-1].window_end != self.end_ms:
            if self.end_ms > 0:
                self.recorder.close_window(self.end_ms)
        return RunResult(self.variant, self.scn, self.recorder.samples, self.recorder, self,
                         summary.wall_time_s, summary.events_processed,
                         self.attack_log, self.rounds_log or [])


def run_variant(scn: Scenario, variant: str, trace=False, keep_log=False) -> RunResult:
    return World(scn, variant, trace=trace, keep_log=keep_log).run()


def run_scenario(scn: Scenario, trace=False, keep_log=False) -> dict:
    """Run each requested variant in its own world with the same seed."""
    return {v: run_variant(scn, v, trace, keep_log) for v in scn.variants()}
