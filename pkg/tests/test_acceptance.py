"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines are repeated in the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import time
from functools import lru_cache
from pathlib import Path

import pytest

from distb.consensus import (
    Consensus, DirectTransport, Miner, quorum, sign_vote, tally,
)
from distb.adversary import forge_block
from distb.crypto import FastMacScheme, node_secret
from distb.fabric import Controller, Fabric, Link, Switch
from distb.kernel import Kernel, RngStream
from distb.ledger import Chain, DecodeError, decode_block, verify_chain
from distb.metrics import csv_text
from distb.mobility import DataPacket
from distb.scenario import Scenario, load_scenario
from distb.sim import World, run_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "src" / "distb" / "scenarios"
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def shipped(name: str):
    """First run of a shipped scenario, with its wall time."""
    scn = load_scenario(SCENARIOS / f"{name}.cfg")
    t0 = time.perf_counter()
    res = run_scenario(scn)
    return scn, res, time.perf_counter() - t0


def shipped_names():
    return sorted(p.stem for p in SCENARIOS.glob("*.cfg"))


# 1. tamper evidence

def _fifty_block_chain() -> Chain:
    scn = Scenario()
    scn.run.seed = 2024
    scn.run.duration_s = 60
    scn.run.fast_crypto = False
    scn.nodes.sensors = 8
    w = World(scn, "distb")
    w.run()
    src = w.consensus.longest()
    assert src.height >= 50, src.height
    chain = src.empty_copy()
    for b in src.blocks[1:51]:
        chain._push(b)
    return chain


def criterion_1():
    chain = _fifty_block_chain()
    t0 = time.perf_counter()
    clean = verify_chain(chain)
    rng = RngStream(0xACCE, 1)
    encoded = [b.encode() for b in chain.blocks]
    total = sum(map(len, encoded))
    caught = 0
    for _ in range(100):
        pos = rng.randbelow(total)
        bi = 0
        while pos >= len(encoded[bi]):
            pos -= len(encoded[bi])
            bi += 1
        raw = bytearray(encoded[bi])
        raw[pos] ^= 1 + rng.randbelow(255)
        try:
            mutated = decode_block(bytes(raw))
        except DecodeError:
            caught += 1
            continue
        copy = chain.empty_copy()
        copy.blocks = list(chain.blocks)
        copy.blocks[bi] = mutated
        caught += not verify_chain(copy)
    elapsed = time.perf_counter() - t0
    ok = clean and caught == 100 and elapsed < 5.0 and chain.height == 50
    return report(1, ok, f"untampered={clean} detected={caught}/100 blocks={chain.height} "
                         f"time={elapsed:.2f}s (<5s)")


# 2. quorum exactness

def criterion_2():
    scheme = FastMacScheme()
    mismatches = checked = 0
    for pct in (60, 66, 75, 80):
        for m in range(1, 13):
            need = (pct * m + 99) // 100
            for a in range(m + 1):
                votes = [sign_vote(scheme, Miner(i, b"k" * 32, b"", None), b"h" * 32, i < a)
                         for i in range(m)]
                checked += 1
                if tally(votes, m, pct / 100).accepted != (a >= need) or quorum(m, pct / 100) != need:
                    mismatches += 1
    return report(2, mismatches == 0, f"{checked} cases, {mismatches} mismatches")


# 3. forged boundary

def _forged_admitted(compromised: int, n=10, tau=0.66) -> tuple[bool, bool]:
    """(tally admitted the forged block, honest replicas stayed clean)."""
    scheme = FastMacScheme()
    registry, keys = {}, []
    for i in range(n):
        mid = 3000 + i
        sk, pk = scheme.keypair(node_secret(3, mid))
        registry[mid] = pk
        keys.append((mid, sk, pk))
    miners = [Miner(mid, sk, pk, Chain(scheme, registry)) for mid, sk, pk in keys]
    for m in miners[:compromised]:
        m.compromised = True
    k = Kernel(root_seed=3)
    tr = DirectTransport(k, 3)
    cons = Consensus(k, miners, tr, tau=tau)
    tr.consensus = cons
    forger = miners[0]
    block = forge_block(forger.id, forger.replica, RngStream(3, compromised), 0)
    cons.open_proposal(forger, block, -1, forged=True)
    k.run_until(2000)
    honest_clean = all(m.replica.height == 0 for m in miners if not m.compromised)
    return cons.tallies[block.hash].accepted, honest_clean


def criterion_3():
    runs = {c: _forged_admitted(c) for c in range(0, 11)}
    outcome = {c: admitted for c, (admitted, _) in runs.items()}
    clean = all(honest for _, honest in runs.values())
    need = quorum(10, 0.66)
    ok = need == 7 and clean and all(outcome[c] == (c >= need) for c in outcome)
    rejected = [c for c, a in outcome.items() if not a]
    admitted = [c for c, a in outcome.items() if a]
    return report(3, ok, f"quorum={need}; rejected for compromised={rejected}; "
                         f"admitted for {admitted}; honest replicas untouched={clean}")


# 4. node-failure endpoints

def criterion_4():
    scn, res, wall = shipped("fig7")
    c, d = res["core"].samples, res["distb"].samples
    first_c, first_d = c[0].node_failure_pct, d[0].node_failure_pct
    fin_c, fin_d = c[-1].node_failure_pct, d[-1].node_failure_pct
    ok = (scn.nodes_total == 50 and first_c <= 5 and first_d <= 5 and fin_c >= 85
          and 33 <= fin_d <= 48 and wall < 60)
    return report(4, ok, f"first core={first_c:.0f}% distb={first_d:.0f}% (<=5); final core={fin_c:.0f}% "
                         f"(>=85) distb={fin_d:.0f}% ([33,48]); wall={wall:.1f}s")


# 5. throughput / security ordering

def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-9)


def criterion_5():
    parts, ok = [], True
    for name in ("fig5", "fig6"):
        scn, res, _ = shipped(name)
        c, d = res["core"].samples, res["distb"].samples
        a_thr = _rel(c[0].throughput_pps, d[0].throughput_pps)
        a_sec = _rel(c[0].security_rate_pct, d[0].security_rate_pct)
        warm = (scn.attack.start_s + scn.run.window_s) * 1000
        post = [(x, y) for x, y in zip(c, d) if x.window_end > warm]
        sec_all = all(y.security_rate_pct > x.security_rate_pct for x, y in post)
        thr_frac = sum(y.throughput_pps >= x.throughput_pps for x, y in post) / max(len(post), 1)
        good = a_thr < 0.05 and a_sec < 0.05 and bool(post) and sec_all and thr_frac >= 0.8
        ok &= good
        parts.append(f"{name}: first-window diff thr={a_thr:.3f} sec={a_sec:.3f}; "
                     f"distb sec > core in {sum(y.security_rate_pct > x.security_rate_pct for x, y in post)}"
                     f"/{len(post)} windows; distb thr >= core in {thr_frac:.0%}")
    return report(5, ok, " | ".join(parts))


# 6. determinism

def criterion_6():
    same = []
    for name in shipped_names():
        scn, first, _ = shipped(name)
        second = run_scenario(load_scenario(SCENARIOS / f"{name}.cfg"))
        a = "".join(csv_text(first[v].samples) for v in scn.variants())
        b = "".join(csv_text(second[v].samples) for v in scn.variants())
        same.append((name, a == b))
    ok = all(s for _, s in same)
    return report(6, ok, ", ".join(f"{n}={'identical' if s else 'DIFFERENT'}" for n, s in same))


# 7. conservation

def criterion_7():
    windows = bad = 0
    for name in shipped_names():
        _, res, _ = shipped(name)
        for r in res.values():
            for s in r.samples:
                c = s.counters
                windows += 1
                if c.sent != c.delivered + c.dropped() + s.in_flight or not s.conserved:
                    bad += 1
    return report(7, bad == 0, f"{windows} window closes across {len(shipped_names())} scenarios, "
                               f"{bad} violations")


# 8. SDN path setup

def criterion_8():
    s1, s2, s3, a, b = 1, 2, 3, 100, 200
    switches = {s: Switch(s) for s in (s1, s2, s3)}
    adj = {s1: {s2}, s2: {s1, s3}, s3: {s2}}
    links = {}
    for x, y in [(s1, s2), (s2, s3), (a, s1), (s3, b)]:
        links[(x, y)] = Link(x, y, latency=1, capacity=1e6)
        links[(y, x)] = Link(y, x, latency=1, capacity=1e6)
    k = Kernel()
    got = []
    idle = 2000
    fab = Fabric(k, Controller(switches, adj, {a: s1, b: s3}, idle_timeout=idle), links,
                 on_host=lambda h, p: got.append(p.pkt_id))
    fab.record_log = True

    def send(i):
        fab.send_from_host(a, DataPacket(i, a, b, 256, k.now, b"x", b""))

    send(1)
    k.run_until(100)
    setup = [e[1] for e in fab.log]
    mods_at = [e[2] for e in fab.log if e[1] == "FlowMod"]
    first_ok = (setup == ["PacketIn", "FlowMod", "FlowMod", "FlowMod"] and mods_at == [s1, s2, s3]
                and fab.counters["reinjected"] == 1 and got == [1])
    for i in range(2, 22):
        send(i)
        k.run_until(k.now + 50)
    steady_ok = fab.counters["packet_ins"] == 1 and len(got) == 21
    k.run_until(k.now + idle + 10)
    send(99)
    k.run_until(k.now + 100)
    expiry_ok = fab.counters["packet_ins"] == 2
    ok = first_ok and steady_ok and expiry_ok
    return report(8, ok, f"first packet: {' -> '.join(setup)} -> re-injection; "
                         f"20 follow-ups, PacketIns={1 if steady_ok else 'more'}; "
                         f"after idle_timeout a new PacketIn={expiry_ok}")


# 9. performance

def criterion_9():
    scn, res, wall = shipped("perf")
    sent = {v: r.recorder.total.sent for v, r in res.items()}
    ok = (scn.nodes_total == 50 and scn.run.duration_s == 600 and min(sent.values()) >= 100_000
          and wall < 60)
    return report(9, ok, f"50 nodes, 600 s simulated, packets per variant={sent}, "
                         f"both variants wall={wall:.1f}s (<60s)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_criterion(check):
    assert check()


if __name__ == "__main__":
    import sys

    results = [check() for check in CRITERIA]
    sys.exit(0 if all(results) else 1)
