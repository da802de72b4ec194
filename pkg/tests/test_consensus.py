from collections import deque

import pytest

from chainkit import make_world, signed_block
from distb.adversary import forge_block
from distb.consensus import (
    Consensus, DirectTransport, Miner, cast_vote, check_tau, propose_block, quorum, sign_vote, tally,
)
from distb.crypto import FastMacScheme, node_secret
from distb.kernel import Kernel, RngStream
from distb.ledger import Chain, make_tx

TAUS_PCT = (60, 66, 75, 80)


def _ceil_pct(pct, m):
    # integer ceiling of pct*m/100, no floats involved
    return (pct * m + 99) // 100


def test_quorum_exhaustive_against_integer_ceiling():
    for pct in TAUS_PCT:
        for m in range(1, 13):
            need = _ceil_pct(pct, m)
            assert quorum(m, pct / 100) == need
            for a in range(m + 1):
                votes = [sign_vote(FastMacScheme(), Miner(i, b"k" * 32, b"", None), b"h" * 32, i < a)
                         for i in range(m)]
                assert tally(votes, m, pct / 100).accepted == (a >= need)


@pytest.mark.parametrize("m,tau,accepts,ok", [
    (10, 0.60, 6, True),
    (10, 0.80, 7, False),
    (3, 0.66, 2, True),
])
def test_tally_examples(m, tau, accepts, ok):
    votes = [sign_vote(FastMacScheme(), Miner(i, b"k" * 32, b"", None), b"h" * 32, i < accepts)
             for i in range(m)]
    assert tally(votes, m, tau).accepted is ok


def test_duplicate_votes_count_once():
    m = Miner(1, b"k" * 32, b"", None)
    s = FastMacScheme()
    votes = [sign_vote(s, m, b"h" * 32, True)] * 5
    r = tally(votes, 5, 0.6)
    assert r.accepts == 1 and not r.accepted
    # first vote wins, even if a later one flips
    r = tally([sign_vote(s, m, b"h" * 32, False), sign_vote(s, m, b"h" * 32, True)], 1, 0.6)
    assert r.accepts == 0


@pytest.mark.parametrize("tau", [0.59, 0.81, 0.9, 0.0])
def test_tau_outside_band(tau):
    with pytest.raises(ValueError):
        check_tau(tau)
    with pytest.raises(ValueError):
        tally([], 3, tau)


def _pool(n, chain, keys, scheme):
    sk, pk = keys
    return deque(make_tx(scheme, sk, pk, 10_001, i, bytes(32), i) for i in range(n))


def test_propose_takes_oldest_in_order():
    scheme, miners, chain, keys = make_world()
    pool = _pool(3, chain, keys, scheme)
    ids = [t.tx_id for t in pool]
    b = propose_block(miners[0], pool, 1000, 64)
    assert [t.tx_id for t in b.txs] == ids and not pool
    pool = _pool(100, chain, keys, scheme)
    first = [t.tx_id for t in pool][:64]
    b = propose_block(miners[0], pool, 1000, 64)
    assert [t.tx_id for t in b.txs] == first and len(pool) == 36


def test_cast_vote_rules():
    scheme, miners, chain, keys = make_world()
    block = signed_block(chain, miners, keys)
    assert cast_vote(miners[0], block).accept
    from dataclasses import replace
    bad = type(block)(replace(block.header, prev_hash=bytes(32)), block.txs)
    assert not cast_vote(miners[0], bad).accept
    miners[1].compromised = True
    assert not cast_vote(miners[1], block).accept
    assert cast_vote(miners[1], block, frozenset({block.hash})).accept


def build_net(n=5, tau=0.66, delay=5):
    scheme = FastMacScheme()
    registry = {}
    miners = []
    for i in range(n):
        mid = 3000 + i
        sk, pk = scheme.keypair(node_secret(1, mid))
        registry[mid] = pk
        miners.append((mid, sk, pk))
    osk, opk = scheme.keypair(node_secret(1, 10_001))
    registry[10_001] = opk
    ms = [Miner(mid, sk, pk, Chain(scheme, registry)) for mid, sk, pk in miners]
    k = Kernel(root_seed=1)
    tr = DirectTransport(k, delay)
    cons = Consensus(k, ms, tr, tau=tau, round_period=1000, audit=[])
    tr.consensus = cons
    return k, cons, tr, scheme, (osk, opk)


def _feed(cons, scheme, keys, start, n=3):
    sk, pk = keys
    cons.submit([make_tx(scheme, sk, pk, 10_001, start + i, bytes(32), 0) for i in range(n)])


def test_full_connectivity_replicas_agree():
    k, cons, tr, scheme, keys = build_net()
    cons.start()
    for r in range(5):
        _feed(cons, scheme, keys, r * 10)
        k.run_until((r + 1) * 1000 + 900)
    heads = cons.heads()
    assert len(set(heads.values())) == 1
    assert next(iter(heads.values()))[0] == 5
    assert cons.stats["admitted"] == 5


def test_dead_proposer_skips_round():
    k, cons, tr, scheme, keys = build_net()
    cons.miners[0].alive = False
    cons.start()
    _feed(cons, scheme, keys, 0)
    k.run_until(1900)
    assert cons.stats["skipped"] == 1 and cons.stats["admitted"] == 0
    k.run_until(2900)
    assert cons.stats["admitted"] == 1


def test_empty_pool_skips():
    k, cons, tr, scheme, keys = build_net()
    cons.start()
    k.run_until(3500)
    assert cons.stats["skipped"] == 3 and cons.longest().height == 0


def test_partition_then_heal_converges():
    k, cons, tr, scheme, keys = build_net(n=5)
    cons.start()
    cut = cons.miners[4].id
    tr.cut.add(cut)
    for r in range(3):
        _feed(cons, scheme, keys, r * 10)
        k.run_until((r + 1) * 1000 + 900)
    heights = {mid: h for mid, (h, _) in cons.heads().items()}
    assert heights[cut] == 0
    assert all(h == 3 for mid, h in heights.items() if mid != cut)
    tr.cut.clear()
    _feed(cons, scheme, keys, 100)
    # round 3 is proposed by miner index 3, after heal
    k.run_until(4900)
    heads = cons.heads()
    assert len(set(heads.values())) == 1
    assert cons.stats["stale_syncs"] >= 1


def _forged_outcome(n, tau, compromised):
    k, cons, tr, scheme, keys = build_net(n=n, tau=tau)
    for m in cons.miners[:compromised]:
        m.compromised = True
    forger = cons.miners[0]
    block = forge_block(forger.id, forger.replica, RngStream(5, 5), 0)
    cons.open_proposal(forger, block, -1, forged=True)
    k.run_until(2000)
    return cons.tallies[block.hash].accepted, cons


@pytest.mark.parametrize("c", range(1, 11))
def test_forged_boundary_ten_miners(c):
    accepted, cons = _forged_outcome(10, 0.66, c)
    assert accepted == (c >= quorum(10, 0.66) == 7)
    # honest replicas never take a forged block
    for m in cons.miners:
        if not m.compromised:
            assert m.replica.height == 0


@pytest.mark.parametrize("tau", [0.60, 0.70, 0.80])
def test_forged_boundary_moves_with_tau(tau):
    need = quorum(10, tau)
    assert not _forged_outcome(10, tau, need - 1)[0]
    assert _forged_outcome(10, tau, need)[0]


def test_audit_lines():
    k, cons, tr, scheme, keys = build_net()
    cons.start()
    _feed(cons, scheme, keys, 0)
    k.run_until(1900)
    rid, proposer, frac, hprefix, outcome = cons.audit[0].split("\t")
    assert (rid, proposer, frac, outcome) == ("0", "3000", "5/5", "admitted-honest")
    assert len(hprefix) == 16
