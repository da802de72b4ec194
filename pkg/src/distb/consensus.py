"""Threshold-consent block admission.

Rounds fire every ``round_period`` ms. The proposer is chosen round-robin
over the configured miner list; a dead proposer or an empty pool skips the
round. The proposer sends its block to every alive miner, votes are signed
and returned, and at the vote deadline the tally decides. Admitted blocks are
broadcast and each replica re-validates before appending.

Messages go through a transport object with a single method
``send(src, dst, msg, size)``; delivery calls back :meth:`Consensus.deliver`.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .kernel import BLOCK_PROPOSE, Kernel
from .ledger import (
    AppendRejected,
    Block,
    BlockCheck,
    BlockHeader,
    Chain,
    Vote,
    append,
    hash_block,
    merkle_root,
    validate_block,
    vote_body,
)

TAU_MIN = 0.60
TAU_MAX = 0.80
TALLY = "Tally"


def check_tau(tau: float) -> None:
    if not TAU_MIN <= tau <= TAU_MAX:
        raise ValueError(f"consent threshold {tau} outside the 60-80% band")


def quorum(miners_total: int, tau: float) -> int:
    """Accepts needed: ceil(tau * miners_total), computed exactly."""
    return math.ceil(Fraction(str(tau)) * miners_total)


@dataclass(frozen=True)
class TallyResult:
    block_hash: bytes
    accepts: int
    miners_total: int
    threshold: float
    accepted: bool


def tally(votes, miners_total: int, tau: float, block_hash: bytes | None = None) -> TallyResult:
    """Count one vote per miner (first one wins) against the quorum."""
    check_tau(tau)
    seen = set()
    accepts = 0
    for v in votes:
        if v.miner in seen:
            continue
        if block_hash is not None and v.block_hash != block_hash:
            continue
        seen.add(v.miner)
        if v.accept:
            accepts += 1
    if block_hash is None and votes:
        block_hash = votes[0].block_hash
    return TallyResult(
        block_hash or bytes(32),
        accepts,
        miners_total,
        tau,
        accepts >= quorum(miners_total, tau),
    )


@dataclass
class Miner:
    id: int
    sk: object
    pubkey: bytes
    replica: Chain
    alive: bool = True
    compromised: bool = False


def sign_vote(scheme, miner: Miner, block_hash: bytes, accept: bool) -> Vote:
    return Vote(miner.id, block_hash, accept, scheme.sign(miner.sk, vote_body(miner.id, block_hash, accept)))


def cast_vote(miner: Miner, block: Block, forged_hashes=frozenset()) -> Vote:
    """Vote on a received block.

    Honest miners accept iff the block validates on their replica. A
    compromised miner inverts this: it rejects honest blocks and accepts the
    ones its adversary forged.
    """
    bh = hash_block(block.header)
    if miner.compromised:
        accept = bh in forged_hashes
    else:
        accept = validate_block(miner.replica, block) is BlockCheck.OK
    return sign_vote(miner.replica.scheme, miner, bh, accept)


@dataclass
class Round:
    round_id: int
    proposer: int
    pending_txs: deque
    deadline: int


@dataclass
class Proposal:
    block: Block
    proposer: int
    round_id: int
    miners_total: int
    forged: bool = False
    votes: dict = field(default_factory=dict)
    closed: bool = False


def propose_block(proposer: Miner, pool: deque, now: int, max_block_txs: int):
    """Pop up to ``max_block_txs`` oldest pooled txs and build the next block.

    Txs that fail their own signature check or are already on chain are
    discarded. Returns ``None`` when nothing valid remains.
    """
    chain = proposer.replica
    picked = []
    ids = set()
    while pool and len(picked) < max_block_txs:
        tx = pool.popleft()
        if tx.tx_id in ids or tx.tx_id in chain.tx_index:
            continue
        if not chain.tx_signature_ok(tx):
            continue
        ids.add(tx.tx_id)
        picked.append(tx)
    if not picked:
        return None
    head = chain.head.header
    header = BlockHeader(
        head.height + 1,
        chain.head_hash,
        merkle_root([t.tx_id for t in picked]),
        max(now, head.timestamp),
        proposer.id,
    )
    return Block(header, picked)


class Consensus:
    def __init__(self, kernel: Kernel, miners, transport, tau=0.66, round_period=1000,
                 max_block_txs=64, vote_window=None, audit=None, name="consensus"):
        check_tau(tau)
        self.kernel = kernel
        self.miners = list(miners)
        self.by_id = {m.id: m for m in self.miners}
        self.transport = transport
        self.tau = tau
        self.round_period = round_period
        self.max_block_txs = max_block_txs
        self.vote_window = vote_window if vote_window is not None else round_period // 2
        self.pool = deque()
        self.round_id = 0
        self.proposals = {}
        self.tallies = {}
        self.forged_hashes = set()
        self.audit = audit
        self.stats = dict(rounds=0, skipped=0, admitted=0, rejected=0,
                          forged_attempts=0, forged_admitted=0, stale_syncs=0,
                          append_rejects=0)
        self._tally_kind = f"{TALLY}:{name}"
        self._round_kind = f"{BLOCK_PROPOSE}:{name}"
        kernel.on(self._round_kind, self._on_round)
        kernel.on(self._tally_kind, self._on_tally)

    def start(self, first_round_at=None):
        t = self.round_period if first_round_at is None else first_round_at
        self.kernel.at(t, self._round_kind, 0)

    def alive_miners(self):
        return [m for m in self.miners if m.alive]

    def submit(self, txs) -> None:
        self.pool.extend(txs)

    # rounds

    def _on_round(self, ev):
        now = self.kernel.now
        self.kernel.at(now + self.round_period, self._round_kind, 0)
        rid = self.round_id
        self.round_id += 1
        self.stats["rounds"] += 1
        proposer = self.miners[rid % len(self.miners)]
        if not proposer.alive or not self.pool:
            self.stats["skipped"] += 1
            self._log(rid, proposer.id, None, None, "skipped")
            return
        block = propose_block(proposer, self.pool, now, self.max_block_txs)
        if block is None:
            self.stats["skipped"] += 1
            self._log(rid, proposer.id, None, None, "skipped")
            return
        self.open_proposal(proposer, block, rid, forged=False)

    def open_proposal(self, proposer: Miner, block: Block, round_id: int, forged: bool):
        bh = hash_block(block.header)
        alive = self.alive_miners()
        prop = Proposal(block, proposer.id, round_id, len(alive), forged)
        self.proposals[bh] = prop
        if forged:
            self.forged_hashes.add(bh)
            self.stats["forged_attempts"] += 1
        prop.votes[proposer.id] = cast_vote(proposer, block, self.forged_hashes)
        size = block.wire_size()
        for m in alive:
            if m.id != proposer.id:
                self.transport.send(proposer.id, m.id, ("propose", block), size)
        self.kernel.after(self.vote_window, self._tally_kind, proposer.id, bh)
        return bh

    def _on_tally(self, ev):
        bh = ev.payload
        prop = self.proposals.pop(bh, None)
        if prop is None:
            return
        prop.closed = True
        result = tally(list(prop.votes.values()), prop.miners_total, self.tau, bh)
        self.tallies[bh] = result
        proposer = self.by_id[prop.proposer]
        block = prop.block
        tag = "forged" if prop.forged else "honest"
        if not result.accepted:
            if prop.forged:
                self._log(prop.round_id, prop.proposer, result, bh, "forged-rejected")
            else:
                self.stats["rejected"] += 1
                self.pool.extendleft(reversed(block.txs))
                self._log(prop.round_id, prop.proposer, result, bh, "rejected")
            return
        if prop.forged:
            self.stats["forged_admitted"] += 1
        block.votes = sorted(
            (v for v in prop.votes.values() if v.accept), key=lambda v: v.miner
        )
        if not prop.forged:
            if not proposer.alive or not self._apply(proposer, block, None):
                self.stats["rejected"] += 1
                self.pool.extendleft(reversed(block.txs))
                self._log(prop.round_id, prop.proposer, result, bh, "rejected")
                return
            self.stats["admitted"] += 1
        self._log(prop.round_id, prop.proposer, result, bh, f"admitted-{tag}")
        self.broadcast_block(proposer, block)

    def broadcast_block(self, proposer: Miner, block: Block):
        size = block.wire_size()
        for m in self.alive_miners():
            if m.id != proposer.id:
                self.transport.send(proposer.id, m.id, ("commit", block, proposer.id), size)

    # message delivery

    def deliver(self, dst: int, msg) -> None:
        miner = self.by_id.get(dst)
        if miner is None or not miner.alive:
            return
        kind = msg[0]
        if kind == "propose":
            block = msg[1]
            bh = hash_block(block.header)
            prop = self.proposals.get(bh)
            vote = cast_vote(miner, block, self.forged_hashes)
            if prop is not None:
                self.transport.send(dst, prop.proposer, ("vote", vote), 113)
        elif kind == "vote":
            vote = msg[1]
            prop = self.proposals.get(vote.block_hash)
            if prop is None or prop.proposer != dst:
                return  # late vote
            if not miner.replica.vote_signature_ok(vote):
                return
            prop.votes.setdefault(vote.miner, vote)
        elif kind == "commit":
            block, source = msg[1], msg[2]
            self.receive_commit(miner, block, self.by_id.get(source))

    def receive_commit(self, miner: Miner, block: Block, source: Miner | None) -> None:
        chain = miner.replica
        h = block.header.height
        if h <= chain.height:
            return
        if h > chain.height + 1 and source is not None:
            self.stats["stale_syncs"] += 1
            for missing in source.replica.blocks[chain.height + 1:h]:
                if not self._apply(miner, missing, None):
                    return
        self._apply(miner, block, None)

    def _apply(self, miner: Miner, block: Block, result) -> bool:
        bh = hash_block(block.header)
        result = result or self.tallies.get(bh)
        if bh in self.forged_hashes and miner.compromised:
            # colluders keep building on the honest chain
            return False
        try:
            append(miner.replica, block, result)
        except AppendRejected:
            self.stats["append_rejects"] += 1
            return False
        return True

    def _log(self, rid, proposer, result, bh, outcome):
        if self.audit is None:
            return
        if result is None:
            self.audit.append(f"{rid}\t{proposer}\t-\t-\t{outcome}")
        else:
            self.audit.append(
                f"{rid}\t{proposer}\t{result.accepts}/{result.miners_total}\t{bh.hex()[:16]}\t{outcome}"
            )

    def heads(self):
        return {m.id: (m.replica.height, m.replica.head_hash) for m in self.miners}

    def longest(self):
        """Replica with the greatest height; ties go to the lowest miner id."""
        return max(self.miners, key=lambda m: (m.replica.height, -m.id)).replica


class DirectTransport:
    """Fixed-delay transport for tests and standalone runs.

    ``cut`` holds node ids whose traffic is dropped, which is how partitions
    are scripted.
    """

    KIND = "LedgerMsg"

    def __init__(self, kernel: Kernel, delay=5):
        self.kernel = kernel
        self.delay = delay
        self.cut = set()
        self.dropped = 0
        self.consensus = None
        kernel.on(self.KIND, self._arrive)

    def send(self, src, dst, msg, size):
        if src in self.cut or dst in self.cut:
            self.dropped += 1
            return
        self.kernel.after(self.delay, self.KIND, dst, msg)

    def _arrive(self, ev):
        self.consensus.deliver(ev.target, ev.payload)
