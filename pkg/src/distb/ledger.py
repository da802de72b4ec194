"""Hash-chained ledger: canonical encoding, Merkle roots, validation, query.

Byte layouts (all integers big-endian):

* header  = height u64 | prev_hash 32 | tx_root 32 | timestamp u64 | miner u64
* tx body = origin u64 | pkt_id u64 | payload_digest 32 | timestamp u64 | pubkey 32
* tx      = tx_id 32 | body | signature 64
* vote    = miner u64 | block_hash 32 | accept u8 | signature 64
* block   = header | n_tx u32 | tx* | n_votes u32 | vote*
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field

from .crypto import Ed25519Scheme

ZERO_HASH = bytes(32)
EMPTY_ROOT = hashlib.sha256(b"").digest()
SYSTEM_ID = 0
MAX_BLOCK_TXS = 64

_HEADER = struct.Struct(">Q32s32sQQ")
_TX_BODY = struct.Struct(">QQ32sQ32s")
_VOTE_BODY = struct.Struct(">Q32sB")
_U32 = struct.Struct(">I")
TX_SIZE = 32 + _TX_BODY.size + 64
VOTE_SIZE = _VOTE_BODY.size + 64


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    origin: int
    pkt_id: int
    payload_digest: bytes
    timestamp: int
    pubkey: bytes
    signature: bytes

    def body(self) -> bytes:
        return _TX_BODY.pack(
            self.origin, self.pkt_id, self.payload_digest, self.timestamp, self.pubkey
        )

    def encode(self) -> bytes:
        return self.tx_id + self.body() + self.signature


def tx_body(origin, pkt_id, payload_digest, timestamp, pubkey) -> bytes:
    return _TX_BODY.pack(origin, pkt_id, payload_digest, timestamp, pubkey)


def make_tx(scheme, sk, pubkey, origin, pkt_id, payload_digest, timestamp) -> Transaction:
    body = tx_body(origin, pkt_id, payload_digest, timestamp, pubkey)
    return Transaction(
        sha256(body), origin, pkt_id, payload_digest, timestamp, pubkey, scheme.sign(sk, body)
    )


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    tx_root: bytes
    timestamp: int
    miner: int

    def encode(self) -> bytes:
        return _HEADER.pack(self.height, self.prev_hash, self.tx_root, self.timestamp, self.miner)


@dataclass(frozen=True)
class Vote:
    miner: int
    block_hash: bytes
    accept: bool
    signature: bytes

    def body(self) -> bytes:
        return vote_body(self.miner, self.block_hash, self.accept)

    def encode(self) -> bytes:
        return self.body() + self.signature


def vote_body(miner: int, block_hash: bytes, accept) -> bytes:
    # accept is kept as a raw byte so a mutated encoding still round-trips
    return _VOTE_BODY.pack(miner, block_hash, int(accept))


@dataclass
class Block:
    header: BlockHeader
    txs: list = field(default_factory=list)
    votes: list = field(default_factory=list)

    @property
    def hash(self) -> bytes:
        return hash_block(self.header)

    @property
    def height(self) -> int:
        return self.header.height

    def encode(self) -> bytes:
        parts = [self.header.encode(), _U32.pack(len(self.txs))]
        parts.extend(tx.encode() for tx in self.txs)
        parts.append(_U32.pack(len(self.votes)))
        parts.extend(v.encode() for v in self.votes)
        return b"".join(parts)

    def wire_size(self) -> int:
        return _HEADER.size + 8 + TX_SIZE * len(self.txs) + VOTE_SIZE * len(self.votes)


class DecodeError(ValueError):
    pass


def decode_block(data: bytes) -> Block:
    try:
        off = _HEADER.size
        header = BlockHeader(*_HEADER.unpack_from(data, 0))
        (n_tx,) = _U32.unpack_from(data, off)
        off += 4
        if off + n_tx * TX_SIZE > len(data):
            raise DecodeError("truncated tx list")
        txs = []
        for _ in range(n_tx):
            tx_id = data[off:off + 32]
            origin, pkt_id, digest, ts, pub = _TX_BODY.unpack_from(data, off + 32)
            sig = data[off + 32 + _TX_BODY.size:off + TX_SIZE]
            txs.append(Transaction(tx_id, origin, pkt_id, digest, ts, pub, sig))
            off += TX_SIZE
        (n_votes,) = _U32.unpack_from(data, off)
        off += 4
        if off + n_votes * VOTE_SIZE != len(data):
            raise DecodeError("vote list length mismatch")
        votes = []
        for _ in range(n_votes):
            miner, bh, acc = _VOTE_BODY.unpack_from(data, off)
            sig = data[off + _VOTE_BODY.size:off + VOTE_SIZE]
            votes.append(Vote(miner, bh, acc, sig))
            off += VOTE_SIZE
    except struct.error as exc:
        raise DecodeError(str(exc)) from exc
    return Block(header, txs, votes)


def hash_block(header: BlockHeader) -> bytes:
    return sha256(header.encode())


def merkle_root(tx_ids) -> bytes:
    """Binary Merkle root; the last node is paired with itself on odd levels."""
    level = list(tx_ids)
    if not level:
        return EMPTY_ROOT
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def genesis() -> Block:
    return Block(BlockHeader(0, ZERO_HASH, EMPTY_ROOT, 0, SYSTEM_ID))


class BlockCheck(enum.Enum):
    OK = "ok"
    BAD_LINK = "BadLink"
    BAD_HEIGHT = "BadHeight"
    BAD_ROOT = "BadRoot"
    BAD_SIG = "BadSig"
    DUPLICATE = "Duplicate"
    BAD_TIME = "BadTime"


class AppendRejected(Exception):
    def __init__(self, reason):
        super().__init__(str(reason))
        self.reason = reason


class Chain:
    """One replica of the ledger.

    ``registry`` maps node id to public key. When given, transaction pubkeys
    must match their origin's registered key and votes are checked against it.
    """

    def __init__(self, scheme=None, registry=None, max_block_txs=MAX_BLOCK_TXS):
        self.scheme = scheme or Ed25519Scheme()
        self.registry = registry
        self.max_block_txs = max_block_txs
        self.blocks = [genesis()]
        self.tx_index = {}
        self._head_hash = hash_block(self.blocks[0].header)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def head_hash(self) -> bytes:
        return self._head_hash

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __len__(self):
        return len(self.blocks)

    def empty_copy(self) -> "Chain":
        return Chain(self.scheme, self.registry, self.max_block_txs)

    def tx_signature_ok(self, tx: Transaction) -> bool:
        if self.registry is not None and self.registry.get(tx.origin) != tx.pubkey:
            return False
        return self.scheme.verify(tx.pubkey, tx.body(), tx.signature)

    def vote_signature_ok(self, vote: Vote) -> bool:
        if self.registry is None:
            return False
        pub = self.registry.get(vote.miner)
        return pub is not None and self.scheme.verify(pub, vote.body(), vote.signature)

    def _push(self, block: Block) -> None:
        h = block.header.height
        for i, tx in enumerate(block.txs):
            self.tx_index[tx.tx_id] = (h, i)
        self.blocks.append(block)
        self._head_hash = hash_block(block.header)


def check_structure(chain: Chain, block: Block) -> BlockCheck:
    """Checks (a)-(c), (e), (f): everything except signatures."""
    head = chain.head.header
    hdr = block.header
    if hdr.prev_hash != chain.head_hash:
        return BlockCheck.BAD_LINK
    if hdr.height != head.height + 1:
        return BlockCheck.BAD_HEIGHT
    if not 1 <= len(block.txs) <= chain.max_block_txs:
        return BlockCheck.BAD_ROOT
    ids = []
    for tx in block.txs:
        tid = sha256(tx.body())
        if tid != tx.tx_id:
            return BlockCheck.BAD_ROOT
        ids.append(tid)
    if merkle_root(ids) != hdr.tx_root:
        return BlockCheck.BAD_ROOT
    seen = set()
    for tid in ids:
        if tid in seen or tid in chain.tx_index:
            return BlockCheck.DUPLICATE
        seen.add(tid)
    if hdr.timestamp < head.timestamp:
        return BlockCheck.BAD_TIME
    return BlockCheck.OK


def validate_block(chain: Chain, block: Block) -> BlockCheck:
    """Validate ``block`` as the next block of ``chain``.

    Checks run in a fixed order so a block with several defects always gets
    the same code: link, height, root, signatures, duplicates, time.
    """
    head = chain.head.header
    hdr = block.header
    if hdr.prev_hash != chain.head_hash:
        return BlockCheck.BAD_LINK
    if hdr.height != head.height + 1:
        return BlockCheck.BAD_HEIGHT
    if not 1 <= len(block.txs) <= chain.max_block_txs:
        return BlockCheck.BAD_ROOT
    ids = [sha256(tx.body()) for tx in block.txs]
    if any(a != tx.tx_id for a, tx in zip(ids, block.txs)) or merkle_root(ids) != hdr.tx_root:
        return BlockCheck.BAD_ROOT
    for tx in block.txs:
        if not chain.tx_signature_ok(tx):
            return BlockCheck.BAD_SIG
    seen = set()
    for tid in ids:
        if tid in seen or tid in chain.tx_index:
            return BlockCheck.DUPLICATE
        seen.add(tid)
    if hdr.timestamp < head.timestamp:
        return BlockCheck.BAD_TIME
    return BlockCheck.OK


def votes_ok(chain: Chain, block: Block) -> bool:
    """Every carried vote is an accepting, correctly signed vote for this block."""
    if not block.votes:
        return False
    bh = hash_block(block.header)
    miners = set()
    for v in block.votes:
        if v.accept != 1 or v.block_hash != bh or v.miner in miners:
            return False
        if not chain.vote_signature_ok(v):
            return False
        miners.add(v.miner)
    return True


def append(chain: Chain, block: Block, tally_result) -> Block:
    """Commit ``block`` if it validates and its tally reached quorum.

    Validation runs first, so an invalid block is rejected even with quorum.
    Raises :class:`AppendRejected` and leaves the chain untouched otherwise.
    """
    verdict = validate_block(chain, block)
    if verdict is not BlockCheck.OK:
        raise AppendRejected(verdict)
    if tally_result is None or not tally_result.accepted:
        raise AppendRejected("no quorum")
    if tally_result.block_hash != hash_block(block.header):
        raise AppendRejected("tally is for a different block")
    chain._push(block)
    return block


def verify_chain(chain: Chain) -> bool:
    """Re-validate the whole chain from genesis.

    Hash links, roots, heights, duplicates and times are checked for every
    block before any signature, so most tampering is caught without crypto.
    """
    blocks = chain.blocks
    if not blocks or blocks[0].encode() != genesis().encode():
        return False
    replay = chain.empty_copy()
    for block in blocks[1:]:
        if check_structure(replay, block) is not BlockCheck.OK:
            return False
        replay._push(block)
    replay = chain.empty_copy()
    for block in blocks[1:]:
        if any(not replay.tx_signature_ok(tx) for tx in block.txs):
            return False
        if not votes_ok(replay, block):
            return False
        replay._push(block)
    return True


def query(chain: Chain, **selector):
    """Look up committed records.

    Exactly one of ``by_tx_id``, ``by_height``, ``by_origin`` or ``range``
    (inclusive ``(lo, hi)`` heights) must be given. Heights and ranges return
    blocks; tx id and origin return transactions.
    """
    if len(selector) != 1:
        raise ValueError(f"expected exactly one selector, got {sorted(selector)}")
    (key, value), = selector.items()
    if key == "by_tx_id":
        loc = chain.tx_index.get(value)
        if loc is None:
            return []
        h, i = loc
        return [chain.blocks[h].txs[i]]
    if key == "by_height":
        if not isinstance(value, int):
            raise ValueError("by_height needs an int")
        return [chain.blocks[value]] if 0 <= value < len(chain.blocks) else []
    if key == "by_origin":
        return [tx for b in chain.blocks for tx in b.txs if tx.origin == value]
    if key == "range":
        try:
            lo, hi = value
        except (TypeError, ValueError):
            raise ValueError("range needs (lo, hi)") from None
        lo = max(lo, 0)
        return chain.blocks[lo:hi + 1] if hi >= lo else []
    raise ValueError(f"unknown selector {key!r}")


def export_records(chain: Chain):
    for b in chain.blocks:
        h = b.header
        yield {
            "height": h.height,
            "hash": hash_block(h).hex(),
            "prev_hash": h.prev_hash.hex(),
            "tx_root": h.tx_root.hex(),
            "timestamp_ms": h.timestamp,
            "miner": h.miner,
            "tx_count": len(b.txs),
            "votes": len(b.votes),
        }


def export_chain(chain: Chain, fh) -> int:
    n = 0
    for rec in export_records(chain):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        n += 1
    return n
