"""Attack injection.

Three mechanisms are modelled:

* tampering: any link traversal may flip a payload byte, leaving the digest
  stale (only digest checks can notice);
* flooding: intruder hosts emit junk toward gateways at a fixed rate;
* compromise: attempts on random alive nodes, which die on success, plus
  forged blocks proposed by adversary-controlled miners.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ledger import Block, BlockHeader, Transaction, merkle_root, sha256, tx_body


@dataclass
class AttackProfile:
    start_s: float = 0.0
    tamper_prob: float = 0.0
    flood_rate: float = 0.0
    compromise_attempt_rate: float = 0.0
    compromise_success_core: float = 0.0
    compromise_success_distb: float = 0.0
    forge_block_rate: float = 0.0
    attacker_count: int = 0
    compromised_miners: int = 0

    def validate(self) -> None:
        for name in ("tamper_prob", "compromise_success_core", "compromise_success_distb"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"attack.{name} must be in [0, 1], got {v}")
        for name in ("start_s", "flood_rate", "compromise_attempt_rate", "forge_block_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"attack.{name} must be >= 0")
        if self.attacker_count < 0 or self.compromised_miners < 0:
            raise ValueError("attack counts must be >= 0")
        if self.compromise_success_distb > self.compromise_success_core:
            raise ValueError(
                "attack.compromise_success_distb must not exceed compromise_success_core"
            )

    def success_for(self, mode: str) -> float:
        return self.compromise_success_distb if mode == "distb" else self.compromise_success_core


@dataclass
class CompromiseEvent:
    t: int
    target: int
    succeeded: bool
    detected: bool


def tamper(packet, pos: int = 0):
    """Corrupt the byte at ``pos`` (mod length); the digest is left untouched."""
    payload = bytearray(packet.payload)
    if payload:
        payload[pos % len(payload)] ^= 0xFF
    else:
        payload = bytearray(b"\xff")
    packet.payload = bytes(payload)
    packet.tampered = True
    return packet


def junk_tx(attacker: int, rng, now: int, digest: bytes | None = None) -> Transaction:
    """Well-formed transaction whose key and signature are random bytes."""
    if digest is None:
        digest = rng.next_u64().to_bytes(8, "big") * 4
    pub = rng.next_u64().to_bytes(8, "big") * 4
    pkt_id = (1 << 62) + rng.randbelow(1 << 30)
    body = tx_body(attacker, pkt_id, digest, now, pub)
    sig = b"".join(rng.next_u64().to_bytes(8, "big") for _ in range(8))
    return Transaction(sha256(body), attacker, pkt_id, digest, now, pub, sig)


def forge_block(attacker: int, chain_view, rng, now: int, n_txs: int = 1) -> Block:
    """A block that links correctly but carries unverifiable signatures."""
    txs = [junk_tx(attacker, rng, now) for _ in range(max(1, n_txs))]
    head = chain_view.head.header
    header = BlockHeader(head.height + 1, chain_view.head_hash,
                         merkle_root([t.tx_id for t in txs]), max(now, head.timestamp), attacker)
    return Block(header, txs)


def attempt_compromise(target, mode: str, profile: AttackProfile, rng, t: int) -> CompromiseEvent:
    """Try to take ``target`` down; success kills the node at ``t``."""
    if not target.alive:
        raise ValueError(f"node {target.id} is already down")
    p = profile.success_for(mode)
    ok = p > 0.0 and rng.random() < p
    if ok:
        target.alive = False
    return CompromiseEvent(t, target.id, ok, detected=not ok and mode == "distb")
