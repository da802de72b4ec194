"""Signature schemes used by ledger transactions and votes.

``Ed25519Scheme`` is the real public-key scheme. ``FastMacScheme`` is a
simulation shortcut: the "signature" is HMAC-SHA512 keyed by the public key,
so it is 64 bytes and verifies with the same call shape, but it proves
integrity only (anyone holding the public key can produce it). Adversary code
never uses it to forge; it emits random bytes instead.
"""
from __future__ import annotations

import hashlib
import hmac
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

_RAW = serialization.Encoding.Raw


@lru_cache(maxsize=4096)
def _ed_public(pub: bytes) -> ed25519.Ed25519PublicKey:
    return ed25519.Ed25519PublicKey.from_public_bytes(pub)


class Ed25519Scheme:
    name = "ed25519"

    def keypair(self, secret: bytes):
        sk = ed25519.Ed25519PrivateKey.from_private_bytes(secret)
        pk = sk.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
        return sk, pk

    def sign(self, sk, message: bytes) -> bytes:
        return sk.sign(message)

    def verify(self, pub: bytes, message: bytes, sig: bytes) -> bool:
        if len(pub) != 32 or len(sig) != 64:
            return False
        try:
            _ed_public(bytes(pub)).verify(bytes(sig), message)
        except (InvalidSignature, ValueError):
            return False
        return True


class FastMacScheme:
    name = "fast"

    def keypair(self, secret: bytes):
        pk = hashlib.sha256(b"fast-pk" + secret).digest()
        return pk, pk

    def sign(self, sk, message: bytes) -> bytes:
        return hmac.digest(sk, message, "sha512")

    def verify(self, pub: bytes, message: bytes, sig: bytes) -> bool:
        if len(pub) != 32 or len(sig) != 64:
            return False
        return hmac.compare_digest(hmac.digest(pub, message, "sha512"), sig)


def get_scheme(fast: bool):
    return FastMacScheme() if fast else Ed25519Scheme()


def node_secret(root_seed: int, node_id: int) -> bytes:
    """Deterministic 32-byte signing secret for a node."""
    return hashlib.sha256(
        b"distb-key" + root_seed.to_bytes(8, "big") + node_id.to_bytes(8, "big")
    ).digest()
