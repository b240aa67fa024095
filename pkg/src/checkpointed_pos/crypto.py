"""Simulated cryptography.

Hashes are real SHA-256 digests over canonical bytes, but signatures are
bookkeeping records: a signature by validator ``v`` exists only if the party
currently holding ``v``'s key produced it through :class:`KeyRegistry`.
Moving a key's holder to the adversary is how posterior corruption is
expressed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

DIGEST_SIZE = 32
AGG_SIG_SIZE = 48
ADVERSARY = "adv"


class ForgeryError(Exception):
    """Raised when a party signs with a key it does not hold."""


class KeyErasedError(ForgeryError):
    """Raised when a key was erased on exit and can no longer sign."""


class AggregationError(ValueError):
    """Raised when signatures over different messages are aggregated."""


class MembershipError(ValueError):
    """Raised when a signer is outside the expected validator set."""


class DigestCollisionError(RuntimeError):
    """Two different serializations mapped to one digest."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def short(d: bytes) -> str:
    """Compact hex form used in traces."""
    return d[:8].hex()


class ContentStore:
    """Content-addressed registry that refuses digest collisions."""

    def __init__(self) -> None:
        self._bytes: dict[bytes, bytes] = {}
        self._objects: dict[bytes, object] = {}

    def put(self, serialized: bytes, obj: object = None) -> bytes:
        d = digest(serialized)
        known = self._bytes.get(d)
        if known is not None and known != serialized:
            raise DigestCollisionError(d.hex())
        self._bytes[d] = serialized
        if obj is not None:
            self._objects[d] = obj
        return d

    def get(self, d: bytes):
        return self._objects.get(d)

    def __contains__(self, d: bytes) -> bool:
        return d in self._bytes

    def __len__(self) -> int:
        return len(self._bytes)


@dataclass(frozen=True)
class KeyHandle:
    validator: int
    epoch_acquired: int
    holder: str


@dataclass(frozen=True)
class Signature:
    signer: int
    message: bytes


class KeyRegistry:
    """Tracks who holds each validator key and every signature produced.

    With ``keys_erased`` set, a key handed over on exit is unusable, which
    models key-evolving schemes.
    """

    def __init__(self, keys_erased: bool = False) -> None:
        self.keys_erased = keys_erased
        self._keys: dict[int, KeyHandle] = {}
        self._erased: set[int] = set()
        self._signed: set[tuple[int, bytes]] = set()
        self.sign_log: list[tuple[int, bytes, str]] = []

    def register(self, validator: int, holder: str, epoch: int = 0) -> KeyHandle:
        key = KeyHandle(validator, epoch, holder)
        self._keys[validator] = key
        return key

    def key(self, validator: int) -> KeyHandle:
        return self._keys[validator]

    def holder_of(self, validator: int) -> str:
        return self._keys[validator].holder

    def transfer(self, validator: int, new_holder: str, epoch: int) -> KeyHandle:
        key = KeyHandle(validator, epoch, new_holder)
        self._keys[validator] = key
        if self.keys_erased:
            self._erased.add(validator)
        return key

    def sign_digest(self, holder: str, key: KeyHandle, message: bytes) -> Signature:
        current = self._keys.get(key.validator)
        if current is None or current.holder != holder:
            raise ForgeryError(f"{holder} does not hold the key of validator {key.validator}")
        if key.validator in self._erased:
            raise KeyErasedError(f"key of validator {key.validator} was erased")
        sig = Signature(key.validator, message)
        self._signed.add((key.validator, message))
        self.sign_log.append((key.validator, message, holder))
        return sig

    def sign(self, holder: str, key: KeyHandle, msg_bytes: bytes) -> Signature:
        return self.sign_digest(holder, key, digest(msg_bytes))

    def verify(self, sig: Signature, signer: int, message: bytes) -> bool:
        return sig.signer == signer and sig.message == message and (signer, message) in self._signed

    def has_signed(self, signer: int, message: bytes) -> bool:
        return (signer, message) in self._signed


def bitmap_len(n: int) -> int:
    return (n + 7) // 8


def bitmap_from_indices(indices: Iterable[int], n: int) -> bytes:
    out = bytearray(bitmap_len(n))
    for i in indices:
        if not 0 <= i < n:
            raise MembershipError(f"bit index {i} outside 0..{n - 1}")
        out[i // 8] |= 0x80 >> (i % 8)
    return bytes(out)


def indices_from_bitmap(bitmap: bytes, n: int) -> list[int]:
    return [i for i in range(n) if bitmap[i // 8] & (0x80 >> (i % 8))]


def popcount(bitmap: bytes) -> int:
    return sum(bin(b).count("1") for b in bitmap)


@dataclass(frozen=True)
class AggSignature:
    message: bytes
    bitmap: bytes
    n: int

    def signers(self, active_set: Sequence[int]) -> list[int]:
        return [active_set[i] for i in indices_from_bitmap(self.bitmap, self.n)]

    @property
    def count(self) -> int:
        return popcount(self.bitmap)

    def placeholder(self) -> bytes:
        """Opaque 48-byte stand-in for the aggregate on the wire."""
        seed = digest(b"agg" + self.message + self.bitmap)
        return (seed + seed)[:AGG_SIG_SIZE]


def aggregate(sigs: Iterable[Signature], active_set: Sequence[int],
              message: bytes | None = None) -> AggSignature:
    """Fold signatures into a bitmap over ``active_set`` positions.

    Raises:
        AggregationError: signatures cover different messages.
        MembershipError: a signer is not in ``active_set``.
    """
    sigs = list(sigs)
    messages = {s.message for s in sigs}
    if len(messages) > 1:
        raise AggregationError("signatures over different messages")
    if messages:
        message = messages.pop()
    if message is None:
        message = bytes(DIGEST_SIZE)
    position = {v: i for i, v in enumerate(active_set)}
    indices = set()
    for s in sigs:
        if s.signer not in position:
            raise MembershipError(f"validator {s.signer} not in active set")
        indices.add(position[s.signer])
    return AggSignature(message, bitmap_from_indices(indices, len(active_set)), len(active_set))


def verify_aggregate(registry: KeyRegistry, agg: AggSignature, active_set: Sequence[int]) -> bool:
    if agg.n != len(active_set):
        return False
    return all(registry.has_signed(v, agg.message) for v in agg.signers(active_set))


__all__ = [
    "ADVERSARY", "AGG_SIG_SIZE", "DIGEST_SIZE", "AggSignature", "AggregationError",
    "ContentStore", "DigestCollisionError", "ForgeryError", "KeyErasedError", "KeyHandle",
    "KeyRegistry", "MembershipError", "Signature", "aggregate", "bitmap_from_indices",
    "bitmap_len", "digest", "indices_from_bitmap", "popcount", "short", "verify_aggregate",
]
