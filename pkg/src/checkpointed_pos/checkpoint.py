"""Checkpoints, bundle checkpoints, their validity rules and the OP_RETURN codec.

Wire layout of the body: epoch (8 bytes, big-endian) | target hash (32) |
aggregate signature (48) | signer bitmap (ceil(n/8)). The body is split
over two OP_RETURN payloads, each prefixed with the tag ``BBNT`` and a
one-byte part index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .crypto import (AGG_SIG_SIZE, DIGEST_SIZE, KeyRegistry, Signature, aggregate, bitmap_len,
                     indices_from_bitmap)
from .pos import Bundle, PosBlock, bundle_quorum, is_epoch_end, quorum

TAG = b"BBNT"
MAX_PAYLOAD = 80
FIRST_PART = MAX_PAYLOAD - len(TAG) - 1
EPOCH_SIZE = 8
FIXED_BODY = EPOCH_SIZE + DIGEST_SIZE + AGG_SIG_SIZE

__all__ = [
    "Bundle", "BundleCheckpoint", "CapacityError", "Checkpoint", "FramingError", "QuorumError",
    "TagError", "body_size", "bundle_checkpoint_valid", "checkpoint_valid", "decode_op_return",
    "encode_op_return", "expected_epoch", "make_bundle_checkpoint", "make_checkpoint",
]


class QuorumError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class TagError(ValueError):
    pass


class FramingError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    block_hash: bytes
    agg_sig: bytes
    bitmap: bytes

    @property
    def target(self) -> bytes:
        return self.block_hash


@dataclass(frozen=True)
class BundleCheckpoint:
    epoch: int
    bundle_hash: bytes
    agg_sig: bytes
    bitmap: bytes

    @property
    def target(self) -> bytes:
        return self.bundle_hash


def body_size(n: int) -> int:
    return FIXED_BODY + bitmap_len(n)


def _build(cls, epoch: int, target: bytes, sigs: Iterable[Signature], active_set: Sequence[int],
           threshold: int):
    agg = aggregate(sigs, active_set, target)
    if agg.message != target:
        raise ValueError("signatures are not over the checkpointed hash")
    if agg.count < threshold:
        raise QuorumError(f"{agg.count} signers, need {threshold}")
    return cls(epoch, target, agg.placeholder(), agg.bitmap)


def make_checkpoint(block: PosBlock, precommits: Iterable[Signature],
                    active_set: Sequence[int]) -> Checkpoint:
    """Aggregate a pre-commit quorum for ``block`` into a checkpoint.

    Raises:
        QuorumError: fewer than ``floor(2n/3)+1`` distinct signers.
        MembershipError: a signer is outside ``active_set``.
    """
    return _build(Checkpoint, block.epoch, block.hash, precommits, active_set,
                  quorum(len(active_set)))


def make_bundle_checkpoint(bundle: Bundle, sigs: Iterable[Signature],
                           active_set: Sequence[int]) -> BundleCheckpoint:
    return _build(BundleCheckpoint, bundle.epoch, bundle.hash, sigs, active_set,
                  bundle_quorum(len(active_set)))


def expected_epoch(last_height: int, last_epoch: int, epoch_len: int) -> int:
    """Epoch the next checkpoint must carry, given the last checkpointed block."""
    if last_height == 0 or is_epoch_end(last_height, epoch_len):
        return last_epoch + 1
    return last_epoch


def _effective(cp, active_set: Sequence[int], slashable, registry: KeyRegistry | None):
    n = len(active_set)
    if len(cp.bitmap) != bitmap_len(n):
        return None
    signers = [active_set[i] for i in indices_from_bitmap(cp.bitmap, n)]
    if registry is not None and not all(registry.has_signed(v, cp.target) for v in signers):
        return None
    return [v for v in signers if v not in slashable]


def checkpoint_valid(cp: Checkpoint, expected: int, active_set: Sequence[int],
                     slashable=frozenset(), registry: KeyRegistry | None = None) -> bool:
    """True iff ``cp`` carries the expected epoch and enough non-slashable signers.

    ``active_set`` is the validator set of ``expected``. With a registry, a
    bitmap naming a validator that never signed the hash makes the aggregate
    invalid as a whole.
    """
    if cp.epoch != expected:
        return False
    signers = _effective(cp, active_set, slashable, registry)
    return signers is not None and len(signers) >= quorum(len(active_set))


def bundle_checkpoint_valid(bcp: BundleCheckpoint, expected: int, active_set: Sequence[int],
                            slashable=frozenset(), registry: KeyRegistry | None = None) -> bool:
    if bcp.epoch != expected:
        return False
    signers = _effective(bcp, active_set, slashable, registry)
    return signers is not None and len(signers) >= bundle_quorum(len(active_set))


def signers_of(cp, active_set: Sequence[int]) -> list[int]:
    return [active_set[i] for i in indices_from_bitmap(cp.bitmap, len(active_set))]


def encode_op_return(cp) -> tuple[bytes, bytes]:
    """Split a checkpoint over two tagged OP_RETURN payloads.

    Raises:
        CapacityError: the second payload would exceed 80 bytes.
        ValueError: a field has the wrong width.
    """
    if not 0 <= cp.epoch < 1 << 64:
        raise ValueError("epoch must fit in 8 unsigned bytes")
    if len(cp.target) != DIGEST_SIZE:
        raise ValueError("hash must be 32 bytes")
    if len(cp.agg_sig) != AGG_SIG_SIZE:
        raise ValueError("aggregate signature must be 48 bytes")
    body = cp.epoch.to_bytes(EPOCH_SIZE, "big") + cp.target + cp.agg_sig + cp.bitmap
    p1 = TAG + b"\x00" + body[:FIRST_PART]
    p2 = TAG + b"\x01" + body[FIRST_PART:]
    if len(p2) > MAX_PAYLOAD:
        raise CapacityError(f"second payload is {len(p2)} bytes")
    return p1, p2


def decode_op_return(p1: bytes, p2: bytes, n: int, bundle: bool = False):
    """Inverse of :func:`encode_op_return` for an active set of size ``n``.

    Raises:
        TagError: a payload does not start with ``BBNT``.
        FramingError: part indices out of order or body length mismatch.
    """
    for p in (p1, p2):
        if p[:len(TAG)] != TAG:
            raise TagError("missing BBNT tag")
    if len(p1) <= len(TAG) or len(p2) <= len(TAG) or p1[4] != 0 or p2[4] != 1:
        raise FramingError("payload part indices must be 0 then 1")
    if len(p1) != MAX_PAYLOAD:
        raise FramingError("first payload must carry a full 75-byte body slice")
    body = p1[5:] + p2[5:]
    if len(body) != body_size(n):
        raise FramingError(f"body is {len(body)} bytes, expected {body_size(n)}")
    epoch = int.from_bytes(body[:EPOCH_SIZE], "big")
    target = body[EPOCH_SIZE:EPOCH_SIZE + DIGEST_SIZE]
    agg = body[EPOCH_SIZE + DIGEST_SIZE:FIXED_BODY]
    bitmap = body[FIXED_BODY:]
    spare = bitmap_len(n) * 8 - n
    if spare and bitmap[-1] & ((1 << spare) - 1):
        raise FramingError("bitmap has bits beyond the active set")
    cls = BundleCheckpoint if bundle else Checkpoint
    return cls(epoch, target, agg, bitmap)
