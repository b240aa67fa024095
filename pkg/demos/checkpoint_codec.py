"""Encode a 100-validator checkpoint into its two OP_RETURN payloads and back."""

from checkpointed_pos import Checkpoint, decode_op_return, encode_op_return
from checkpointed_pos.crypto import bitmap_from_indices, digest

cp = Checkpoint(epoch=42, block_hash=digest(b"block"), agg_sig=bytes(48),
                bitmap=bitmap_from_indices(range(67), 100))
p1, p2 = encode_op_return(cp)
print(f"payload 1: {len(p1)} bytes  {p1[:12].hex()}...")
print(f"payload 2: {len(p2)} bytes  {p2.hex()}")
assert decode_op_return(p1, p2, 100) == cp
print("decoded back to the same checkpoint")
