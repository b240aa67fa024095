import pytest

from checkpointed_pos.crypto import (AggregationError, ContentStore, DigestCollisionError,
                                     ForgeryError, KeyErasedError, KeyRegistry, MembershipError,
                                     Signature, aggregate, bitmap_from_indices, bitmap_len, digest,
                                     indices_from_bitmap, popcount, verify_aggregate)

MSG = digest(b"block")


@pytest.fixture
def registry():
    reg = KeyRegistry()
    for v in range(4):
        reg.register(v, f"v{v}")
    return reg


def test_honest_signature_verifies(registry):
    sig = registry.sign_digest("v0", registry.key(0), MSG)
    assert registry.verify(sig, 0, MSG)
    assert not registry.verify(sig, 1, MSG)


def test_signing_with_someone_elses_key_is_a_forgery(registry):
    with pytest.raises(ForgeryError):
        registry.sign_digest("v1", registry.key(0), MSG)


def test_unsigned_message_does_not_verify(registry):
    assert not registry.verify(Signature(0, MSG), 0, MSG)


def test_transferred_key_signs_for_new_holder(registry):
    registry.transfer(2, "adv", epoch=3)
    sig = registry.sign_digest("adv", registry.key(2), MSG)
    assert registry.verify(sig, 2, MSG)
    assert registry.key(2).epoch_acquired == 3
    with pytest.raises(ForgeryError):
        registry.sign_digest("v2", registry.key(2), MSG)


def test_erased_key_cannot_sign():
    reg = KeyRegistry(keys_erased=True)
    reg.register(0, "v0")
    reg.transfer(0, "adv", epoch=1)
    with pytest.raises(KeyErasedError):
        reg.sign_digest("adv", reg.key(0), MSG)


def test_empty_aggregate_has_zero_bitmap():
    agg = aggregate([], range(10))
    assert agg.bitmap == bytes(2)
    assert agg.count == 0


def test_bitmap_for_100_validators_with_67_signers(registry):
    # 67 signers out of 100 fit in a 13-byte bitmap
    reg = KeyRegistry()
    for v in range(100):
        reg.register(v, f"v{v}")
    sigs = [reg.sign_digest(f"v{v}", reg.key(v), MSG) for v in range(67)]
    agg = aggregate(sigs, range(100))
    assert len(agg.bitmap) == 13
    assert popcount(agg.bitmap) == 67
    assert verify_aggregate(reg, agg, range(100))


def test_duplicate_signature_counts_once(registry):
    sig = registry.sign_digest("v0", registry.key(0), MSG)
    assert aggregate([sig, sig], range(4)).count == 1


def test_aggregate_rejects_mixed_messages(registry):
    a = registry.sign_digest("v0", registry.key(0), MSG)
    b = registry.sign_digest("v1", registry.key(1), digest(b"other"))
    with pytest.raises(AggregationError):
        aggregate([a, b], range(4))


def test_aggregate_rejects_outsider(registry):
    sig = registry.sign_digest("v3", registry.key(3), MSG)
    with pytest.raises(MembershipError):
        aggregate([sig], [0, 1, 2])


def test_verify_aggregate_catches_a_bit_for_a_non_signer(registry):
    sig = registry.sign_digest("v0", registry.key(0), MSG)
    agg = aggregate([sig], range(4))
    forged = type(agg)(agg.message, bitmap_from_indices([0, 1], 4), 4)
    assert verify_aggregate(registry, agg, range(4))
    assert not verify_aggregate(registry, forged, range(4))


def test_bitmap_is_msb_first():
    assert bitmap_from_indices([0], 8) == b"\x80"
    assert bitmap_from_indices([7, 8], 9) == b"\x01\x80"
    assert indices_from_bitmap(b"\x01\x80", 9) == [7, 8]
    assert [bitmap_len(n) for n in (1, 8, 9, 100)] == [1, 1, 2, 13]


def test_content_store_detects_collisions(monkeypatch):
    store = ContentStore()
    d = store.put(b"a", "A")
    assert store.get(d) == "A" and d in store
    import checkpointed_pos.crypto as crypto
    monkeypatch.setattr(crypto, "digest", lambda data: d)
    with pytest.raises(DigestCollisionError):
        store.put(b"b")
