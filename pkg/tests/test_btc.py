import pytest

from checkpointed_pos.btc import BtcLedger, BtcTx, PayloadSizeError, r_fin


def tx(name="x"):
    return BtcTx("checkpoint", (b"BBNT",), "v0", 0, txid=name)


def run_until(ledger, slot):
    for s in range(slot + 1):
        ledger.produce_block(s)


def test_r_fin_formula():
    assert r_fin(1, 1, 2) == 5
    assert BtcLedger(2, 2, 2).r_fin == 10


def test_prompt_inclusion_lands_in_next_block():
    ledger = BtcLedger(2, 2, 2)
    ledger.submit(tx(), 0)
    run_until(ledger, 2)
    assert ledger.included_at["x"] == 1


def test_max_delay_uses_last_allowed_block():
    ledger = BtcLedger(2, 2, 2, "max_delay")
    ledger.submit(tx(), 5)
    run_until(ledger, 20)
    # deadline block: floor(5 / 2) + 2
    assert ledger.included_at["x"] == 4


def test_oversize_payload():
    with pytest.raises(PayloadSizeError):
        BtcTx("checkpoint", (bytes(81),), "v0", 0)
    BtcTx("checkpoint", (bytes(80),), "v0", 0)


def test_unknown_kind():
    with pytest.raises(ValueError):
        BtcTx("spam", (), "v0", 0)


def test_empty_blocks_keep_cadence():
    ledger = BtcLedger(1, 3, 1)
    run_until(ledger, 9)
    assert [b.produced_at for b in ledger.blocks] == [0, 3, 6, 9]
    assert all(b.txs == () for b in ledger.blocks)


def test_worst_case_confirmation_within_r_fin():
    k, interval, delta = 1, 1, 2
    ledger = BtcLedger(k, interval, delta, "max_delay")
    ledger.submit(tx(), 0)
    deadline = r_fin(k, interval, delta)
    assert deadline == 3 + delta
    for slot in range(deadline + 1):
        ledger.produce_block(slot)
    view = ledger.confirmed_view("c", deadline, lag=delta)
    assert any("x" == t.txid for b in view.confirmed for t in b.txs)


def test_reverse_order_still_confirms_both():
    ledger = BtcLedger(1, 1, 1, "reverse")
    ledger.submit(tx("a"), 0)
    ledger.submit(tx("b"), 0)
    run_until(ledger, 1)
    assert [t.txid for t in ledger.blocks[1].txs] == ["b", "a"]


def test_short_chain_view_is_genesis_only():
    ledger = BtcLedger(3, 1, 1)
    run_until(ledger, 2)
    assert len(ledger.confirmed_view("c", 2)) == 1


def test_views_are_monotone_and_prefix_comparable():
    ledger = BtcLedger(2, 1, 2)
    prev = None
    for slot in range(20):
        ledger.produce_block(slot)
        fast = ledger.confirmed_view("fast", slot, 0)
        slow = ledger.confirmed_view("slow", slot, 2)
        assert slow.is_prefix_of(fast)
        if prev is not None:
            assert prev.is_prefix_of(fast)
        prev = fast


def test_bad_policy():
    with pytest.raises(ValueError):
        BtcLedger(1, 1, 1, "nope")
