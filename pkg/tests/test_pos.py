import pytest

from checkpointed_pos.checkpoint import (QuorumError, bundle_checkpoint_valid, checkpoint_valid,
                                         expected_epoch, make_bundle_checkpoint, make_checkpoint)
from checkpointed_pos.crypto import KeyRegistry, Signature
from checkpointed_pos.pos import (BlockTree, EpochMismatchError, NotAViolationError, SetTracker, Status,
                                  Tx, ValidatorSetLedger, WithdrawalState, bundle_quorum, epoch_of,
                                  forensic_identify, genesis_block, is_epoch_end, make_block,
                                  make_bundle, proposer_for, quorum, rotate_validators, try_finalize,
                                  verify_fraud_proof)


def sigs(block, signers):
    return [Signature(v, block.hash) for v in signers]


@pytest.fixture
def tree():
    return BlockTree(genesis_block())


def fork(tree, epoch=1):
    g = tree.genesis.hash
    a = make_block(g, 1, epoch, [Tx("a")], 0)
    b = make_block(g, 1, epoch, [Tx("b")], 0)
    tree.add(a)
    tree.add(b)
    return a, b


def test_quorum_arithmetic():
    assert quorum(4) == 3 and quorum(3) == 3 and quorum(100) == 67
    assert bundle_quorum(4) == 3 and bundle_quorum(5) == 3


def test_round_robin_proposer():
    assert [proposer_for((0, 1, 2, 3), h) for h in range(1, 5)] == [0, 1, 2, 3]
    assert proposer_for((0, 7, 2, 3), 5) == 0
    assert proposer_for((0, 7, 2, 3), 6) == 7
    assert all(proposer_for((0,), h) == 0 for h in range(1, 10))


def test_epoch_boundaries():
    assert [epoch_of(h, 4) for h in (1, 4, 5, 8, 9)] == [1, 1, 2, 2, 3]
    assert [is_epoch_end(h, 4) for h in (0, 3, 4, 8)] == [False, False, True, True]


@pytest.mark.parametrize("n,signers,final", [(4, 3, True), (4, 2, False), (3, 3, True), (3, 2, False)])
def test_try_finalize_threshold(tree, n, signers, final):
    block = make_block(tree.genesis.hash, 1, 1, [], 0)
    qc = try_finalize(block, sigs(block, range(signers)), range(n))
    assert (qc is not None) == final


def test_try_finalize_ignores_outsiders_and_other_messages(tree):
    block = make_block(tree.genesis.hash, 1, 1, [], 0)
    other = make_block(tree.genesis.hash, 1, 1, [Tx("x")], 0)
    junk = sigs(block, [0, 1, 9]) + sigs(other, [2])
    assert try_finalize(block, junk, range(4)) is None


def test_forensics_on_conflicting_certificates(tree):
    a, b = fork(tree)
    qa = try_finalize(a, sigs(a, [0, 1, 2]), range(4))
    qb = try_finalize(b, sigs(b, [1, 2, 3]), range(4))
    fp = forensic_identify(qa, qb, tree)
    assert fp.violators == {1, 2}


def test_forensics_full_overlap(tree):
    a, b = fork(tree)
    qa = try_finalize(a, sigs(a, range(3)), range(3))
    qb = try_finalize(b, sigs(b, range(3)), range(3))
    assert forensic_identify(qa, qb, tree).violators == {0, 1, 2}


def test_same_block_is_not_a_violation(tree):
    a, _ = fork(tree)
    qa = try_finalize(a, sigs(a, range(3)), range(4))
    with pytest.raises(NotAViolationError):
        forensic_identify(qa, qa, tree)


def test_different_epochs_are_not_comparable(tree):
    a = make_block(tree.genesis.hash, 1, 1, [Tx("a")], 0)
    b = make_block(tree.genesis.hash, 1, 2, [Tx("b")], 0)
    tree.add(a)
    tree.add(b)
    qa = try_finalize(a, sigs(a, range(3)), range(4))
    qb = try_finalize(b, sigs(b, range(3)), range(4))
    with pytest.raises(EpochMismatchError):
        forensic_identify(qa, qb, tree)


def test_fraud_proof_verification_needs_real_signatures(tree):
    a, b = fork(tree)
    reg = KeyRegistry()
    for v in range(4):
        reg.register(v, f"v{v}")
    real_a = [reg.sign_digest(f"v{v}", reg.key(v), a.hash) for v in (0, 1, 2)]
    real_b = [reg.sign_digest(f"v{v}", reg.key(v), b.hash) for v in (1, 2, 3)]
    fp = forensic_identify(try_finalize(a, real_a, range(4)), try_finalize(b, real_b, range(4)), tree)
    assert verify_fraud_proof(fp, tree, reg)
    fake = forensic_identify(try_finalize(a, real_a, range(4)),
                             try_finalize(b, sigs(b, (0, 1, 3)), range(4)), tree)
    assert not verify_fraud_proof(fake, tree, reg)


def test_block_tree_relations(tree):
    a, b = fork(tree)
    c = make_block(a.hash, 2, 1, [], 1)
    tree.add(c)
    assert tree.chain(c.hash) == [tree.genesis.hash, a.hash, c.hash]
    assert tree.is_ancestor(a.hash, c.hash) and not tree.is_ancestor(b.hash, c.hash)
    assert tree.conflicts(b.hash, c.hash)
    assert not tree.add(c)
    with pytest.raises(KeyError):
        tree.add(make_block(bytes(32), 1, 1, [Tx("orphan")], 0))


def test_bundle_sits_in_the_tree(tree):
    a, _ = fork(tree)
    u = make_bundle(a.hash, 2, [Tx("u")])
    tree.add(u)
    assert tree.last_block(u.hash) == a


def test_rotation_without_requests_keeps_the_set():
    ledger = ValidatorSetLedger({1: (0, 1, 2, 3)}, (7,))
    assert rotate_validators(ledger, [], 1).sets[2] == (0, 1, 2, 3)


def test_rotation_replaces_in_place():
    g = genesis_block()
    b = make_block(g.hash, 1, 1, [Tx("r2", "withdraw_request", 2)], 0)
    out = rotate_validators(ValidatorSetLedger({1: (0, 1, 2, 3)}, (7, 8)), [b], 1)
    assert out.sets[2] == (0, 1, 7, 3)
    assert out.staking_queue == (8,)


def test_rotation_two_requests_advance_queue_by_two():
    g = genesis_block()
    b = make_block(g.hash, 1, 1, [Tx("r0", "withdraw_request", 0), Tx("r3", "withdraw_request", 3)], 0)
    out = rotate_validators(ValidatorSetLedger({1: (0, 1, 2, 3)}, (7, 8, 9)), [b], 1)
    assert out.sets[2] == (7, 1, 2, 8)
    assert out.staking_queue == (9,)


def test_set_tracker_rotates_at_epoch_change(tree):
    tracker = SetTracker(tree, (0, 1, 2, 3), (7,))
    b1 = make_block(tree.genesis.hash, 1, 1, [Tx("r2", "withdraw_request", 2)], 0)
    tree.add(b1)
    assert tracker.active_set(b1.hash, 1) == (0, 1, 2, 3)
    assert tracker.active_set(b1.hash, 2) == (0, 1, 7, 3)


def test_withdrawal_status_machine():
    ws = WithdrawalState()
    assert ws.get(1) is Status.ACTIVE
    ws.move(1, Status.REQUESTED)
    ws.move(1, Status.GRANTED, slot=9)
    ws.move(1, Status.WITHDRAWN)
    assert ws.grant_slot[1] == 9
    with pytest.raises(ValueError):
        ws.move(1, Status.ACTIVE)
    with pytest.raises(ValueError):
        ws.move(2, Status.WITHDRAWN)


# -- checkpoint validity -------------------------------------------------------

def _cp(n, signers, epoch=1):
    block = make_block(genesis_block().hash, 1, epoch, [], 0)
    return make_checkpoint(block, sigs(block, signers), range(n))


def test_checkpoint_needs_a_quorum():
    assert _cp(4, [0, 1, 2])
    with pytest.raises(QuorumError):
        _cp(4, [0, 1])


def test_checkpoint_validity():
    cp = _cp(4, [0, 1, 2])
    assert checkpoint_valid(cp, 1, range(4))
    assert not checkpoint_valid(cp, 2, range(4))
    assert not checkpoint_valid(cp, 1, range(4), slashable={1})


def test_bundle_checkpoint_validity():
    bundle = make_bundle(genesis_block().hash, 1, [])
    bcp = make_bundle_checkpoint(bundle, sigs(bundle, [0, 1, 2]), range(5))
    assert bundle_checkpoint_valid(bcp, 1, range(5))
    assert not bundle_checkpoint_valid(bcp, 1, range(5), slashable={0})
    with pytest.raises(QuorumError):
        make_bundle_checkpoint(bundle, sigs(bundle, [0, 1]), range(4))


def test_expected_epoch_advances_after_epoch_end():
    assert expected_epoch(0, 0, 4) == 1
    assert expected_epoch(4, 1, 4) == 2
    assert expected_epoch(6, 2, 4) == 2
