import pytest

from checkpointed_pos.network import ConfigurationError, Network, NetworkPolicy


def net(delta, policy="uniform", min_delay=1):
    n = Network(delta, policy, min_delay=min_delay)
    for p in ("a", "b", "c", "s"):
        n.register(p)
    return n


def test_zero_delay_delivers_same_slot():
    n = net(0, "prompt", min_delay=0)
    msg = n.message(("vote", 1), "s", 5)
    assert set(n.schedule_broadcast(msg).values()) == {5}


def test_max_delay_policy():
    n = net(2, "max_delay")
    assert set(n.schedule_broadcast(n.message(("x",), "s", 5)).values()) == {7}


def test_split_policy():
    n = net(2, "split:a", min_delay=0)
    sched = n.schedule_broadcast(n.message(("x",), "s", 5))
    assert sched == {"a": 5, "b": 7, "c": 7}


def test_honest_delays_are_clamped():
    n = net(2)
    sched = n.schedule_broadcast(n.message(("x",), "s", 5), delays={"a": 10, "b": None})
    assert sched["a"] == 7 and "b" not in sched


def test_adversarial_messages_may_be_late():
    n = net(2)
    sched = n.schedule_broadcast(n.message(("x",), "s", 5, honest=False), delays={"a": 10})
    assert sched["a"] == 15


def test_uniform_delays_stay_in_bounds():
    n = net(3)
    for slot in range(50):
        for when in n.schedule_broadcast(n.message(("x",), "s", slot)).values():
            assert slot + 1 <= when <= slot + 3


def test_due_returns_deliveries():
    n = net(1, "max_delay")
    n.schedule_broadcast(n.message(("x",), "s", 0), recipients=["a"])
    assert n.due(0) == []
    assert [p for p, _ in n.due(1)] == ["a"]


def test_unknown_sender():
    n = net(1)
    with pytest.raises(ConfigurationError):
        n.schedule_broadcast(n.message(("x",), "ghost", 0))


def test_unknown_policy():
    with pytest.raises(ConfigurationError):
        NetworkPolicy("chaos")


def test_late_join_empty():
    assert net(2).late_join("new", 2) == []


def test_late_join_filters_by_send_slot():
    n = net(2)
    for slot in (3, 9):
        n.schedule_broadcast(n.message(("x", slot), "s", slot))
    strict = n.late_join("new", 10, include_recent=False)
    assert [m.sent_at for m in strict] == [3]
    assert [m.sent_at for m in n.late_join("other", 10)] == [3, 9]


def test_two_late_joiners_see_the_same_honest_messages():
    n = net(2)
    n.schedule_broadcast(n.message(("x",), "s", 1))
    a = n.late_join("x1", 6)
    b = n.late_join("x2", 6)
    assert [m.payload for m in a] == [m.payload for m in b]
