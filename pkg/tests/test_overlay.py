import math
import random

import pytest

from socialmesh.errors import BootstrapUnreachable, EmptyOverlay, IdCollision, UnknownNode
from socialmesh.overlay import Overlay, OverlayId, responsible_node, ring_distance


def brute_successor(key, nodes, bits):
    # independent oracle: smallest id >= key, else wrap to the smallest id
    above = [n for n in nodes if n >= key]
    return min(above) if above else min(nodes)


def grown(ids, bits, seed=0):
    rng = random.Random(seed)
    ov = Overlay(bits=bits)
    ov.create(ids[0])
    for nid in ids[1:]:
        ov.join(nid, rng.choice(sorted(ov.nodes)))
    return ov


def test_ring_distance_examples():
    assert ring_distance(5, 5, 8) == 0
    assert ring_distance(250, 5, 8) == 11
    assert ring_distance(5, 250, 8) == 245


def test_responsible_node_examples():
    assert responsible_node(25, {10, 20, 30}, 8) == 30
    assert responsible_node(250, {10, 20, 30}, 8) == 10
    assert responsible_node(20, {10, 20, 30}, 8) == 20
    for key in (0, 10, 99, 255):
        assert responsible_node(key, {10}, 8) == 10
    with pytest.raises(EmptyOverlay):
        responsible_node(3, set(), 8)


def test_bits_range_enforced():
    with pytest.raises(ValueError):
        Overlay(bits=7)
    with pytest.raises(ValueError):
        Overlay(bits=161)
    ov = Overlay(bits=8)
    with pytest.raises(ValueError):
        ov.create(256)


def test_single_node_routes_to_itself():
    ov = Overlay(bits=8)
    ov.create(42)
    for key in (0, 41, 42, 43, 255):
        assert ov.route(42, key) in ([], [42])
        assert ov.lookup(42, key) == 42


def test_join_into_single_node_overlay():
    ov = Overlay(bits=8)
    ov.create(10)
    ov.join(200, 10)
    for a, b in ((10, 200), (200, 10)):
        rt = ov.routing_table(a)
        assert rt.successor == b
        assert rt.predecessor == b


def test_duplicate_join_rejected():
    ov = Overlay(bits=8)
    ov.create(10)
    with pytest.raises(IdCollision):
        ov.join(10, 10)
    with pytest.raises(BootstrapUnreachable):
        ov.join(11, 99)


def test_sequential_joins_give_sorted_ring():
    rng = random.Random(7)
    ids = rng.sample(range(1 << 16), 64)
    ov = grown(ids, 16, seed=7)
    ov.stabilize_until_stable()
    assert ov.ring_order() == sorted(ids)
    assert ov.ring_problems() == []


def test_routing_table_invariants():
    rng = random.Random(3)
    ids = rng.sample(range(1 << 12), 40)
    ov = grown(ids, 12, seed=3)
    ov.stabilize_until_stable()
    s = sorted(ids)
    for i, nid in enumerate(s):
        rt = ov.routing_table(nid)
        assert rt.successor == s[(i + 1) % len(s)]
        assert rt.predecessor == s[i - 1]
        assert len(rt.shortcuts) == 12
        for offset, link in rt.shortcuts:
            assert link in ov
            assert link == brute_successor((nid + offset) % (1 << 12), ids, 12)


def test_route_matches_oracle_for_all_pairs():
    rng = random.Random(11)
    ids = rng.sample(range(256), 32)
    ov = Overlay.build(ids, bits=8)
    for src in ids:
        for key in range(256):
            path = ov.route(src, key)
            terminal = path[-1] if path else src
            assert terminal == brute_successor(key, ids, 8)
            assert src not in path


def test_grown_overlay_routes_like_built_one():
    rng = random.Random(5)
    ids = rng.sample(range(1 << 10), 48)
    ov = grown(ids, 10, seed=5)
    ov.stabilize_until_stable()
    for _ in range(500):
        src, key = rng.choice(ids), rng.randrange(1 << 10)
        assert ov.lookup(src, key) == brute_successor(key, ids, 10)


def test_mean_hops_logarithmic():
    rng = random.Random(0)
    means = {}
    for n in (32, 128, 512):
        ids = rng.sample(range(1 << 32), n)
        ov = Overlay.build(ids, bits=32)
        hops = [len(ov.route(rng.choice(ids), rng.getrandbits(32))) for _ in range(2000)]
        means[n] = sum(hops) / len(hops)
        assert means[n] <= 1.5 * math.log2(n)
    assert means[32] <= means[128] <= means[512]
    assert means[512] / means[32] < (512 / 32) / 4


def test_fail_in_three_node_ring():
    ov = Overlay.build([10, 100, 200], bits=8)
    ov.fail(100)
    ov.stabilize_until_stable()
    assert ov.ring_order() == [10, 200]
    assert ov.routing_table(10).successor == 200
    assert ov.routing_table(200).successor == 10


def test_fail_ten_percent_then_stabilize():
    rng = random.Random(9)
    ids = rng.sample(range(1 << 20), 128)
    ov = Overlay.build(ids, bits=20)
    dead = set(rng.sample(ids, 13))
    for d in sorted(dead):
        ov.fail(d)
    ov.stabilize_until_stable()
    survivors = sorted(set(ids) - dead)
    assert ov.ring_order() == survivors
    assert ov.ring_problems() == []
    for _ in range(300):
        src, key = rng.choice(survivors), rng.getrandbits(20)
        assert ov.lookup(src, key) == brute_successor(key, survivors, 20)


def test_leave_is_graceful():
    ov = Overlay.build([10, 100, 200], bits=8)
    ov.leave(100)
    # no stabilization needed after a graceful leave
    assert ov.routing_table(10).successor == 200
    assert ov.routing_table(200).predecessor == 10


def test_leave_last_node_empties_overlay():
    ov = Overlay(bits=8)
    ov.create(5)
    ov.leave(5)
    assert len(ov) == 0
    with pytest.raises(EmptyOverlay):
        ov.route(5, 1)
    with pytest.raises(UnknownNode):
        ov.leave(5)
    with pytest.raises(UnknownNode):
        ov.fail(5)


def test_broadcast_single_node():
    ov = Overlay(bits=8)
    ov.create(7)
    assert ov.broadcast(7, b"p") == {7}


def test_broadcast_reaches_everyone_once():
    rng = random.Random(2)
    ids = rng.sample(range(1 << 24), 50)
    ov = Overlay.build(ids, bits=24)
    seen = []
    delivered = ov.broadcast(ids[0], b"p", lambda n, p: seen.append((n, p)))
    assert delivered == set(ids)
    assert sorted(n for n, _ in seen) == sorted(ids)
    assert all(p == b"p" for _, p in seen)


def test_broadcast_with_failure_mid_flight():
    rng = random.Random(4)
    ids = rng.sample(range(1 << 24), 50)
    ov = Overlay.build(ids, bits=24)
    victim = sorted(ids)[20]
    state = {"done": False}

    def deliver(node, _p):
        if not state["done"]:
            state["done"] = True
            ov.fail(victim)

    delivered = ov.broadcast(sorted(ids)[0], b"p", deliver)
    assert delivered >= set(ids) - {victim}


def test_overlay_ids():
    assert str(OverlayId.directory()) == "directory"
    a, b = OverlayId.profile(b"\x01" * 32), OverlayId.profile(b"\x01" * 32)
    assert a == b and a != OverlayId.directory()
