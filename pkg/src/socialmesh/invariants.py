"""Headless property suite used by the ``invariants`` subcommand.

Each check builds its own small world from a labelled seed and compares the
implementation against a brute-force or centralized oracle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from .crypto import TEST_PROVIDER
from .dht import Clock, Dht
from .encoding import canonical_bytes
from .errors import DecryptionError
from .identity import (
    FRESHNESS_WINDOW,
    FriendStatus,
    Identity,
    PublicInfo,
    sign_friend_entry,
    verify_friend_entry,
)
from .overlay import Overlay, responsible_node
from .profile import PrivateMessageEnvelope, open_envelope, seal_message


@dataclass
class CheckResult:
    name: str
    ok: bool
    cases: int
    detail: str = ""


def _rng(seed: int, label: str) -> random.Random:
    return random.Random(f"{label}/{seed}")


def check_route_oracle(seed: int) -> CheckResult:
    rng = _rng(seed, "route")
    ids = rng.sample(range(256), 32)
    ov = Overlay.build(ids, bits=8)
    bad = 0
    for src in ids:
        for key in range(256):
            if ov.lookup(src, key) != responsible_node(key, ids, 8):
                bad += 1
    return CheckResult("route_matches_oracle", bad == 0, 32 * 256, f"{bad} mismatches")


def check_ring_after_churn(seed: int) -> CheckResult:
    rng = _rng(seed, "ring")
    bits = 16
    ids = rng.sample(range(1 << bits), 80)
    ov = Overlay(bits=bits)
    ov.create(ids[0])
    for nid in ids[1:64]:
        ov.join(nid, rng.choice(sorted(ov.nodes)))
    ov.stabilize_until_stable()
    for nid in rng.sample(sorted(ov.nodes), 6):
        ov.fail(nid)
    for nid in ids[64:]:
        ov.join(nid, rng.choice(sorted(ov.nodes)))
    ov.stabilize_until_stable()
    problems = ov.ring_problems()
    return CheckResult("ring_consistent_after_churn", not problems, len(ov), "; ".join(problems[:3]))


def check_broadcast(seed: int) -> CheckResult:
    rng = _rng(seed, "broadcast")
    ids = rng.sample(range(1 << 20), 50)
    ov = Overlay.build(ids, bits=20)
    got: list[int] = []
    reached = ov.broadcast(rng.choice(ids), b"x", lambda n, _p: got.append(n))
    ok = sorted(got) == sorted(ids) and len(got) == len(set(got)) and reached == set(ids)
    return CheckResult("broadcast_exactly_once", ok, len(ids), f"{len(got)} deliveries")


def check_dht_oracle(seed: int, sequences: int = 50, ops: int = 30) -> CheckResult:
    bad = 0
    for s in range(sequences):
        rng = _rng(seed, f"dht{s}")
        clock = Clock()
        ids = rng.sample(range(256), 12)
        dht = Dht(Overlay.build(ids, bits=8), clock, 3)
        oracle: dict[int, dict[bytes, float]] = {}
        keys = rng.sample(range(256), 4)
        for _ in range(ops):
            key = rng.choice(keys)
            if rng.random() < 0.5:
                v = rng.choice([b"a", b"b", b"c"])
                ttl = rng.choice([5, 20, 100])
                dht.put(rng.choice(ids), key, v, ttl)
                oracle.setdefault(key, {})[v] = clock.now + ttl
                if dht.get(rng.choice(ids), key) != frozenset(x for x, exp in oracle[key].items() if clock.now <= exp):
                    bad += 1
            else:
                clock.advance(rng.choice([0, 1, 7]))
            for k in keys:
                want = frozenset(x for x, exp in oracle.get(k, {}).items() if clock.now <= exp)
                if dht.get(rng.choice(ids), k) != want:
                    bad += 1
    return CheckResult("dht_matches_multimap", bad == 0, sequences, f"{bad} mismatches")


def check_identity(seed: int, records: int = 100) -> CheckResult:
    rng = _rng(seed, "identity")
    bad = 0
    for i in range(records):
        a = Identity.create(PublicInfo(f"user {i}", f"u{i}@x.invalid", (), None), TEST_PROVIDER, 0, rng)
        b = Identity.create(PublicInfo(f"friend {i}", "", (), None), TEST_PROVIDER, 0, rng)
        h0 = a.cert_hash
        t = rng.randrange(1, 10**6)
        entry = sign_friend_entry(b, a.cert, t)
        a.add_friend_entry(entry)
        bad += a.cert_hash != h0
        bad += verify_friend_entry(entry, a.cert, b.cert, t + FRESHNESS_WINDOW) != FriendStatus.VALID_FRESH
        bad += verify_friend_entry(entry, a.cert, b.cert, t + FRESHNESS_WINDOW + 1) != FriendStatus.VALID_STALE
        data = rng.randbytes(rng.randrange(1, 64))
        sig = a.sign(data)
        bad += not TEST_PROVIDER.verify(a.public_key, data, sig)
        bit = rng.randrange(len(data) * 8)
        flipped = bytearray(data)
        flipped[bit // 8] ^= 1 << (bit % 8)
        bad += TEST_PROVIDER.verify(a.public_key, bytes(flipped), sig)
    return CheckResult("identity_properties", bad == 0, records, f"{bad} failures")


def check_private_messages(seed: int, count: int = 50) -> CheckResult:
    rng = _rng(seed, "pm")
    owner = Identity.create(PublicInfo("owner", "", (), None), TEST_PROVIDER, 0, rng)
    other = Identity.create(PublicInfo("other", "", (), None), TEST_PROVIDER, 0, rng)
    sender = Identity.create(PublicInfo("sender", "", (), None), TEST_PROVIDER, 0, rng)
    bad = 0
    for i in range(count):
        body = rng.randbytes(rng.randrange(0, 80))
        env = seal_message(sender, owner.cert, f"s{i}", body, i, rng)
        msg = open_envelope(owner, env)
        bad += msg.body != body or msg.sender_cert_hash != sender.cert_hash
        try:
            open_envelope(other, env)
            bad += 1
        except DecryptionError:
            pass
        ct = bytearray(env.ciphertext)
        bit = rng.randrange(len(ct) * 8)
        ct[bit // 8] ^= 1 << (bit % 8)
        try:
            open_envelope(owner, PrivateMessageEnvelope(env.encrypted_key, bytes(ct)))
            bad += 1
        except DecryptionError:
            pass
    return CheckResult("private_message_properties", bad == 0, count, f"{bad} failures")


def check_demo(seed: int) -> CheckResult:
    from .simnet.demo import run_demo

    res = run_demo(seed)
    failed = [k for k, v in res.checks.items() if not v]
    return CheckResult("demo_assertions", res.ok, 1, ", ".join(failed))


def check_determinism(seed: int) -> CheckResult:
    from .simnet import run

    cfg = {"experiment": "join_latency", "seed": seed, "sizes": [8, 16], "trials": 2, "profile_sizes": [4]}
    a, b = run(cfg), run(cfg)
    ok = a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    return CheckResult("report_deterministic", ok, 2)


CHECKS: tuple[Callable[[int], CheckResult], ...] = (
    check_route_oracle,
    check_ring_after_churn,
    check_broadcast,
    check_dht_oracle,
    check_identity,
    check_private_messages,
    check_demo,
    check_determinism,
)


def run_invariants(seed: int = 0) -> list[CheckResult]:
    out = []
    for fn in CHECKS:
        try:
            out.append(fn(seed))
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            out.append(CheckResult(fn.__name__.removeprefix("check_"), False, 0, f"{type(exc).__name__}: {exc}"))
    return out
