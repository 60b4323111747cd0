"""Multi-value DHT with TTL and successor-list replication on top of an Overlay."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Optional

from .errors import EmptyOverlay, UnknownNode, ValueTooLarge
from .overlay import Overlay

logger = logging.getLogger(__name__)

DEFAULT_REPLICATION = 3
MAX_VALUE_SIZE = 64 * 1024

DAY = 86400.0


def derive_key(data: bytes, bits: int) -> int:
    """Hash canonical bytes into the ``bits``-wide address space."""
    return int.from_bytes(hashlib.sha256(data).digest(), "big") % (1 << bits)


def value_hash(value: bytes) -> bytes:
    return hashlib.sha256(value).digest()


class Clock:
    """Simulated clock in fractional seconds."""

    def __init__(self, now: float = 0.0):
        self.now = float(now)

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        self.now += seconds
        return self.now

    def set(self, now: float) -> None:
        if now < self.now:
            raise ValueError("clock cannot run backwards")
        self.now = float(now)


@dataclass
class DhtEntry:
    key: int
    value: bytes
    inserted_at: float
    ttl: float
    value_hash: bytes

    def expired(self, now: float) -> bool:
        return now > self.inserted_at + self.ttl


def _store_entry(bucket_map: dict, key: int, value: bytes, vh: bytes, now: float, ttl: float) -> None:
    bucket = bucket_map.setdefault(key, {})
    existing = bucket.get(vh)
    if existing is None:
        bucket[vh] = DhtEntry(key, value, now, ttl, vh)
    else:
        existing.inserted_at = now
        existing.ttl = ttl


def _live_values(bucket_map: dict, key: int, now: float) -> list[bytes]:
    bucket = bucket_map.get(key)
    if not bucket:
        return []
    return [e.value for e in bucket.values() if not e.expired(now)]


def _copy_into(bucket_map: dict, key: int, entry: DhtEntry) -> bool:
    bucket = bucket_map.setdefault(key, {})
    mine = bucket.get(entry.value_hash)
    if mine is not None and mine.inserted_at + mine.ttl >= entry.inserted_at + entry.ttl:
        return False
    bucket[entry.value_hash] = DhtEntry(entry.key, entry.value, entry.inserted_at, entry.ttl, entry.value_hash)
    return True


class Dht:
    """Key/value layer over one overlay.

    Values at a key form a set keyed by value hash; re-putting a value
    refreshes its timestamp.  Each key lives on the ``replication`` live
    nodes clockwise from it.  Nodes registered with :meth:`pin` also keep a
    persistent full copy of every entry, which survives their offline
    periods and is readable while they are online.
    """

    def __init__(
        self,
        overlay: Overlay,
        clock: Optional[Clock] = None,
        replication: int = DEFAULT_REPLICATION,
        max_value_size: int = MAX_VALUE_SIZE,
    ):
        if replication < 1:
            raise ValueError("replication must be >= 1")
        self.overlay = overlay
        self.clock = clock or Clock()
        self.replication = replication
        self.max_value_size = max_value_size
        self.pins: dict[int, dict] = {}
        self._repaired_version = None
        self._last_holders: dict[int, tuple] = {}
        self._earliest_expiry = math.inf

    @property
    def bits(self) -> int:
        return self.overlay.bits

    def key(self, data: bytes) -> int:
        return derive_key(data, self.overlay.bits)

    def pin(self, node_id: int) -> None:
        self.pins.setdefault(node_id, {})

    def _require_member(self, from_id: int) -> None:
        if not self.overlay.nodes:
            raise EmptyOverlay(f"{self.overlay.overlay_id} has no members")
        if from_id not in self.overlay.nodes:
            raise UnknownNode(f"{from_id} is not a member of {self.overlay.overlay_id}")

    def _walk(self, start: int, count: int) -> list[int]:
        holders = [start]
        cur = start
        while len(holders) < count:
            nxt = self.overlay.successor_of(cur)
            if nxt is None or nxt in holders:
                break
            holders.append(nxt)
            cur = nxt
        return holders

    def replica_set(self, key: int, from_id: Optional[int] = None) -> list[int]:
        if not self.overlay.nodes:
            raise EmptyOverlay(f"{self.overlay.overlay_id} has no members")
        if from_id is None:
            from_id = min(self.overlay.nodes)
        return self._walk(self.overlay.lookup(from_id, key), self.replication)

    def put(self, from_id: int, key: int, value: bytes, ttl: float) -> int:
        """Store ``value`` at ``key``; returns the number of replica holders written."""
        self._require_member(from_id)
        if not value:
            raise ValueError("value must be non-empty")
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        if len(value) > self.max_value_size:
            raise ValueTooLarge(f"{len(value)} bytes exceeds cap of {self.max_value_size}")
        value = bytes(value)
        path = self.overlay.route(from_id, key)
        responsible = path[-1] if path else from_id
        holders = self._walk(responsible, self.replication)
        now = self.clock.now
        vh = value_hash(value)
        nodes = self.overlay.nodes
        for h in holders:
            _store_entry(nodes[h].store, key, value, vh, now, ttl)
        self._last_holders.pop(key, None)
        self._earliest_expiry = min(self._earliest_expiry, now + ttl)
        for p, pinned in self.pins.items():
            if p in nodes:
                _store_entry(pinned, key, value, vh, now, ttl)
        self.overlay.messages["dht_put"] += len(path) + len(holders)
        return len(holders)

    def get(self, from_id: int, key: int) -> frozenset:
        """Values at ``key`` from the first replica holder that has any."""
        self._require_member(from_id)
        path = self.overlay.route(from_id, key)
        responsible = path[-1] if path else from_id
        now = self.clock.now
        nodes = self.overlay.nodes
        self.overlay.messages["dht_get"] += len(path) + 1
        for h in self._walk(responsible, self.replication):
            vals = _live_values(nodes[h].store, key, now)
            if vals:
                return frozenset(vals)
        for p in sorted(self.pins):
            if p in nodes:
                vals = _live_values(self.pins[p], key, now)
                if vals:
                    return frozenset(vals)
        return frozenset()

    def holders_of(self, key: int) -> set[int]:
        now = self.clock.now
        return {nid for nid, node in self.overlay.nodes.items() if _live_values(node.store, key, now)}

    def _local_responsible(self, node_id: int, key: int) -> Optional[int]:
        """Resolve ``key`` from predecessor pointers alone when ``node_id`` is
        within ``replication`` steps clockwise of its responsible node."""
        ov = self.overlay
        nodes = ov.nodes
        size = ov.size
        cur = node_id
        for _ in range(self.replication):
            pred = nodes[cur].predecessor
            if pred is None or pred not in nodes:
                return None
            if pred == cur or 0 < (key - pred) % size <= (cur - pred) % size:
                return cur
            cur = pred
        return None

    def replica_repair(self, now: Optional[float] = None, force: bool = True) -> int:
        """Re-home every unexpired entry onto its current replica set.

        Non-holders drop their copies after pushing them.  Returns the number
        of entry transfers.  With ``force=False`` the pass is skipped when the
        membership has not changed since the last repair.
        """
        if now is None:
            now = self.clock.now
        nodes = self.overlay.nodes
        if not nodes:
            return 0
        if not force and self._repaired_version == self.overlay.version:
            return 0
        moved = 0
        replica_cache: dict[int, list[int]] = {}
        # holder node objects per key as of the last pass; an identical set of
        # the same live objects already holds every entry, so copying is skipped
        previous = self._last_holders
        settled: dict[int, bool] = {}

        def unchanged(key: int, holders: list[int]) -> bool:
            hit = settled.get(key)
            if hit is None:
                before = previous.get(key)
                hit = before is not None and len(before) == len(holders) and all(
                    nodes.get(h) is obj for h, obj in zip(holders, before)
                )
                settled[key] = hit
            return hit

        def holders_for(key: int, asker: int) -> list[int]:
            hs = replica_cache.get(key)
            if hs is None:
                hs = self._walk(self._local_responsible(asker, key) or self.overlay.lookup(asker, key), self.replication)
                replica_cache[key] = hs
            return hs

        # nothing can have expired before the earliest recorded deadline
        sweep = now > self._earliest_expiry
        earliest = math.inf
        for nid in sorted(nodes):
            store = nodes[nid].store
            for key in sorted(store):
                bucket = store[key]
                if sweep:
                    for vh in [vh for vh, e in bucket.items() if e.expired(now)]:
                        del bucket[vh]
                    for e in bucket.values():
                        earliest = min(earliest, e.inserted_at + e.ttl)
                if not bucket:
                    del store[key]
                    continue
                holders = holders_for(key, nid)
                if nid in holders and unchanged(key, holders):
                    continue
                for h in holders:
                    if h == nid:
                        continue
                    for vh in sorted(bucket):
                        if _copy_into(nodes[h].store, key, bucket[vh]):
                            moved += 1
                if nid not in holders:
                    del store[key]

        for p in sorted(self.pins):
            pinned = self.pins[p]
            for key in list(pinned):
                bucket = pinned[key]
                if sweep:
                    for vh in [vh for vh, e in bucket.items() if e.expired(now)]:
                        del bucket[vh]
                    for e in bucket.values():
                        earliest = min(earliest, e.inserted_at + e.ttl)
                if not bucket:
                    del pinned[key]
            if p not in nodes:
                continue
            for key in sorted(pinned):
                for h in holders_for(key, p):
                    for vh in sorted(pinned[key]):
                        if _copy_into(nodes[h].store, key, pinned[key][vh]):
                            moved += 1
            for nid in sorted(nodes):
                for key, bucket in nodes[nid].store.items():
                    for vh in sorted(bucket):
                        if _copy_into(pinned, key, bucket[vh]):
                            moved += 1
        self.overlay.messages["repair_transfer"] += moved
        self._repaired_version = self.overlay.version
        self._last_holders = {k: tuple(nodes[h] for h in hs) for k, hs in replica_cache.items()}
        if sweep:
            self._earliest_expiry = earliest
        return moved

    def join(self, node_id: int, bootstrap: Optional[int] = None) -> int:
        """Join the overlay and pull every entry the new node now replicates
        from its successor; returns the number of entries copied."""
        ov = self.overlay
        if not ov.nodes:
            ov.create(node_id)
            return 0
        ov.join(node_id, min(ov.nodes) if bootstrap is None else bootstrap)
        succ = ov.successor_of(node_id)
        if succ is None or succ == node_id:
            return 0
        now = self.clock.now
        mine = ov.nodes[node_id].store
        moved = 0
        for key, bucket in ov.nodes[succ].store.items():
            if self._local_responsible(node_id, key) is None:
                continue
            for vh in sorted(bucket):
                if not bucket[vh].expired(now) and _copy_into(mine, key, bucket[vh]):
                    moved += 1
        ov.messages["join_transfer"] += moved
        return moved

    def leave(self, node_id: int) -> None:
        """Graceful leave: hand stored entries to the successor, then depart."""
        self._require_member(node_id)
        succ = self.overlay.successor_of(node_id)
        if succ is not None:
            target = self.overlay.nodes[succ].store
            for key, bucket in self.overlay.nodes[node_id].store.items():
                for vh in sorted(bucket):
                    _copy_into(target, key, bucket[vh])
        self.overlay.leave(node_id)
