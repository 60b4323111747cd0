"""Ring-structured overlay: address arithmetic, finger tables, greedy routing,
join/leave/fail with round-based stabilization, and range-partitioned broadcast.

All nodes of one overlay live in a single :class:`Overlay` object.  A node
only consults its own routing state (successor list, predecessor, fingers)
when routing; liveness of a link is checked against the overlay's member
table, which models a connection timing out.
"""

from __future__ import annotations

import bisect
import logging
from collections import Counter, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import (
    BootstrapUnreachable,
    EmptyOverlay,
    IdCollision,
    OverlayError,
    RoutingStuck,
    UnknownNode,
)

logger = logging.getLogger(__name__)

DEFAULT_BITS = 160
MIN_BITS = 8
MAX_BITS = 160
SUCCESSOR_LIST_LEN = 8

NodeId = int


def ring_distance(a: int, b: int, bits: int = DEFAULT_BITS) -> int:
    """Clockwise distance from ``a`` to ``b``."""
    return (b - a) % (1 << bits)


def responsible_node(key: int, live_nodes: Iterable[int], bits: int = DEFAULT_BITS) -> int:
    """The live node that is the clockwise successor of ``key`` (linear scan)."""
    best = None
    best_d = None
    for n in live_nodes:
        d = (n - key) % (1 << bits)
        if best_d is None or d < best_d:
            best, best_d = n, d
    if best is None:
        raise EmptyOverlay("no live nodes")
    return best


def _in_open(x: int, a: int, b: int, size: int) -> bool:
    # x in (a, b) clockwise; (a, a) is the whole ring minus a
    d = (x - a) % size
    db = (b - a) % size or size
    return 0 < d < db


def _in_half(x: int, a: int, b: int, size: int) -> bool:
    # x in (a, b] clockwise
    d = (x - a) % size
    db = (b - a) % size or size
    return 0 < d <= db


@dataclass(frozen=True)
class OverlayId:
    kind: str
    owner_cert_hash: Optional[bytes] = None

    @classmethod
    def directory(cls) -> "OverlayId":
        return cls("directory")

    @classmethod
    def profile(cls, owner_cert_hash: bytes) -> "OverlayId":
        return cls("profile", bytes(owner_cert_hash))

    def __str__(self) -> str:
        if self.kind == "directory":
            return "directory"
        return f"profile:{self.owner_cert_hash.hex()[:12]}"


@dataclass(frozen=True)
class RoutingTable:
    """Snapshot of one node's routing state."""

    self_id: int
    successor: int
    predecessor: Optional[int]
    successors: tuple
    shortcuts: tuple  # ((2**i, link), ...) for i in 0..B-1


class OverlayNode:
    __slots__ = ("node_id", "successors", "predecessor", "fingers", "store", "_links")

    def __init__(self, node_id: int):
        self.node_id = node_id
        self.successors: list[int] = [node_id]
        self.predecessor: Optional[int] = node_id
        self.fingers: list[int] = []
        # key -> {value_hash: DhtEntry}; owned by the dht layer
        self.store: dict = {}
        self._links: Optional[tuple] = None

    def set_successors(self, succs: list[int]) -> None:
        self.successors = succs
        self._links = None

    def set_fingers(self, fingers: list[int]) -> None:
        self.fingers = fingers
        self._links = None

    def links(self) -> tuple:
        if self._links is None:
            seen = dict.fromkeys(self.successors)
            seen.update(dict.fromkeys(self.fingers))
            seen.pop(self.node_id, None)
            self._links = tuple(seen)
        return self._links


class Overlay:
    """One overlay instance (the directory, or one user's profile overlay)."""

    def __init__(
        self,
        overlay_id: Optional[OverlayId] = None,
        bits: int = DEFAULT_BITS,
        successor_list_len: int = SUCCESSOR_LIST_LEN,
    ):
        if not MIN_BITS <= bits <= MAX_BITS:
            raise ValueError(f"address bits must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
        if successor_list_len < 1:
            raise ValueError("successor_list_len must be >= 1")
        self.overlay_id = overlay_id or OverlayId.directory()
        self.bits = bits
        self.size = 1 << bits
        self.successor_list_len = successor_list_len
        self.nodes: dict[int, OverlayNode] = {}
        self.messages: Counter = Counter()
        # bumped on every membership change; lets callers skip idle maintenance
        self.version = 0

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def members(self) -> list[int]:
        return sorted(self.nodes)

    def _check_id(self, value: int) -> int:
        if not isinstance(value, int) or not 0 <= value < self.size:
            raise ValueError(f"id {value!r} outside [0, 2^{self.bits})")
        return value

    def distance(self, a: int, b: int) -> int:
        return (b - a) % self.size

    # -- construction ---------------------------------------------------

    @classmethod
    def build(
        cls,
        node_ids: Iterable[int],
        overlay_id: Optional[OverlayId] = None,
        bits: int = DEFAULT_BITS,
        successor_list_len: int = SUCCESSOR_LIST_LEN,
    ) -> "Overlay":
        """Construct an already-converged overlay, as if every node had joined
        and stabilization had run to a fixed point."""
        ov = cls(overlay_id, bits, successor_list_len)
        ids = list(node_ids)
        for i in ids:
            ov._check_id(i)
        ids_sorted = sorted(set(ids))
        if len(ids_sorted) != len(ids):
            raise IdCollision("duplicate node ids")
        n = len(ids_sorted)
        for idx, nid in enumerate(ids_sorted):
            node = OverlayNode(nid)
            if n > 1:
                k = min(successor_list_len, n - 1)
                node.set_successors([ids_sorted[(idx + j) % n] for j in range(1, k + 1)])
                node.predecessor = ids_sorted[idx - 1]
            ov.nodes[nid] = node
        for nid in ids_sorted:
            ov.nodes[nid].set_fingers(ov._oracle_fingers(nid, ids_sorted))
        ov.version += 1
        return ov

    def _oracle_fingers(self, nid: int, ids_sorted: list[int]) -> list[int]:
        n = len(ids_sorted)
        if n == 1:
            return [nid] * self.bits
        succ = self.nodes[nid].successors[0]
        d_succ = self.distance(nid, succ)
        first = min(d_succ.bit_length(), self.bits)
        fingers = [succ] * first
        for i in range(first, self.bits):
            target = (nid + (1 << i)) % self.size
            j = bisect.bisect_left(ids_sorted, target)
            fingers.append(ids_sorted[j % n])
        return fingers

    def create(self, node_id: int) -> RoutingTable:
        """Start the overlay with its first node."""
        self._check_id(node_id)
        if node_id in self.nodes:
            raise IdCollision(f"node {node_id} already present")
        if self.nodes:
            raise OverlayError("overlay already populated; use join()")
        node = OverlayNode(node_id)
        node.set_fingers([node_id] * self.bits)
        self.nodes[node_id] = node
        self.version += 1
        return self.routing_table(node_id)

    def join(self, new_node: int, bootstrap: int) -> RoutingTable:
        self._check_id(new_node)
        if new_node in self.nodes:
            raise IdCollision(f"node {new_node} already present in {self.overlay_id}")
        if bootstrap not in self.nodes:
            raise BootstrapUnreachable(f"bootstrap {bootstrap} is not live in {self.overlay_id}")
        path = self.route(bootstrap, new_node)
        succ = path[-1] if path else bootstrap
        self.messages["join"] += len(path) + 1
        succ_node = self.nodes[succ]
        pred = succ_node.predecessor
        if pred is None or pred not in self.nodes:
            pred = self._find_live_predecessor(succ)

        node = OverlayNode(new_node)
        succs = [succ] + [s for s in succ_node.successors if s not in (new_node, succ)]
        node.set_successors(succs[: self.successor_list_len])
        node.predecessor = pred
        self.nodes[new_node] = node

        succ_node.predecessor = new_node
        if succ_node.successors == [succ]:
            succ_node.set_successors([new_node])
        pred_node = self.nodes[pred]
        pred_succs = [new_node] + [s for s in pred_node.successors if s not in (new_node, pred)]
        pred_node.set_successors(pred_succs[: self.successor_list_len])
        self.messages["join_notify"] += 2

        self._fix_fingers(node)
        self.version += 1
        logger.debug("%s: node %x joined via %x (succ %x)", self.overlay_id, new_node, bootstrap, succ)
        return self.routing_table(new_node)

    def _find_live_predecessor(self, node_id: int) -> int:
        # walk the ring from the node's successor until we come back around
        prev = node_id
        cur = self.successor_of(node_id)
        steps = 0
        while cur is not None and cur != node_id and steps <= len(self.nodes):
            prev, cur = cur, self.successor_of(cur)
            steps += 1
        return prev

    def leave(self, node_id: int) -> None:
        """Graceful departure: neighbors are told before the node goes."""
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(f"{node_id} is not a member of {self.overlay_id}")
        del self.nodes[node_id]
        self.version += 1
        if not self.nodes:
            return
        succ = next((s for s in node.successors if s in self.nodes), None)
        pred = node.predecessor if node.predecessor in self.nodes else None
        if succ is not None:
            self.nodes[succ].predecessor = pred
        if pred is not None:
            pn = self.nodes[pred]
            rest = [s for s in node.successors if s in self.nodes and s != pred]
            merged = [s for s in pn.successors if s != node_id and s in self.nodes and s != pred]
            new = rest if succ is not None else merged
            pn.set_successors(new[: self.successor_list_len] or [pred])
        self.messages["leave"] += 2

    def fail(self, node_id: int) -> None:
        """Silent crash: nobody is told."""
        if node_id not in self.nodes:
            raise UnknownNode(f"{node_id} is not a member of {self.overlay_id}")
        del self.nodes[node_id]
        self.version += 1

    # -- maintenance ----------------------------------------------------

    def successor_of(self, node_id: int) -> Optional[int]:
        """First live entry of the node's successor list, None if it has none."""
        node = self.nodes[node_id]
        for s in node.successors:
            if s != node_id and s in self.nodes:
                return s
        return None

    def _closest_live_link(self, node: OverlayNode) -> Optional[int]:
        live = [c for c in node.links() if c in self.nodes]
        if node.predecessor is not None and node.predecessor in self.nodes and node.predecessor != node.node_id:
            live.append(node.predecessor)
        if not live:
            return None
        return min(live, key=lambda c: self.distance(node.node_id, c))

    def stabilize(self, rounds: int = 1, fix_fingers: bool = True) -> int:
        """Run ``rounds`` stabilization rounds; returns the number of pointer changes."""
        changes = 0
        for _ in range(rounds):
            changes += self._stabilize_round(fix_fingers)
        return changes

    def stabilize_until_stable(self, max_rounds: int = 64, fix_fingers: bool = True) -> int:
        for i in range(1, max_rounds + 1):
            if self._stabilize_round(fix_fingers) == 0:
                return i
        return max_rounds

    def _stabilize_round(self, fix_fingers: bool) -> int:
        changes = 0
        if len(self.nodes) == 1:
            (nid,) = self.nodes
            node = self.nodes[nid]
            if node.successors != [nid] or node.predecessor != nid:
                node.set_successors([nid])
                node.predecessor = nid
                changes += 1
            if fix_fingers and node.fingers != [nid] * self.bits:
                node.set_fingers([nid] * self.bits)
            return changes
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            succ = self.successor_of(nid)
            if succ is None:
                succ = self._closest_live_link(node)
                if succ is None:
                    logger.warning("%s: node %x is isolated", self.overlay_id, nid)
                    continue
            x = self.nodes[succ].predecessor
            if x is not None and x != nid and x in self.nodes and _in_open(x, nid, succ, self.size):
                succ = x
            self.messages["stabilize"] += 2
            new_succs = [succ]
            for s in self.nodes[succ].successors:
                if len(new_succs) >= self.successor_list_len or s == nid:
                    break
                if s in self.nodes and s not in new_succs:
                    new_succs.append(s)
            if new_succs != node.successors:
                node.set_successors(new_succs)
                changes += 1
            # notify
            sn = self.nodes[succ]
            sp = sn.predecessor
            if sp is None or sp not in self.nodes or sp == succ or _in_open(nid, sp, succ, self.size):
                if sp != nid:
                    sn.predecessor = nid
                    changes += 1
            self.messages["notify"] += 1
            if node.predecessor is not None and node.predecessor not in self.nodes:
                node.predecessor = None
                changes += 1
        if fix_fingers:
            changes += self.refresh_fingers()
        if changes:
            self.version += 1
        return changes

    def refresh_fingers(self) -> int:
        """Recompute every node's fingers by routing; returns how many changed."""
        changed = 0
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            before = node.fingers
            self._fix_fingers(node)
            if node.fingers != before:
                changed += 1
        return changed

    def _fix_fingers(self, node: OverlayNode) -> None:
        nid = node.node_id
        fingers = []
        f = None
        fd = 0
        for i in range(self.bits):
            off = 1 << i
            if f is not None and off <= fd:
                fingers.append(f)
                continue
            target = (nid + off) % self.size
            f = self.lookup(nid, target)
            fd = self.distance(nid, f)
            self.messages["fix_finger"] += 1
            fingers.append(f)
        node.set_fingers(fingers)

    # -- routing --------------------------------------------------------

    def route(self, from_id: int, key: int) -> list[int]:
        """Greedy clockwise route; the path excludes ``from_id`` and ends at the
        node responsible for ``key`` (empty if ``from_id`` itself is)."""
        if not self.nodes:
            raise EmptyOverlay(f"{self.overlay_id} has no members")
        if from_id not in self.nodes:
            raise UnknownNode(f"{from_id} is not a member of {self.overlay_id}")
        self._check_id(key)
        size = self.size
        path: list[int] = []
        cur = from_id
        for _ in range(len(self.nodes) + self.bits + 2):
            node = self.nodes[cur]
            if key == cur:
                return path
            pred = node.predecessor
            if pred is not None and pred != cur and pred in self.nodes and _in_half(key, pred, cur, size):
                return path
            succ = self.successor_of(cur)
            if succ is None:
                if len(self.nodes) == 1:
                    return path
                raise RoutingStuck(f"{self.overlay_id}: node {cur:x} has no live successor")
            if _in_half(key, cur, succ, size):
                path.append(succ)
                self.messages["route_hop"] += 1
                return path
            best = None
            best_d = 0
            for c in node.links():
                if c in self.nodes and _in_open(c, cur, key, size):
                    d = (c - cur) % size
                    if d > best_d:
                        best, best_d = c, d
            if best is None:
                raise RoutingStuck(f"{self.overlay_id}: no progress from {cur:x} toward {key:x}")
            path.append(best)
            self.messages["route_hop"] += 1
            cur = best
        raise RoutingStuck(f"{self.overlay_id}: hop limit exceeded routing to {key:x}")

    def lookup(self, from_id: int, key: int) -> int:
        path = self.route(from_id, key)
        return path[-1] if path else from_id

    def responsible(self, key: int) -> int:
        """Responsible node over the instantaneous live set (bisect oracle)."""
        if not self.nodes:
            raise EmptyOverlay(f"{self.overlay_id} has no members")
        ids = sorted(self.nodes)
        j = bisect.bisect_left(ids, key)
        return ids[j % len(ids)]

    # -- broadcast ------------------------------------------------------

    def broadcast(
        self,
        origin: int,
        payload=None,
        deliver: Optional[Callable[[int, object], None]] = None,
    ) -> set[int]:
        """Deliver ``payload`` to every reachable member exactly once.

        Each receiver splits the address range it is responsible for among
        its links: link ``c_j`` covers ``(c_j, c_{j+1})``.  A sender whose
        target turns out to be dead hands that sub-range to the first live
        node after the target instead.
        """
        if origin not in self.nodes:
            raise UnknownNode(f"{origin} is not a member of {self.overlay_id}")
        size = self.size
        received: Counter = Counter()
        queue = deque([(origin, origin, None)])
        while queue:
            target, limit, sender = queue.popleft()
            if target not in self.nodes:
                self.messages["broadcast_dropped"] += 1
                if sender is None or sender not in self.nodes:
                    continue
                try:
                    alt = self.lookup(sender, target)
                except OverlayError:
                    continue
                if alt != limit and _in_open(alt, (target - 1) % size, limit, size):
                    queue.append((alt, limit, sender))
                    self.messages["broadcast"] += 1
                continue
            received[target] += 1
            node = self.nodes[target]
            children = sorted(
                (c for c in node.links() if _in_open(c, target, limit, size)),
                key=lambda c: (c - target) % size,
            )
            for j, c in enumerate(children):
                sub_limit = children[j + 1] if j + 1 < len(children) else limit
                queue.append((c, sub_limit, target))
                self.messages["broadcast"] += 1
            if deliver is not None:
                deliver(target, payload)
        self.last_broadcast_counts = received
        return set(received)

    # -- inspection -----------------------------------------------------

    def routing_table(self, node_id: int) -> RoutingTable:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(f"{node_id} is not a member of {self.overlay_id}")
        succ = self.successor_of(node_id)
        return RoutingTable(
            self_id=node_id,
            successor=node_id if succ is None else succ,
            predecessor=node.predecessor,
            successors=tuple(node.successors),
            shortcuts=tuple((1 << i, f) for i, f in enumerate(node.fingers)),
        )

    def ring_order(self) -> list[int]:
        """Members visited by following successor pointers from the smallest id."""
        if not self.nodes:
            return []
        start = min(self.nodes)
        order = [start]
        cur = self.successor_of(start)
        while cur is not None and cur != start and len(order) <= len(self.nodes):
            order.append(cur)
            cur = self.successor_of(cur)
        return order

    def ring_problems(self) -> list[str]:
        """Violations of the ring invariant (empty list when the ring is sound)."""
        problems = []
        ids = sorted(self.nodes)
        if self.ring_order() != ids:
            problems.append("successor traversal does not match sorted member order")
        n = len(ids)
        for idx, nid in enumerate(ids):
            node = self.nodes[nid]
            exp_succ = ids[(idx + 1) % n]
            exp_pred = ids[idx - 1]
            got = self.successor_of(nid)
            if (got if got is not None else nid) != exp_succ:
                problems.append(f"{nid:x}: successor {got} != {exp_succ:x}")
            if node.predecessor != exp_pred:
                problems.append(f"{nid:x}: predecessor {node.predecessor} != {exp_pred:x}")
        return problems
