"""Experiment runners.  Each one is a pure function of its arguments: every
random choice comes from a stream seeded by the trial seed and a label."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from statistics import fmean
from typing import Optional

from ..crypto import TEST_PROVIDER, CryptoProvider, get_provider
from ..dht import Clock, Dht
from ..directory import ACTIVE_TTL, ActivePeerRecord, active_key
from ..encoding import canonical_bytes, try_decode
from ..errors import InvalidConfig, SocialMeshError
from ..identity import Identity, PublicInfo, issue_member_cert, verify_chain
from ..overlay import DEFAULT_BITS, Overlay, OverlayId
from ..profile import PostKind, ProfileOverlay, fetch_posts, publish_post, revoked_key
from .config import ScenarioConfig
from .events import Message, Simulator
from .models import ChurnModel, LatencyModel
from .report import MetricsReport

logger = logging.getLogger(__name__)

PHASES = ("directory_join", "active_lookup", "profile_join")
U64 = 1 << 64


def _stream(*label) -> random.Random:
    return random.Random("/".join(str(x) for x in label))


def _distinct_ids(rng: random.Random, n: int, bits: int, avoid=()) -> list[int]:
    out: set[int] = set()
    avoid = set(avoid)
    while len(out) < n:
        x = rng.getrandbits(bits)
        if x not in avoid:
            out.add(x)
    return sorted(out)


# -- join latency -------------------------------------------------------------


@dataclass
class PhaseStats:
    time: float = 0.0
    messages: int = 0


@dataclass
class JoinTrial:
    n: int
    seed: int
    phases: dict = field(default_factory=lambda: {p: PhaseStats() for p in PHASES})
    sent: int = 0
    delivered: int = 0
    dropped: int = 0

    @property
    def total_time(self) -> float:
        return sum(p.time for p in self.phases.values())

    @property
    def total_messages(self) -> int:
        return sum(p.messages for p in self.phases.values())


def _make_identity(rng: random.Random, label: str, bits: int, provider: CryptoProvider, avoid: set) -> Identity:
    # regenerate on the (tiny) chance the derived node id collides
    for attempt in range(64):
        ident = Identity.create(PublicInfo(f"{label} {attempt}", f"{label}-{attempt}@sim.invalid", (), None), provider, 0, rng, bits)
        if ident.node_id(bits) not in avoid:
            return ident
    raise SocialMeshError("could not find a free node id")


def join_latency_trial(
    n: int,
    seed: int,
    profile_sizes=(),
    bits: int = DEFAULT_BITS,
    latency: Optional[LatencyModel] = None,
    replication: int = 3,
    provider: CryptoProvider = TEST_PROVIDER,
) -> JoinTrial:
    """A fresh peer joins a converged directory of ``n`` nodes, then one
    profile overlay per entry of ``profile_sizes``.

    Message accounting per phase:

    * directory join: hello + ack, one forward per lookup hop from the
      bootstrap, one reply, then a two-message link handshake with each
      distinct new neighbor (successor, predecessor);
    * active-peer lookup: one forward per hop and one reply, per profile;
    * profile join: hello carrying the credential, the bootstrap's
      revocation-key lookup (hops plus reply), ack, then the ring join
      lookup, reply and link handshakes as above.
    """
    id_rng = _stream("ids", seed, n)
    pick_rng = _stream("pick", seed, n)
    clock = Clock()
    trial = JoinTrial(n, seed)

    dir_ids = _distinct_ids(id_rng, n, bits)
    directory = Dht(Overlay.build(dir_ids, OverlayId.directory(), bits), clock, replication)
    newcomer = _make_identity(id_rng, "newcomer", bits, provider, set(dir_ids))
    new_id = newcomer.node_id(bits)

    profiles = []
    for j, size in enumerate(profile_sizes):
        owner = _make_identity(id_rng, f"owner{j}", bits, provider, set())
        owner_hash = owner.cert_hash
        members = sorted(pick_rng.sample(dir_ids, min(size, n)))
        overlay = Overlay.build(members, OverlayId.profile(owner_hash), bits)
        for m in members:
            rec = ActivePeerRecord(owner_hash, m, 0)
            directory.put(m, active_key(owner_hash, bits), canonical_bytes(rec), ACTIVE_TTL)
        cred = issue_member_cert(owner, newcomer.cert, 0)
        profiles.append((owner, overlay, cred))

    sim = Simulator(latency, seed=f"{seed}/{n}", clock=clock)

    def alive_dir(x: int) -> bool:
        return x in directory.overlay or x == new_id

    def links_of(overlay: Overlay, node: int) -> list[int]:
        rt = overlay.routing_table(node)
        return sorted({x for x in (rt.successor, rt.predecessor) if x is not None and x != node})

    def hops(path_from: int, path: list[int], alive):
        prev = path_from
        for h in path:
            yield Message(prev, h, "lookup", alive)
            prev = h

    def process():
        stats = trial.phases
        t0 = sim.now
        boot = pick_rng.choice(dir_ids)
        before = sim.sent
        yield Message(new_id, boot, "hello", alive_dir)
        yield Message(boot, new_id, "hello_ack", alive_dir)
        path = directory.overlay.route(boot, new_id)
        yield from hops(boot, path, alive_dir)
        yield Message(path[-1] if path else boot, new_id, "lookup_reply", alive_dir)
        directory.overlay.join(new_id, boot)
        for nb in links_of(directory.overlay, new_id):
            yield Message(new_id, nb, "link", alive_dir)
            yield Message(nb, new_id, "link_ack", alive_dir)
        stats["directory_join"] = PhaseStats(sim.now - t0, sim.sent - before)

        t0, before = sim.now, sim.sent
        candidates = []
        for owner, _overlay, _cred in profiles:
            key = active_key(owner.cert_hash, bits)
            path = directory.overlay.route(new_id, key)
            yield from hops(new_id, path, alive_dir)
            if path:
                yield Message(path[-1], new_id, "lookup_reply", alive_dir)
            ids = sorted(r.node_id for r in (try_decode(raw, ActivePeerRecord) for raw in directory.get(new_id, key)) if r is not None)
            candidates.append(ids)
        stats["active_lookup"] = PhaseStats(sim.now - t0, sim.sent - before)

        t0, before = sim.now, sim.sent
        for (owner, overlay, cred), ids in zip(profiles, candidates):
            boot = pick_rng.choice(ids)

            def alive_p(x: int, overlay=overlay) -> bool:
                return x in overlay or x == new_id

            yield Message(new_id, boot, "admit_hello", alive_p)
            path = overlay.route(boot, revoked_key(owner.cert_hash, bits))
            yield from hops(boot, path, alive_p)
            if path:
                yield Message(path[-1], boot, "lookup_reply", alive_p)
            verify_chain(cred, owner.cert, newcomer.cert, None, provider)
            yield Message(boot, new_id, "admit_ack", alive_p)
            path = overlay.route(boot, new_id)
            yield from hops(boot, path, alive_p)
            yield Message(path[-1] if path else boot, new_id, "lookup_reply", alive_p)
            overlay.join(new_id, boot)
            for nb in links_of(overlay, new_id):
                yield Message(new_id, nb, "link", alive_p)
                yield Message(nb, new_id, "link_ack", alive_p)
        stats["profile_join"] = PhaseStats(sim.now - t0, sim.sent - before)

    proc = sim.spawn(process(), "join")
    sim.run()
    assert proc.done
    trial.sent, trial.delivered, trial.dropped = sim.sent, sim.delivered, sim.dropped
    return trial


def join_latency_experiment(
    sizes,
    profiles_per_peer: int = 1,
    trials: int = 20,
    seed: int = 0,
    bits: int = DEFAULT_BITS,
    latency: Optional[LatencyModel] = None,
    profile_size: int = 32,
    profile_sizes=None,
    replication: int = 3,
    provider: CryptoProvider = TEST_PROVIDER,
) -> dict:
    """Mean simulated join time per N; returns {N: {"trials": [...], ...}}."""
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if profile_sizes is None:
        profile_sizes = (profile_size,) * profiles_per_peer
    out = {}
    for n in sizes:
        runs = [join_latency_trial(n, (seed + i) % U64, profile_sizes, bits, latency, replication, provider) for i in range(trials)]
        out[n] = {
            "trials": runs,
            "mean_time": fmean(r.total_time for r in runs),
            "phases": {
                p: {
                    "mean_time": fmean(r.phases[p].time for r in runs),
                    "mean_messages": fmean(r.phases[p].messages for r in runs),
                }
                for p in PHASES
            },
            "mean_messages": fmean(r.total_messages for r in runs),
        }
    return out


def sublinear(means: dict) -> Optional[bool]:
    """mean(largest)/mean(smallest) < (largest/smallest)/4, None for one size."""
    ns = sorted(means)
    if len(ns) < 2:
        return None
    lo, hi = ns[0], ns[-1]
    return means[hi] / means[lo] < (hi / lo) / 4


def nondecreasing(means: dict) -> bool:
    vals = [means[n] for n in sorted(means)]
    return all(a <= b for a, b in zip(vals, vals[1:]))


# -- churn availability ---------------------------------------------------------


@dataclass
class ChurnResult:
    availability: float
    probes: int
    successes: int
    excluded: int
    timeline: list  # (t, online, success or None)
    transfers: int
    mean_online: float
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


def churn_availability_experiment(
    profile_size: int = 130,
    churn: Optional[ChurnModel] = None,
    replication: int = 3,
    duration: float = 86400.0,
    seed: int = 0,
    bits: int = DEFAULT_BITS,
    posts: int = 24,
    probe_interval: float = 60.0,
    maintenance_interval: float = 5.0,
    finger_interval: float = 300.0,
    provider: CryptoProvider = TEST_PROVIDER,
) -> ChurnResult:
    """The owner posts, goes offline, and members churn; every probe fetches
    the owner's posts through a random online member.

    Churn timelines, probe choices and bootstrap choices use separate
    streams, so two runs differing only in ``replication`` see the same
    up/down schedule.  Probes that find nobody online are excluded from
    the denominator.
    """
    if profile_size < 2:
        raise ValueError("profile_size must be at least 2")
    clock = Clock()
    sim = Simulator(LatencyModel.constant(0.0), seed=seed, clock=clock)
    id_rng = _stream("churn-ids", seed)
    probe_rng = _stream("probe", seed)
    boot_rng = _stream("bootstrap", seed)

    owner = _make_identity(id_rng, "owner", bits, provider, set())
    taken = {owner.node_id(bits)}
    members = []
    for i in range(profile_size):
        m = _make_identity(id_rng, f"member{i}", bits, provider, taken)
        taken.add(m.node_id(bits))
        members.append((m, issue_member_cert(owner, m.cert, 0)))

    profile = ProfileOverlay(owner.cert, bits, replication, clock, provider)
    owner_session = profile.admit(owner)
    timelines = [_stream("churn", seed, i) for i in range(profile_size)]
    initially_up = [churn is None or rng.random() < churn.up_fraction for rng in timelines]
    sessions: dict[int, object] = {}

    def bring_up(i: int) -> bool:
        ident, cred = members[i]
        if not profile.members:
            return False
        boot = boot_rng.choice(sorted(profile.members))
        try:
            sessions[i] = profile.admit(ident, cred, boot)
        except SocialMeshError as exc:
            logger.debug("member %d could not rejoin: %s", i, exc)
            return False
        return True

    for i in range(profile_size):
        if initially_up[i]:
            bring_up(i)
    profile.overlay.stabilize_until_stable()
    profile.dht.replica_repair()
    expected = set()
    for p in range(posts):
        expected.add(publish_post(owner_session, PostKind.STATUS, f"post {p}".encode(), now=p))
    clock.set(float(posts))
    profile.dht.replica_repair()
    profile.depart(owner_session, graceful=True)
    profile.overlay.stabilize_until_stable()
    profile.dht.replica_repair()
    start = clock.now
    end = start + duration

    def toggle(i: int, up: bool) -> None:
        rng = timelines[i]
        if up:
            bring_up(i)
            sim.schedule(churn.session(rng), toggle, i, False)
        else:
            m = sessions.pop(i, None)
            if m is not None:
                profile.depart(m, graceful=False)
            sim.schedule(churn.downtime(rng), toggle, i, True)

    if churn is not None:
        for i in range(profile_size):
            rng = timelines[i]
            if initially_up[i]:
                sim.schedule(churn.session(rng), toggle, i, False)
            else:
                sim.schedule(churn.downtime(rng), toggle, i, True)

    state = {"clean": None, "fingers": profile.overlay.version, "last_fingers": start, "transfers": 0}

    def maintain() -> None:
        ov = profile.overlay
        if ov.nodes:
            try:
                if ov.version != state["clean"]:
                    if ov.stabilize(1, fix_fingers=False) == 0:
                        state["clean"] = ov.version
                state["transfers"] += profile.dht.replica_repair(force=False)
                if clock.now - state["last_fingers"] >= finger_interval and ov.version != state["fingers"]:
                    ov.refresh_fingers()
                    state["fingers"] = ov.version
                    state["last_fingers"] = clock.now
            except SocialMeshError as exc:
                logger.debug("maintenance round failed: %s", exc)
        sim.schedule(maintenance_interval, maintain)

    timeline = []
    successes = 0
    probes = 0
    excluded = 0
    online_counts = []

    def probe() -> None:
        nonlocal successes, probes, excluded
        online = sorted(profile.members)
        online_counts.append(len(online))
        if not online:
            excluded += 1
            timeline.append((clock.now, 0, None))
        else:
            m = profile.members[probe_rng.choice(online)]
            try:
                got = {provider.hash(canonical_bytes(p)) for p in fetch_posts(m, 0, end + 1)}
                ok = expected <= got
            except SocialMeshError as exc:
                logger.debug("probe failed: %s", exc)
                ok = False
            probes += 1
            successes += ok
            timeline.append((clock.now, len(online), ok))
        if clock.now + probe_interval <= end:
            sim.schedule(probe_interval, probe)

    sim.schedule(maintenance_interval, maintain)
    sim.schedule(probe_interval, probe)
    sim.run(until=end)
    return ChurnResult(
        availability=successes / probes if probes else 0.0,
        probes=probes,
        successes=successes,
        excluded=excluded,
        timeline=timeline,
        transfers=state["transfers"],
        mean_online=fmean(online_counts) if online_counts else 0.0,
        sent=sim.sent,
        delivered=sim.delivered,
        dropped=sim.dropped,
    )


# -- dispatch ---------------------------------------------------------------


def _join_report(cfg: ScenarioConfig, provider: CryptoProvider) -> MetricsReport:
    rep = MetricsReport("join_latency", cfg.seed, cfg.to_dict(), notes=list(cfg.notes))
    sizes = list(cfg.sizes or (cfg.directory_size,))
    res = join_latency_experiment(
        sizes, trials=cfg.trials, seed=cfg.seed, bits=cfg.address_bits, latency=cfg.latency,
        profile_sizes=tuple(cfg.profile_sizes), replication=cfg.replication, provider=provider,
    )
    means = {}
    conserved = True
    for n in sizes:
        for t in res[n]["trials"]:
            for p in PHASES:
                rep.add(n, t.seed, p, "time_s", t.phases[p].time)
                rep.add(n, t.seed, p, "messages", t.phases[p].messages)
            rep.add(n, t.seed, "total", "time_s", t.total_time)
            rep.add(n, t.seed, "total", "messages", t.total_messages)
            conserved &= t.sent == t.delivered + t.dropped
        means[n] = res[n]["mean_time"]
        rep.summary[str(n)] = {
            "mean_time_s": res[n]["mean_time"],
            "mean_messages": res[n]["mean_messages"],
            "phases": res[n]["phases"],
        }
    rep.summary["profiles_per_peer"] = len(cfg.profile_sizes)
    rep.summary["trials"] = cfg.trials
    rep.check("messages_conserved", conserved)
    rep.check("mean_nondecreasing_in_N", nondecreasing(means))
    sub = sublinear(means)
    if sub is not None:
        rep.check("sublinear_growth", sub)
    return rep


def _churn_report(cfg: ScenarioConfig, provider: CryptoProvider) -> MetricsReport:
    n = cfg.profile_sizes[0]
    rep = MetricsReport("churn_availability", cfg.seed, cfg.to_dict(), notes=list(cfg.notes))
    res = churn_availability_experiment(
        n, cfg.churn, cfg.replication, cfg.duration, cfg.seed, cfg.address_bits, cfg.posts,
        cfg.probe_interval, cfg.maintenance_interval, cfg.finger_interval, provider,
    )
    for t, online, ok in res.timeline:
        rep.add(n, cfg.seed, f"probe@{t:.3f}", "online", online)
        rep.add(n, cfg.seed, f"probe@{t:.3f}", "success", "" if ok is None else int(ok))
    rep.add(n, cfg.seed, "overall", "availability", res.availability)
    rep.summary.update({
        "availability": res.availability,
        "probes": res.probes,
        "successes": res.successes,
        "excluded_no_member_online": res.excluded,
        "mean_online": res.mean_online,
        "replica_transfers": res.transfers,
        "replication": cfg.replication,
        "profile_size": n,
    })
    rep.check("messages_conserved", res.sent == res.delivered + res.dropped)
    rep.check("availability_in_unit_interval", 0.0 <= res.availability <= 1.0)
    if cfg.availability_threshold is not None:
        rep.check("availability_at_least_threshold", res.availability >= cfg.availability_threshold)
    return rep


def _demo_report(cfg: ScenarioConfig, provider: CryptoProvider) -> MetricsReport:
    from .demo import run_demo

    res = run_demo(cfg.seed, cfg.directory_size, cfg.address_bits, provider, cfg.replication)
    rep = MetricsReport("demo", cfg.seed, cfg.to_dict(), notes=list(cfg.notes))
    for name, ok in res.checks.items():
        rep.add(cfg.directory_size, cfg.seed, name, "pass", int(ok))
        rep.check(name, ok)
    rep.summary["transcript"] = res.transcript
    return rep


def _invariants_report(cfg: ScenarioConfig, provider: CryptoProvider) -> MetricsReport:
    from ..invariants import run_invariants

    rep = MetricsReport("invariants", cfg.seed, cfg.to_dict(), notes=list(cfg.notes))
    for r in run_invariants(cfg.seed):
        rep.add(r.cases, cfg.seed, r.name, "pass", int(r.ok))
        rep.check(r.name, r.ok)
        if r.detail:
            rep.summary[r.name] = r.detail
    return rep


_RUNNERS = {
    "join_latency": _join_report,
    "churn_availability": _churn_report,
    "demo": _demo_report,
    "invariants": _invariants_report,
}


def run(config) -> MetricsReport:
    """Run one scenario.  Accepts a :class:`ScenarioConfig` or a plain dict."""
    if isinstance(config, dict):
        config = ScenarioConfig.from_dict(config)
    if config.experiment not in _RUNNERS:
        raise InvalidConfig([("experiment", f"unknown experiment {config.experiment!r}")])
    provider = get_provider(config.provider)
    return _RUNNERS[config.experiment](config, provider)
