"""Four-friend scenario: Alice, Bob, Carol and Dave on a shared directory.

Alice and Bob are mutual friends, Carol befriends Alice (Alice inspects
Carol's profile before confirming), Dave befriends Bob.  The script checks
read access, a refused join, a private-message round trip and revocation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto import TEST_PROVIDER, CryptoProvider
from ..directory import Decision, FriendshipRequest
from ..errors import NotAuthorized, Revoked, SocialMeshError
from ..network import SocialNetwork, User
from ..overlay import DEFAULT_BITS
from ..profile import PostKind, fetch_posts, join_profile, publish_post, read_private_messages, send_private_message

CHECKS = ("read_access", "carol_not_authorized", "private_message_roundtrip", "revocation_permanent")


@dataclass
class DemoResult:
    transcript: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return len(self.checks) == len(CHECKS) and all(self.checks.values())

    def text(self) -> str:
        return "\n".join(self.transcript) + "\n"


def _short(h: bytes) -> str:
    return h.hex()[:10]


def run_demo(
    seed: int = 0,
    directory_size: int = 12,
    bits: int = DEFAULT_BITS,
    provider: CryptoProvider = TEST_PROVIDER,
    replication: int = 3,
) -> DemoResult:
    res = DemoResult()
    say = res.transcript.append
    net = SocialNetwork(bits, replication, provider, seed)
    alice = net.create_user("Alice Smith", "alice@example.org", ["Example University"])
    bob = net.create_user("Bob Jones", "bob@example.org", ["Example University"])
    carol = net.create_user("Carol White", "carol@example.net")
    dave = net.create_user("Dave Brown", "dave@example.com", ["Example Labs"])
    people = [alice, bob, carol, dave]
    fillers = [net.create_user(f"Peer {i}", f"peer{i}@example.invalid") for i in range(max(directory_size - 4, 0))]
    say(f"seed {seed}: directory of {directory_size} peers, {bits}-bit ids")

    first = None
    for u in people + fillers:
        u.go_online(first)
        first = first if first is not None else u.peer.node_id
    net.directory.overlay.stabilize_until_stable()
    for u in people:
        u.open_own_profile()
        say(f"{u.name} online, certificate {_short(u.cert_hash)}")
    net.tick(1)

    def befriend(src: User, query: dict, target: User) -> None:
        found = [c for c in src.search(**query) if c.hash_with(provider) == target.cert_hash]
        if not found:
            raise SocialMeshError(f"{src.name} could not find {target.name}")
        src.request_friendship(found[0])
        say(f"{src.name} found {target.name} by {', '.join(sorted(query))} and sent a friendship request")

    befriend(alice, {"full_name": "bob jones"}, bob)
    befriend(carol, {"email": "ALICE@example.org"}, alice)
    befriend(dave, {"full_name": "Bob Jones", "affiliations": ("example university",)}, bob)

    def alice_policy(req: FriendshipRequest) -> Decision:
        return Decision.CONDITIONAL_ACCEPT

    policies = {alice.cert_hash: alice_policy}
    publish_post(carol.memberships[carol.cert_hash], PostKind.STATUS, b"Hi, I am Carol", net.clock.now)
    for _ in range(3):
        for u in people:
            for line in u.process_mailbox(policies.get(u.cert_hash, lambda r: Decision.UNCONDITIONAL_ACCEPT)):
                say(line)
        net.tick(1)

    # Alice looks at Carol's profile before vouching for her
    alice.join_profile_of(carol.cert)
    seen = fetch_posts(alice.memberships[carol.cert_hash], 0, net.clock.now + 1)
    say(f"Alice inspected Carol's profile: {len(seen)} post(s), intro present: {any(p.content == b'Hi, I am Carol' for p in seen)}")
    alice.confirm(carol.cert)
    say("Alice confirmed Carol")
    for _ in range(2):
        for u in people:
            for line in u.process_mailbox():
                say(line)
        net.tick(1)

    bob.join_profile_of(alice.cert)
    carol.join_profile_of(alice.cert)
    dave.join_profile_of(bob.cert)
    alice.join_profile_of(bob.cert)
    net.tick(1)
    say("Bob and Carol joined Alice's profile; Alice and Dave joined Bob's")

    # (a) read access
    text = b"Alice's status: hello friends"
    publish_post(alice.memberships[alice.cert_hash], PostKind.STATUS, text, net.clock.now)
    net.tick(1)
    readers = {}
    for u in (bob, carol):
        posts = fetch_posts(u.memberships[alice.cert_hash], 0, net.clock.now + 1)
        readers[u.name] = any(p.content == text and p.author_cert_hash == alice.cert_hash for p in posts)
        say(f"{u.name} reads Alice's profile: {len(posts)} post(s), status visible: {readers[u.name]}")
    res.checks["read_access"] = all(readers.values())

    # (b) Carol has no credential for Bob's profile, and Alice's does not fit
    refused = []
    for label, cred in (("no credential", carol.credentials.get(bob.cert_hash)), ("Alice's credential", carol.credentials.get(alice.cert_hash))):
        try:
            join_profile(carol.peer, bob.cert, cred, net.profiles)
            refused.append(False)
            say(f"Carol joined Bob's profile with {label} (unexpected)")
        except NotAuthorized as exc:
            refused.append(True)
            say(f"Carol -> Bob's profile with {label}: NotAuthorized ({exc})")
    res.checks["carol_not_authorized"] = all(refused)

    # (c) private message from Bob to Alice
    subject, body = "lunch?", b"Shall we meet at noon on Friday?"
    send_private_message(bob.memberships[alice.cert_hash], alice.cert, subject, body, rng=net.rng)
    net.tick(1)
    inbox = read_private_messages(alice.memberships[alice.cert_hash])
    got = [s.message for s in inbox if s.ok]
    ok = any(m.subject == subject and m.body == body and m.sender_cert_hash == bob.cert_hash for m in got)
    say(f"Alice's mailbox: {len(inbox)} envelope(s), Bob's message intact: {ok}")
    res.checks["private_message_roundtrip"] = ok

    # (d) revocation survives Alice leaving and coming back
    alice.revoke(carol.cert)
    say(f"Alice revoked Carol; Carol's session active: {carol.memberships[alice.cert_hash].active}")
    outcomes = []

    def try_rejoin(when: str) -> None:
        try:
            carol.join_profile_of(alice.cert)
            outcomes.append(False)
            say(f"Carol rejoined Alice's profile {when} (unexpected)")
        except Revoked as exc:
            outcomes.append(True)
            say(f"Carol rejoin {when}: Revoked ({exc})")
        except NotAuthorized as exc:
            outcomes.append(False)
            say(f"Carol rejoin {when}: NotAuthorized but not Revoked ({exc})")

    try_rejoin("right away")
    alice.go_offline()
    net.tick(60)
    say("Alice went offline for a minute")
    try_rejoin("while Alice is away")
    alice.go_online(bob.peer.node_id)
    alice.open_own_profile()
    net.tick(1)
    say("Alice is back online")
    try_rejoin("after Alice returned")
    res.checks["revocation_permanent"] = all(outcomes)

    for name in CHECKS:
        say(f"check {name}: {'PASS' if res.checks.get(name) else 'FAIL'}")
    return res
