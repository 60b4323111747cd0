"""A whole simulated social network: one directory overlay plus every
profile overlay, and per-user state for the friendship workflow."""

from __future__ import annotations

import logging
import random
from typing import Callable, Optional

from .crypto import TEST_PROVIDER, CryptoProvider
from .dht import Clock, Dht
from .directory import (
    Decision,
    DirectoryPeer,
    FriendshipRequest,
    check_requests,
    check_responses,
    confirm_request,
    publish_active,
    publish_directory_entry,
    respond_to_request,
    search_directory,
    send_friend_request,
)
from .identity import Certificate, Identity, MemberCertificate, PublicInfo, RevocationRecord, revoke_member
from .overlay import DEFAULT_BITS, Overlay, OverlayId
from .profile import ProfileMembership, ProfileOverlay, join_profile, open_profile, propagate_revocation

logger = logging.getLogger(__name__)

Policy = Callable[[FriendshipRequest], Decision]


def accept_all(_req: FriendshipRequest) -> Decision:
    return Decision.UNCONDITIONAL_ACCEPT


class SocialNetwork:
    def __init__(
        self,
        bits: int = DEFAULT_BITS,
        replication: int = 3,
        provider: CryptoProvider = TEST_PROVIDER,
        seed: int = 0,
        clock: Optional[Clock] = None,
    ):
        self.bits = bits
        self.replication = replication
        self.provider = provider
        self.clock = clock or Clock()
        self.rng = random.Random(seed)
        self.directory = Dht(Overlay(OverlayId.directory(), bits), self.clock, replication)
        self.profiles: dict[bytes, ProfileOverlay] = {}
        self.users: list["User"] = []

    def create_user(self, full_name: str, email: str = "", affiliations=()) -> "User":
        info = PublicInfo(full_name, email, tuple(affiliations), None)
        ident = Identity.create(info, self.provider, self.clock.now, self.rng, self.bits)
        user = User(self, ident)
        self.users.append(user)
        return user

    def tick(self, seconds: float) -> None:
        """Advance the clock, run one maintenance round everywhere and let
        online members refresh their active-peer records."""
        self.clock.advance(seconds)
        if self.directory.overlay.nodes:
            self.directory.overlay.stabilize(1)
            self.directory.replica_repair(force=False)
        for owner_hash in sorted(self.profiles):
            self.profiles[owner_hash].maintain()
        for u in self.users:
            u.heartbeat()


class User:
    """Client-side state of one person: identity, directory node, friends,
    credentials held for friends' profiles, and open profile sessions."""

    def __init__(self, net: SocialNetwork, identity: Identity):
        self.net = net
        self.identity = identity
        self.peer = DirectoryPeer(identity, net.directory)
        self.friends: dict[bytes, Certificate] = {}
        self.credentials: dict[bytes, MemberCertificate] = {}
        self.signed_for: set[bytes] = set()
        self.requested: set[bytes] = set()
        self.pending_inspection: dict[bytes, FriendshipRequest] = {}
        self.issued_revocations: list[RevocationRecord] = []
        self.memberships: dict[bytes, ProfileMembership] = {}
        self.session_start = 0.0

    def __repr__(self) -> str:
        return f"User({self.name!r})"

    @property
    def name(self) -> str:
        return self.identity.info.full_name

    @property
    def cert(self) -> Certificate:
        return self.identity.cert

    @property
    def cert_hash(self) -> bytes:
        return self.identity.cert_hash

    @property
    def online(self) -> bool:
        return self.peer.online

    # -- sessions --------------------------------------------------------

    def go_online(self, bootstrap: Optional[int] = None) -> None:
        self.peer.join(bootstrap)
        self.session_start = self.net.clock.now
        publish_directory_entry(self.peer)

    def go_offline(self) -> None:
        for h in sorted(self.memberships):
            m = self.memberships.pop(h)
            m.profile.depart(m)
        self.peer.leave()

    def open_own_profile(self) -> ProfileMembership:
        m = open_profile(self.peer, self.net.profiles, self.issued_revocations, self.net.replication)
        self.memberships[self.cert_hash] = m
        return m

    def join_profile_of(self, owner: Certificate) -> ProfileMembership:
        h = owner.hash_with(self.identity.provider)
        m = join_profile(self.peer, owner, self.credentials.get(h), self.net.profiles)
        self.memberships[h] = m
        return m

    def heartbeat(self) -> None:
        if not self.online:
            return
        for h, m in sorted(self.memberships.items()):
            if m.connected:
                publish_active(self.peer, h, self.session_start)
            else:
                del self.memberships[h]

    # -- friendship workflow ----------------------------------------------

    def search(self, **fields) -> list[Certificate]:
        return search_directory(self.peer, PublicInfo(**fields, notification_address=0))

    def request_friendship(self, cert: Certificate) -> FriendshipRequest:
        self.requested.add(cert.hash_with(self.identity.provider))
        return send_friend_request(self.peer, cert)

    def _note_signed(self, cert: Certificate) -> None:
        h = cert.hash_with(self.identity.provider)
        self.signed_for.add(h)
        self.friends[h] = cert

    def process_mailbox(self, policy: Policy = accept_all) -> list[str]:
        """Handle outstanding requests and responses; returns a log of actions."""
        log = []
        provider = self.identity.provider
        for req in check_requests(self.peer):
            h = req.requester_cert.hash_with(provider)
            if h in self.signed_for or h in self.pending_inspection:
                continue
            decision = Decision.UNCONDITIONAL_ACCEPT if h in self.requested else Decision(policy(req))
            respond_to_request(self.peer, req, decision)
            log.append(f"{self.name}: {decision.name.lower()} request from {req.requester_cert.info.full_name}")
            if decision is Decision.UNCONDITIONAL_ACCEPT:
                self._note_signed(req.requester_cert)
            elif decision is Decision.CONDITIONAL_ACCEPT:
                self.pending_inspection[h] = req
        for resp in check_responses(self.peer):
            responder = resp.responder_cert
            rh = responder.hash_with(provider)
            if resp.signed_friend_entry is not None and rh not in self.credentials:
                self.identity.add_friend_entry(resp.signed_friend_entry)
                self.credentials[rh] = resp.member_credential
                self.friends[rh] = responder
                log.append(f"{self.name}: received friend entry and credential from {responder.info.full_name}")
            if rh not in self.signed_for and rh not in self.pending_inspection:
                # they accepted (or conditionally accepted) our request: sign them back
                respond_to_request(self.peer, resp.counter_request, Decision.UNCONDITIONAL_ACCEPT)
                self._note_signed(responder)
                log.append(f"{self.name}: accepted counter-request from {responder.info.full_name}")
        if log and self.online:
            publish_directory_entry(self.peer)
        return log

    def confirm(self, requester: Certificate) -> None:
        """Finish a conditional accept after inspecting the requester's profile."""
        h = requester.hash_with(self.identity.provider)
        req = self.pending_inspection.pop(h)
        confirm_request(self.peer, req)
        self._note_signed(requester)

    # -- owner actions -----------------------------------------------------

    def revoke(self, member: Certificate) -> RevocationRecord:
        h = member.hash_with(self.identity.provider)
        record = revoke_member(self.identity, h, self.net.clock.now)
        self.issued_revocations.append(record)
        self.signed_for.discard(h)
        own = self.memberships.get(self.cert_hash)
        if own is not None and own.connected:
            propagate_revocation(own, record)
        return record
