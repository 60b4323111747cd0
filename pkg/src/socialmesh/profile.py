"""Private profile overlays: admission handshake, signed posts, private
messages and revocation."""

from __future__ import annotations

import enum as _enum
import logging
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .crypto import TEST_PROVIDER, CryptoProvider
from .dht import DAY, Clock, Dht, derive_key
from .directory import DirectoryPeer, lookup_active, publish_active
from .encoding import BYTES, STR, U64, canonical_bytes, enum, record, try_decode
from .errors import (
    BootstrapUnreachable,
    DecryptionError,
    NoActivePeers,
    NotAuthorized,
    NotOwner,
)
from .identity import (
    Certificate,
    Identity,
    MemberCertificate,
    RevocationRecord,
    RevocationSet,
    node_id_for,
    verify_chain,
    verify_member_cert,
    verify_revocation,
)
from .overlay import DEFAULT_BITS, SUCCESSOR_LIST_LEN, Overlay, OverlayId

logger = logging.getLogger(__name__)

PREFIX_POST = b"post:"
PREFIX_INDEX = b"idx:"
PREFIX_PM = b"pm:"
PREFIX_REVOKED = b"revoked:"
PREFIX_CRED = b"cred:"

POST_TTL = 365 * DAY
CRED_TTL = 365 * DAY
PM_TTL = 30 * DAY
REVOCATION_TTL = 30 * DAY


class PostKind(_enum.IntEnum):
    STATUS = 1
    BOARD = 2
    MEDIA = 3


@record(0x0A, (("author_cert_hash", BYTES), ("created_at", U64), ("kind", enum(PostKind)), ("content", BYTES), ("signature", BYTES)))
@dataclass(frozen=True)
class ProfilePost:
    author_cert_hash: bytes
    created_at: int
    kind: PostKind
    content: bytes
    signature: bytes


@record(0x4A, (("author_cert_hash", BYTES), ("created_at", U64), ("kind", enum(PostKind)), ("content", BYTES)))
@dataclass(frozen=True)
class ProfilePostPayload:
    author_cert_hash: bytes
    created_at: int
    kind: PostKind
    content: bytes


@record(0x0B, (("encrypted_key", BYTES), ("ciphertext", BYTES)))
@dataclass(frozen=True)
class PrivateMessageEnvelope:
    encrypted_key: bytes
    ciphertext: bytes


@record(0x0C, (("sender_cert_hash", BYTES), ("sent_at", U64), ("subject", STR), ("body", BYTES), ("digest", BYTES)))
@dataclass(frozen=True)
class PrivateMessage:
    sender_cert_hash: bytes
    sent_at: int
    subject: str
    body: bytes
    digest: bytes


@record(0x4C, (("sender_cert_hash", BYTES), ("sent_at", U64), ("subject", STR), ("body", BYTES)))
@dataclass(frozen=True)
class PrivateMessageContent:
    sender_cert_hash: bytes
    sent_at: int
    subject: str
    body: bytes


def day_bucket(t: float) -> int:
    return int(t // DAY)


def post_key(post_hash: bytes, bits: int) -> int:
    return derive_key(PREFIX_POST + post_hash, bits)


def index_key(owner_cert_hash: bytes, day: int, kind: PostKind, bits: int) -> int:
    return derive_key(PREFIX_INDEX + owner_cert_hash + day.to_bytes(8, "big") + bytes([int(kind)]), bits)


def pm_key(owner_cert_hash: bytes, bits: int) -> int:
    return derive_key(PREFIX_PM + owner_cert_hash, bits)


def revoked_key(owner_cert_hash: bytes, bits: int) -> int:
    return derive_key(PREFIX_REVOKED + owner_cert_hash, bits)


def cred_key(member_cert_hash: bytes, bits: int) -> int:
    return derive_key(PREFIX_CRED + member_cert_hash, bits)


class ProfileMembership:
    """One identity's live session inside one profile overlay."""

    def __init__(self, profile: "ProfileOverlay", identity: Identity, credential: Optional[MemberCertificate], revocations: RevocationSet):
        self.profile = profile
        self.identity = identity
        self.member_cert = credential
        self.revocations_seen = revocations
        self.node_id = identity.node_id(profile.bits)
        self.connected = True

    @property
    def owner_cert(self) -> Certificate:
        return self.profile.owner_cert

    @property
    def is_owner(self) -> bool:
        return self.identity.cert_hash == self.profile.owner_hash

    def check_active(self) -> None:
        if not self.connected or self.profile.members.get(self.node_id) is not self:
            raise NotAuthorized("membership is not connected to the profile overlay")
        if self.is_owner:
            return
        verify_chain(self.member_cert, self.owner_cert, self.identity.cert, self.revocations_seen, self.identity.provider)

    @property
    def active(self) -> bool:
        try:
            self.check_active()
        except NotAuthorized:
            return False
        return True


class ProfileOverlay:
    """The overlay, its DHT, and the live member sessions of one profile."""

    def __init__(
        self,
        owner_cert: Certificate,
        bits: int = DEFAULT_BITS,
        replication: int = 3,
        clock: Optional[Clock] = None,
        provider: CryptoProvider = TEST_PROVIDER,
        successor_list_len: int = SUCCESSOR_LIST_LEN,
    ):
        self.owner_cert = owner_cert
        self.provider = provider
        self.owner_hash = owner_cert.hash_with(provider)
        self.overlay = Overlay(OverlayId.profile(self.owner_hash), bits, successor_list_len)
        self.dht = Dht(self.overlay, clock, replication)
        self.members: dict[int, ProfileMembership] = {}
        self.owner_node_id = node_id_for(owner_cert.body.public_key, bits, provider)
        self.dht.pin(self.owner_node_id)

    @property
    def bits(self) -> int:
        return self.overlay.bits

    @property
    def clock(self) -> Clock:
        return self.dht.clock

    def _dht_revocations(self, asker: int) -> list[RevocationRecord]:
        out = []
        for raw in self.dht.get(asker, revoked_key(self.owner_hash, self.bits)):
            r = try_decode(raw, RevocationRecord)
            if r is not None:
                out.append(r)
        return out

    def admit(self, identity: Identity, credential: Optional[MemberCertificate] = None, bootstrap: Optional[int] = None) -> ProfileMembership:
        """Run the admission handshake with ``bootstrap`` and join the ring.

        The bootstrap member checks the joiner's credential against the owner
        certificate, its own revocation set and the DHT revocation key; the
        joiner checks the bootstrap's credential in turn.  The owner may start
        an empty overlay; anyone else needs a live bootstrap.
        """
        provider = self.provider
        node = identity.node_id(self.bits)
        is_owner = identity.cert_hash == self.owner_hash
        if is_owner and identity.public_key != self.owner_cert.body.public_key:
            raise NotAuthorized("owner certificate mismatch")
        if not self.overlay.nodes:
            if not is_owner:
                raise NoActivePeers("profile overlay has no online members")
            self.dht.join(node)
            revs = RevocationSet(self.owner_cert, provider)
        else:
            if bootstrap is None:
                raise NoActivePeers("no bootstrap peer given")
            boot = self.members.get(bootstrap)
            if boot is None or not boot.connected or bootstrap not in self.overlay:
                raise BootstrapUnreachable(f"node {bootstrap:x} is not a member of this profile overlay")
            if not boot.is_owner:
                try:
                    verify_chain(boot.member_cert, self.owner_cert, boot.identity.cert, None, provider)
                except NotAuthorized as exc:
                    raise BootstrapUnreachable("bootstrap presented an invalid credential") from exc
            revs = boot.revocations_seen.copy()
            revs.observe_all(self._dht_revocations(bootstrap))
            if not is_owner:
                verify_chain(credential, self.owner_cert, identity.cert, revs, provider)
            challenge = provider.hash(b"admit" + self.owner_hash + node.to_bytes(20, "big") + int(self.clock.now).to_bytes(8, "big"))
            if not provider.verify(identity.public_key, challenge, identity.sign(challenge)):
                raise NotAuthorized("proof of possession failed")
            self.dht.join(node, bootstrap)
        m = ProfileMembership(self, identity, None if is_owner else credential, revs)
        self.members[node] = m
        if not is_owner:
            self.dht.put(node, cred_key(identity.cert_hash, self.bits), canonical_bytes(credential), CRED_TTL)
        return m

    def depart(self, membership: ProfileMembership, graceful: bool = True) -> None:
        node = membership.node_id
        membership.connected = False
        if self.members.get(node) is membership:
            del self.members[node]
        if node in self.overlay:
            if graceful:
                self.dht.leave(node)
            else:
                self.overlay.fail(node)

    def evict(self, cert_hash: bytes) -> list[int]:
        """Every member drops its links to sessions of ``cert_hash``."""
        evicted = []
        for node, m in sorted(self.members.items()):
            if m.identity.cert_hash == cert_hash:
                self.depart(m, graceful=False)
                evicted.append(node)
        if evicted and self.overlay.nodes:
            self.overlay.stabilize_until_stable(8)
            self.dht.replica_repair()
        return evicted

    def maintain(self, fix_fingers: bool = True) -> int:
        moved = 0
        if self.overlay.nodes:
            self.overlay.stabilize(1, fix_fingers=fix_fingers)
            moved = self.dht.replica_repair(force=False)
        return moved

    def _author_key(self, author_hash: bytes, asker: int, revocations: RevocationSet) -> Optional[bytes]:
        if author_hash == self.owner_hash:
            return self.owner_cert.body.public_key
        if author_hash in revocations:
            return None
        for raw in sorted(self.dht.get(asker, cred_key(author_hash, self.bits))):
            cred = try_decode(raw, MemberCertificate)
            if cred is not None and cred.member_cert_hash == author_hash and verify_member_cert(cred, self.owner_cert, self.provider):
                return cred.member_public_key
        return None


def open_profile(
    owner: DirectoryPeer,
    profiles: dict,
    revocations: Iterable[RevocationRecord] = (),
    replication: int = 3,
    provider: Optional[CryptoProvider] = None,
) -> ProfileMembership:
    """Owner session start: join (or found) the owner's own profile overlay,
    re-publish its revocations and announce itself as an active peer."""
    ident = owner.identity
    provider = provider or ident.provider
    profile = profiles.get(ident.cert_hash)
    if profile is None:
        profile = ProfileOverlay(ident.cert, owner.dht.bits, replication, owner.dht.clock, provider)
        profiles[ident.cert_hash] = profile
    m = None
    if profile.overlay.nodes:
        for b in sorted(lookup_active(owner, ident.cert_hash)):
            try:
                m = profile.admit(ident, None, b)
                break
            except BootstrapUnreachable:
                continue
        if m is None:
            m = profile.admit(ident, None, min(profile.members))
    else:
        m = profile.admit(ident)
    node = m.node_id
    for r in revocations:
        if m.revocations_seen.observe(r):
            profile.dht.put(node, revoked_key(profile.owner_hash, profile.bits), canonical_bytes(r), REVOCATION_TTL)
    profile.dht.replica_repair()
    publish_active(owner, profile.owner_hash)
    return m


def join_profile(
    member: DirectoryPeer,
    owner_cert: Certificate,
    member_credential: Optional[MemberCertificate],
    profiles: Mapping[bytes, ProfileOverlay],
) -> ProfileMembership:
    """Enter a friend's profile overlay via the directory's active-peer list."""
    ident = member.identity
    provider = ident.provider
    owner_hash = owner_cert.hash_with(provider)
    if member_credential is None:
        raise NotAuthorized("no credential for this profile")
    if not verify_member_cert(member_credential, owner_cert, provider):
        raise NotAuthorized("credential is not signed by the profile owner")
    candidates = sorted(lookup_active(member, owner_hash))
    profile = profiles.get(owner_hash)
    if profile is None or not candidates:
        raise NoActivePeers("no active peers listed for this profile")
    for b in candidates:
        try:
            m = profile.admit(ident, member_credential, b)
        except BootstrapUnreachable:
            logger.debug("active-list entry %x failed the handshake", b)
            continue
        publish_active(member, owner_hash)
        return m
    raise NoActivePeers("no listed active peer completed the handshake")


# -- posts -------------------------------------------------------------------


def make_post(author: Identity, kind: PostKind, content: bytes, now: float) -> ProfilePost:
    payload = ProfilePostPayload(author.cert_hash, int(now), PostKind(kind), bytes(content))
    return ProfilePost(payload.author_cert_hash, payload.created_at, payload.kind, payload.content, author.sign(canonical_bytes(payload)))


def verify_post(post: ProfilePost, public_key: bytes, provider: CryptoProvider = TEST_PROVIDER) -> bool:
    payload = ProfilePostPayload(post.author_cert_hash, post.created_at, post.kind, post.content)
    return provider.verify(public_key, canonical_bytes(payload), post.signature)


def publish_post(membership: ProfileMembership, kind: PostKind, content: bytes, now: Optional[float] = None) -> bytes:
    """Sign and store a post plus its day/kind index entry; returns the post hash."""
    membership.check_active()
    profile = membership.profile
    now = profile.clock.now if now is None else now
    post = make_post(membership.identity, kind, content, now)
    raw = canonical_bytes(post)
    ph = profile.provider.hash(raw)
    node = membership.node_id
    profile.dht.put(node, post_key(ph, profile.bits), raw, POST_TTL)
    profile.dht.put(node, index_key(profile.owner_hash, day_bucket(post.created_at), post.kind, profile.bits), ph, POST_TTL)
    return ph


def fetch_posts(
    membership: ProfileMembership,
    start: float,
    end: float,
    kinds: Optional[Iterable[PostKind]] = None,
    authors: Optional[Iterable[bytes]] = None,
) -> list[ProfilePost]:
    """Verified posts with ``start <= created_at < end``, oldest first.

    Ties are broken by post hash.  Anything that fails to decode, to match
    its index slot, or to verify under an admitted, unrevoked author is
    skipped.
    """
    membership.check_active()
    if end <= start:
        return []
    profile = membership.profile
    provider = profile.provider
    node = membership.node_id
    kind_set = sorted(PostKind(k) for k in (kinds if kinds is not None else PostKind))
    author_set = None if authors is None else {bytes(a) for a in authors}
    keys_cache: dict[bytes, Optional[bytes]] = {}
    found: dict[bytes, ProfilePost] = {}
    first_day = day_bucket(max(start, 0))
    last_day = day_bucket(math.ceil(end) - 1)
    for day in range(first_day, last_day + 1):
        for kind in kind_set:
            for ph in sorted(profile.dht.get(node, index_key(profile.owner_hash, day, kind, profile.bits))):
                if ph in found:
                    continue
                for raw in sorted(profile.dht.get(node, post_key(ph, profile.bits))):
                    if provider.hash(raw) != ph:
                        continue
                    post = try_decode(raw, ProfilePost)
                    if post is None or post.kind != kind or day_bucket(post.created_at) != day:
                        continue
                    if not start <= post.created_at < end:
                        continue
                    if author_set is not None and post.author_cert_hash not in author_set:
                        continue
                    a = post.author_cert_hash
                    if a not in keys_cache:
                        keys_cache[a] = profile._author_key(a, node, membership.revocations_seen)
                    if keys_cache[a] is None or not verify_post(post, keys_cache[a], provider):
                        continue
                    found[ph] = post
    return [found[h] for h in sorted(found, key=lambda h: (found[h].created_at, h))]


# -- private messages --------------------------------------------------------


def _digest(sender_hash: bytes, sent_at: int, subject: str, body: bytes, provider: CryptoProvider) -> bytes:
    return provider.hash(canonical_bytes(PrivateMessageContent(sender_hash, sent_at, subject, body)))


def seal_message(
    sender: Identity,
    owner_cert: Certificate,
    subject: str,
    body: bytes,
    now: float,
    rng: Optional[random.Random] = None,
) -> PrivateMessageEnvelope:
    provider = sender.provider
    sent_at = int(now)
    msg = PrivateMessage(sender.cert_hash, sent_at, subject, bytes(body), _digest(sender.cert_hash, sent_at, subject, bytes(body), provider))
    key = provider.generate_symmetric_key(rng)
    return PrivateMessageEnvelope(
        provider.pk_encrypt(owner_cert.body.public_key, key, rng),
        provider.sym_encrypt(key, canonical_bytes(msg), rng),
    )


def open_envelope(owner: Identity, envelope: PrivateMessageEnvelope) -> PrivateMessage:
    """Decrypt and integrity-check; raises DecryptionError on any failure."""
    provider = owner.provider
    key = provider.pk_decrypt(owner.private_key, envelope.encrypted_key)
    msg = try_decode(provider.sym_decrypt(key, envelope.ciphertext), PrivateMessage)
    if msg is None:
        raise DecryptionError("plaintext does not decode")
    if msg.digest != _digest(msg.sender_cert_hash, msg.sent_at, msg.subject, msg.body, provider):
        raise DecryptionError("integrity hash mismatch")
    return msg


@dataclass(frozen=True)
class MessageStatus:
    envelope_hash: bytes
    message: Optional[PrivateMessage]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.message is not None


def send_private_message(
    sender_membership: ProfileMembership,
    owner_cert: Certificate,
    subject: str,
    body: bytes,
    now: Optional[float] = None,
    rng: Optional[random.Random] = None,
) -> PrivateMessageEnvelope:
    sender_membership.check_active()
    profile = sender_membership.profile
    if owner_cert.hash_with(profile.provider) != profile.owner_hash:
        raise NotAuthorized("sender is not a member of the recipient's profile overlay")
    now = profile.clock.now if now is None else now
    env = seal_message(sender_membership.identity, owner_cert, subject, body, now, rng)
    profile.dht.put(sender_membership.node_id, pm_key(profile.owner_hash, profile.bits), canonical_bytes(env), PM_TTL)
    return env


def read_private_messages(owner_membership: ProfileMembership) -> list[MessageStatus]:
    """Poll the owner's mailbox.  Envelopes that fail to decrypt or whose
    integrity hash mismatches come back with ``error`` set."""
    if not owner_membership.is_owner:
        raise NotOwner("only the profile owner can read its private messages")
    owner_membership.check_active()
    profile = owner_membership.profile
    out = []
    for raw in profile.dht.get(owner_membership.node_id, pm_key(profile.owner_hash, profile.bits)):
        h = profile.provider.hash(raw)
        env = try_decode(raw, PrivateMessageEnvelope)
        if env is None:
            out.append(MessageStatus(h, None, "tampered: envelope does not decode"))
            continue
        try:
            out.append(MessageStatus(h, open_envelope(owner_membership.identity, env)))
        except DecryptionError as exc:
            out.append(MessageStatus(h, None, f"tampered: {exc}"))
    return sorted(out, key=lambda s: ((s.message.sent_at, s.envelope_hash) if s.ok else (-1, s.envelope_hash)))


# -- revocation --------------------------------------------------------------


def propagate_revocation(owner_membership: ProfileMembership, record: RevocationRecord) -> set[int]:
    """Broadcast the revocation to every online member, store it in the
    profile DHT, and evict the revoked member's sessions."""
    if not owner_membership.is_owner:
        raise NotOwner("only the profile owner may revoke members")
    profile = owner_membership.profile
    if not verify_revocation(record, profile.owner_cert, profile.provider):
        raise NotOwner("revocation is not signed by the profile owner")
    owner_membership.check_active()

    def deliver(node: int, rec: RevocationRecord) -> None:
        m = profile.members.get(node)
        if m is not None:
            m.revocations_seen.observe(rec)

    delivered = profile.overlay.broadcast(owner_membership.node_id, record, deliver)
    profile.dht.put(owner_membership.node_id, revoked_key(profile.owner_hash, profile.bits), canonical_bytes(record), REVOCATION_TTL)
    evicted = profile.evict(record.revoked_cert_hash)
    if evicted:
        logger.info("revocation evicted %d session(s)", len(evicted))
    return delivered
