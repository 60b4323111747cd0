"""Public directory overlay: directory entries, friendship mailboxes, active peers.

Key derivation is part of the external format; see FORMATS.md.
"""

from __future__ import annotations

import enum as _enum
import logging
from dataclasses import dataclass
from typing import Optional

from .crypto import TEST_PROVIDER
from .dht import DAY, Dht, derive_key
from .encoding import BYTES, NODE, U64, canonical_bytes, enum, optional, rec, record, try_decode
from .errors import InvalidRequest
from .identity import (
    Certificate,
    FriendStatus,
    FriendEntry,
    Identity,
    MemberCertificate,
    PublicInfo,
    issue_member_cert,
    sign_friend_entry,
    verify_friend_entry,
    verify_member_cert,
    verify_self,
)

logger = logging.getLogger(__name__)

PREFIX_NAME = b"dir:name:"
PREFIX_EMAIL = b"dir:email:"
PREFIX_AFFIL = b"dir:affil:"
PREFIX_ACTIVE = b"active:"

DIRECTORY_TTL = 7 * DAY
ACTIVE_TTL = 120.0
REQUEST_TTL = 30 * DAY
RESPONSE_TTL = 30 * DAY


@record(0x07, (("requester_cert", rec(Certificate)), ("receiver_public_info", rec(PublicInfo)), ("timestamp", U64), ("signature", BYTES)))
@dataclass(frozen=True)
class FriendshipRequest:
    requester_cert: Certificate
    receiver_public_info: PublicInfo
    timestamp: int
    signature: bytes


@record(0x47, (("requester_cert_hash", BYTES), ("receiver_public_info", rec(PublicInfo)), ("timestamp", U64)))
@dataclass(frozen=True)
class FriendshipRequestPayload:
    requester_cert_hash: bytes
    receiver_public_info: PublicInfo
    timestamp: int


class Decision(_enum.IntEnum):
    UNCONDITIONAL_ACCEPT = 1
    CONDITIONAL_ACCEPT = 2
    REJECT = 3


@record(
    0x08,
    (
        ("decision", enum(Decision)),
        ("signed_friend_entry", optional(FriendEntry)),
        ("counter_request", optional(FriendshipRequest)),
        ("member_credential", optional(MemberCertificate)),
    ),
)
@dataclass(frozen=True)
class FriendshipResponse:
    decision: Decision
    signed_friend_entry: Optional[FriendEntry] = None
    counter_request: Optional[FriendshipRequest] = None
    # admission into the responder's profile overlay; travels with the entry
    member_credential: Optional[MemberCertificate] = None

    def __post_init__(self):
        d = Decision(self.decision)
        object.__setattr__(self, "decision", d)
        has_entry = self.signed_friend_entry is not None
        has_counter = self.counter_request is not None
        has_cred = self.member_credential is not None
        if d is Decision.UNCONDITIONAL_ACCEPT:
            ok = has_entry and has_counter and has_cred
        elif d is Decision.CONDITIONAL_ACCEPT:
            ok = has_counter and not has_entry and not has_cred
        else:
            ok = not (has_entry or has_counter or has_cred)
        if not ok:
            raise ValueError(f"malformed {d.name} response")

    @property
    def responder_cert(self) -> Optional[Certificate]:
        return self.counter_request.requester_cert if self.counter_request else None


@record(0x09, (("profile_owner_cert_hash", BYTES), ("node_id", NODE), ("published_at", U64)))
@dataclass(frozen=True)
class ActivePeerRecord:
    profile_owner_cert_hash: bytes
    node_id: int
    published_at: int


def derive_directory_keys(info: PublicInfo, bits: int = 160) -> frozenset:
    c = info.canonical()
    keys = set()
    if c.full_name:
        keys.add(derive_key(PREFIX_NAME + c.full_name.encode("utf-8"), bits))
    if c.email:
        keys.add(derive_key(PREFIX_EMAIL + c.email.encode("utf-8"), bits))
    for a in c.affiliations:
        keys.add(derive_key(PREFIX_AFFIL + a.encode("utf-8"), bits))
    return frozenset(keys)


def active_key(owner_cert_hash: bytes, bits: int = 160) -> int:
    return derive_key(PREFIX_ACTIVE + owner_cert_hash, bits)


class DirectoryPeer:
    """A user's node in the public directory overlay."""

    def __init__(self, identity: Identity, dht: Dht):
        self.identity = identity
        self.dht = dht
        self.node_id = identity.node_id(dht.bits)

    @property
    def now(self) -> float:
        return self.dht.clock.now

    @property
    def online(self) -> bool:
        return self.node_id in self.dht.overlay

    def join(self, bootstrap: Optional[int] = None) -> None:
        self.dht.join(self.node_id, bootstrap)

    def leave(self) -> None:
        self.dht.leave(self.node_id)

    def put(self, key: int, value: bytes, ttl: float) -> int:
        return self.dht.put(self.node_id, key, value, ttl)

    def get(self, key: int) -> frozenset:
        return self.dht.get(self.node_id, key)


# -- directory entries -------------------------------------------------------


def publish_directory_entry(peer: DirectoryPeer, cert: Optional[Certificate] = None) -> int:
    """Store the certificate under every derived key; returns the key count."""
    cert = cert or peer.identity.cert
    if not verify_self(cert, peer.identity.provider):
        raise InvalidRequest("certificate does not self-verify")
    value = canonical_bytes(cert)
    keys = derive_directory_keys(cert.info, peer.dht.bits)
    for k in sorted(keys):
        peer.put(k, value, DIRECTORY_TTL)
    return len(keys)


def _matches(info: PublicInfo, query: PublicInfo) -> bool:
    if query.full_name and info.full_name != query.full_name:
        return False
    if query.email and info.email != query.email:
        return False
    return all(a in info.affiliations for a in query.affiliations)


def search_directory(peer: DirectoryPeer, query: PublicInfo) -> list[Certificate]:
    """Certificates matching every non-empty query field.

    Several versions of one certificate (differing only in appended friend
    entries) collapse to the one carrying the most entries.
    """
    q = query.canonical()
    keys = derive_directory_keys(q, peer.dht.bits)
    if not keys:
        raise ValueError("query has no non-empty field")
    provider = peer.identity.provider
    found: dict[bytes, Certificate] = {}
    for k in sorted(keys):
        for raw in peer.get(k):
            cert = try_decode(raw, Certificate)
            if cert is None or not verify_self(cert, provider) or not _matches(cert.info, q):
                continue
            h = cert.hash_with(provider)
            prev = found.get(h)
            if prev is None or (len(cert.friend_entries), canonical_bytes(cert)) > (len(prev.friend_entries), canonical_bytes(prev)):
                found[h] = cert
    return [found[h] for h in sorted(found, key=lambda h: (found[h].info.full_name, found[h].info.email, h))]


def friend_entry_report(cert: Certificate, candidates: list[Certificate], now: float, provider=None) -> dict:
    """Classify each friend entry on ``cert`` against known friend certificates."""
    provider = provider or TEST_PROVIDER
    by_hash = {c.hash_with(provider): c for c in candidates}
    report = {}
    for e in cert.friend_entries:
        friend = by_hash.get(e.friend_cert_hash)
        status = FriendStatus.INVALID if friend is None else verify_friend_entry(e, cert, friend, now, provider=provider)
        report[e.friend_cert_hash] = status
    return report


# -- friendship requests -----------------------------------------------------


def make_friend_request(requester: Identity, receiver_info: PublicInfo, now: float) -> FriendshipRequest:
    info = receiver_info.canonical()
    payload = FriendshipRequestPayload(requester.cert_hash, info, int(now))
    return FriendshipRequest(requester.cert, info, int(now), requester.sign(canonical_bytes(payload)))


def verify_friend_request(req: FriendshipRequest, provider=None) -> bool:
    provider = provider or TEST_PROVIDER
    if not verify_self(req.requester_cert, provider):
        return False
    payload = FriendshipRequestPayload(req.requester_cert.hash_with(provider), req.receiver_public_info, req.timestamp)
    return provider.verify(req.requester_cert.body.public_key, canonical_bytes(payload), req.signature)


def send_friend_request(requester: DirectoryPeer, receiver_cert: Certificate) -> FriendshipRequest:
    req = make_friend_request(requester.identity, receiver_cert.info, requester.now)
    requester.put(receiver_cert.info.notification_address % (1 << requester.dht.bits), canonical_bytes(req), REQUEST_TTL)
    return req


def _mailbox(peer: DirectoryPeer) -> list:
    addr = peer.identity.info.notification_address % (1 << peer.dht.bits)
    return sorted(peer.get(addr))


def _request_sort_key(req: FriendshipRequest):
    return (req.timestamp, canonical_bytes(req))


def check_requests(receiver: DirectoryPeer) -> list[FriendshipRequest]:
    """Unexpired, signature-valid requests addressed to the receiver's info."""
    provider = receiver.identity.provider
    own = receiver.identity.info.canonical()
    out = []
    for raw in _mailbox(receiver):
        req = try_decode(raw, FriendshipRequest)
        if req is None:
            continue
        if req.receiver_public_info != own:
            continue
        if not verify_friend_request(req, provider):
            logger.debug("dropping friendship request with bad signature")
            continue
        out.append(req)
    return sorted(out, key=_request_sort_key)


def check_responses(requester: DirectoryPeer) -> list[FriendshipResponse]:
    """Well-formed responses in the requester's mailbox whose signed parts verify."""
    ident = requester.identity
    provider = ident.provider
    own_hash = ident.cert_hash
    own_info = ident.info.canonical()
    out = []
    for raw in _mailbox(requester):
        resp = try_decode(raw, FriendshipResponse)
        if resp is None:
            continue
        counter = resp.counter_request
        if counter is None:
            continue
        if counter.receiver_public_info != own_info or not verify_friend_request(counter, provider):
            continue
        responder = counter.requester_cert
        if resp.signed_friend_entry is not None:
            status = verify_friend_entry(resp.signed_friend_entry, ident.cert, responder, requester.now, provider=provider)
            if status is FriendStatus.INVALID:
                continue
            cred = resp.member_credential
            if cred.member_cert_hash != own_hash or not verify_member_cert(cred, responder, provider):
                continue
        out.append(resp)
    return sorted(out, key=lambda r: _request_sort_key(r.counter_request))


def _accept(receiver: DirectoryPeer, request: FriendshipRequest) -> FriendshipResponse:
    ident = receiver.identity
    now = receiver.now
    return FriendshipResponse(
        Decision.UNCONDITIONAL_ACCEPT,
        signed_friend_entry=sign_friend_entry(ident, request.requester_cert, now),
        counter_request=make_friend_request(ident, request.requester_cert.info, now),
        member_credential=issue_member_cert(ident, request.requester_cert, now),
    )


def _deliver_response(receiver: DirectoryPeer, request: FriendshipRequest, resp: FriendshipResponse) -> None:
    addr = request.requester_cert.info.notification_address % (1 << receiver.dht.bits)
    receiver.put(addr, canonical_bytes(resp), RESPONSE_TTL)


def respond_to_request(receiver: DirectoryPeer, request: FriendshipRequest, decision: Decision) -> FriendshipResponse:
    """Answer a request.  Accepts land in the requester's own mailbox; a
    reject stores nothing."""
    if not verify_friend_request(request, receiver.identity.provider):
        raise InvalidRequest("request signature does not verify")
    if request.receiver_public_info != receiver.identity.info.canonical():
        raise InvalidRequest("request is not addressed to this receiver")
    decision = Decision(decision)
    if decision is Decision.REJECT:
        return FriendshipResponse(Decision.REJECT)
    if decision is Decision.UNCONDITIONAL_ACCEPT:
        resp = _accept(receiver, request)
    else:
        resp = FriendshipResponse(
            Decision.CONDITIONAL_ACCEPT,
            counter_request=make_friend_request(receiver.identity, request.requester_cert.info, receiver.now),
        )
    _deliver_response(receiver, request, resp)
    return resp


def confirm_request(receiver: DirectoryPeer, request: FriendshipRequest) -> FriendshipResponse:
    """Complete a conditional accept once the requester's profile checks out."""
    if not verify_friend_request(request, receiver.identity.provider):
        raise InvalidRequest("request signature does not verify")
    resp = _accept(receiver, request)
    _deliver_response(receiver, request, resp)
    return resp


# -- active peers ------------------------------------------------------------


def publish_active(peer: DirectoryPeer, profile_owner_cert_hash: bytes, session_start: Optional[float] = None) -> ActivePeerRecord:
    """Announce this node as online in a profile overlay.

    ``published_at`` is the session start so heartbeats within one session
    re-put identical bytes and only refresh the TTL.
    """
    started = peer.now if session_start is None else session_start
    rec_ = ActivePeerRecord(bytes(profile_owner_cert_hash), peer.node_id, int(started))
    peer.put(active_key(profile_owner_cert_hash, peer.dht.bits), canonical_bytes(rec_), ACTIVE_TTL)
    return rec_


def lookup_active(peer: DirectoryPeer, profile_owner_cert_hash: bytes) -> set[int]:
    out = set()
    for raw in peer.get(active_key(profile_owner_cert_hash, peer.dht.bits)):
        r = try_decode(raw, ActivePeerRecord)
        if r is not None and r.profile_owner_cert_hash == profile_owner_cert_hash:
            out.add(r.node_id)
    return out
