"""Certificates, friend entries, owner-issued member credentials and revocations."""

from __future__ import annotations

import enum as _enum
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .crypto import TEST_PROVIDER, CryptoProvider
from .encoding import BYTES, NODE, STR, STRS, U64, canonical_bytes, list_of, rec, record
from .errors import InvalidPublicInfo, NotAuthorized, Revoked

DAY = 86400
FRESHNESS_WINDOW = 30 * DAY

_ASCII_LOWER = str.maketrans("ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz")


def canonical_text(s: str) -> str:
    """Trim and lowercase ASCII letters only; other characters pass through."""
    return s.strip().translate(_ASCII_LOWER)


def node_id_for(public_key: bytes, bits: int, provider: CryptoProvider = TEST_PROVIDER) -> int:
    return int.from_bytes(provider.hash(public_key), "big") % (1 << bits)


@record(0x01, (("full_name", STR), ("email", STR), ("affiliations", STRS), ("notification_address", NODE)))
@dataclass(frozen=True)
class PublicInfo:
    full_name: str = ""
    email: str = ""
    affiliations: tuple = ()
    notification_address: int = 0

    def __post_init__(self):
        object.__setattr__(self, "affiliations", tuple(self.affiliations))

    def canonical(self) -> "PublicInfo":
        affs = tuple(a for a in (canonical_text(x) for x in self.affiliations) if a)
        return PublicInfo(canonical_text(self.full_name), canonical_text(self.email), affs, self.notification_address)

    def validate(self, bits: int = 160) -> None:
        c = self.canonical()
        if not c.full_name and not c.email:
            raise InvalidPublicInfo("at least one of full_name / email is required")
        if not 0 <= self.notification_address < (1 << bits):
            raise InvalidPublicInfo(f"notification_address outside the {bits}-bit address space")


@record(0x02, (("info", rec(PublicInfo)), ("public_key", BYTES), ("created_at", U64)))
@dataclass(frozen=True)
class CertificateBody:
    info: PublicInfo
    public_key: bytes
    created_at: int


@record(0x04, (("subject_cert_hash", BYTES), ("friend_cert_hash", BYTES), ("timestamp", U64), ("signature", BYTES)))
@dataclass(frozen=True)
class FriendEntry:
    subject_cert_hash: bytes
    friend_cert_hash: bytes
    timestamp: int
    signature: bytes


@record(0x44, (("subject_cert_hash", BYTES), ("timestamp", U64), ("friend_cert_hash", BYTES)))
@dataclass(frozen=True)
class FriendEntryPayload:
    subject_cert_hash: bytes
    timestamp: int
    friend_cert_hash: bytes


@record(0x03, (("body", rec(CertificateBody)), ("self_signature", BYTES), ("friend_entries", list_of(FriendEntry))))
@dataclass(frozen=True)
class Certificate:
    body: CertificateBody
    self_signature: bytes
    friend_entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "friend_entries", tuple(self.friend_entries))

    @property
    def info(self) -> PublicInfo:
        return self.body.info

    @property
    def public_key(self) -> bytes:
        return self.body.public_key

    def hash_with(self, provider: CryptoProvider = TEST_PROVIDER) -> bytes:
        # friend entries are excluded: they embed this very hash
        return provider.hash(canonical_bytes(self.body) + self.self_signature)

    @property
    def cert_hash(self) -> bytes:
        return self.hash_with(TEST_PROVIDER)

    def with_friend_entry(self, entry: FriendEntry) -> "Certificate":
        return replace(self, friend_entries=self.friend_entries + (entry,))


@record(0x05, (("member_cert_hash", BYTES), ("member_public_key", BYTES), ("issued_at", U64), ("owner_signature", BYTES)))
@dataclass(frozen=True)
class MemberCertificate:
    member_cert_hash: bytes
    member_public_key: bytes
    issued_at: int
    owner_signature: bytes


@record(0x45, (("member_cert_hash", BYTES), ("member_public_key", BYTES), ("issued_at", U64)))
@dataclass(frozen=True)
class MemberCertificatePayload:
    member_cert_hash: bytes
    member_public_key: bytes
    issued_at: int


@record(0x06, (("revoked_cert_hash", BYTES), ("revoked_at", U64), ("owner_signature", BYTES)))
@dataclass(frozen=True)
class RevocationRecord:
    revoked_cert_hash: bytes
    revoked_at: int
    owner_signature: bytes


@record(0x46, (("revoked_cert_hash", BYTES), ("revoked_at", U64)))
@dataclass(frozen=True)
class RevocationPayload:
    revoked_cert_hash: bytes
    revoked_at: int


def cert_hash(cert: Certificate, provider: CryptoProvider = TEST_PROVIDER) -> bytes:
    return cert.hash_with(provider)


@dataclass
class Identity:
    """A user's certificate together with its private key."""

    cert: Certificate
    private_key: bytes = field(repr=False)
    provider: CryptoProvider = TEST_PROVIDER

    @classmethod
    def create(
        cls,
        info: PublicInfo,
        provider: CryptoProvider = TEST_PROVIDER,
        now: float = 0,
        rng: Optional[random.Random] = None,
        bits: int = 160,
    ) -> "Identity":
        cert, private_key = create_identity(info, provider, now, rng, bits)
        return cls(cert, private_key, provider)

    @property
    def cert_hash(self) -> bytes:
        return self.cert.hash_with(self.provider)

    @property
    def public_key(self) -> bytes:
        return self.cert.body.public_key

    @property
    def info(self) -> PublicInfo:
        return self.cert.body.info

    @property
    def name(self) -> str:
        return self.info.full_name

    def node_id(self, bits: int = 160) -> int:
        return node_id_for(self.public_key, bits, self.provider)

    def sign(self, data: bytes) -> bytes:
        return self.provider.sign(self.private_key, data)

    def add_friend_entry(self, entry: FriendEntry) -> None:
        self.cert = self.cert.with_friend_entry(entry)


def create_identity(
    info: PublicInfo,
    provider: CryptoProvider = TEST_PROVIDER,
    now: float = 0,
    rng: Optional[random.Random] = None,
    bits: int = 160,
) -> tuple[Certificate, bytes]:
    """Generate a keypair and a self-signed certificate with no friend entries.

    ``info.notification_address`` of ``None`` is replaced by the node id
    derived from the new public key.
    """
    private_key, public_key = provider.generate_keypair(rng)
    if info.notification_address is None:
        info = replace(info, notification_address=node_id_for(public_key, bits, provider))
    info.validate(bits)
    body = CertificateBody(info.canonical(), public_key, int(now))
    sig = provider.sign(private_key, canonical_bytes(body))
    return Certificate(body, sig, ()), private_key


def verify_self(cert: Certificate, provider: CryptoProvider = TEST_PROVIDER) -> bool:
    body = cert.body
    if body.info != body.info.canonical():
        return False
    return provider.verify(body.public_key, canonical_bytes(body), cert.self_signature)


def sign_friend_entry(signer: Identity, subject_cert: Certificate, now: float) -> FriendEntry:
    subject_hash = subject_cert.hash_with(signer.provider)
    ts = int(now)
    payload = FriendEntryPayload(subject_hash, ts, signer.cert_hash)
    return FriendEntry(subject_hash, signer.cert_hash, ts, signer.sign(canonical_bytes(payload)))


class FriendStatus(str, _enum.Enum):
    VALID_FRESH = "valid_fresh"
    VALID_STALE = "valid_stale"
    INVALID = "invalid"


def verify_friend_entry(
    entry: FriendEntry,
    subject_cert: Certificate,
    friend_cert: Certificate,
    now: float,
    freshness_window: float = FRESHNESS_WINDOW,
    provider: CryptoProvider = TEST_PROVIDER,
) -> FriendStatus:
    """Classify a friend entry.  The freshness boundary is inclusive; an
    entry dated in the future is invalid."""
    if entry.subject_cert_hash != subject_cert.hash_with(provider):
        return FriendStatus.INVALID
    if entry.friend_cert_hash != friend_cert.hash_with(provider):
        return FriendStatus.INVALID
    if not verify_self(friend_cert, provider):
        return FriendStatus.INVALID
    payload = FriendEntryPayload(entry.subject_cert_hash, entry.timestamp, entry.friend_cert_hash)
    if not provider.verify(friend_cert.body.public_key, canonical_bytes(payload), entry.signature):
        return FriendStatus.INVALID
    age = now - entry.timestamp
    if age < 0:
        return FriendStatus.INVALID
    return FriendStatus.VALID_FRESH if age <= freshness_window else FriendStatus.VALID_STALE


def issue_member_cert(owner: Identity, friend_cert: Certificate, now: float) -> MemberCertificate:
    h = friend_cert.hash_with(owner.provider)
    payload = MemberCertificatePayload(h, friend_cert.body.public_key, int(now))
    return MemberCertificate(h, friend_cert.body.public_key, int(now), owner.sign(canonical_bytes(payload)))


def verify_member_cert(cred: MemberCertificate, owner_cert: Certificate, provider: CryptoProvider = TEST_PROVIDER) -> bool:
    payload = MemberCertificatePayload(cred.member_cert_hash, cred.member_public_key, cred.issued_at)
    return provider.verify(owner_cert.body.public_key, canonical_bytes(payload), cred.owner_signature)


def revoke_member(owner: Identity, member_cert_hash: bytes, now: float) -> RevocationRecord:
    payload = RevocationPayload(bytes(member_cert_hash), int(now))
    return RevocationRecord(bytes(member_cert_hash), int(now), owner.sign(canonical_bytes(payload)))


def verify_revocation(record: RevocationRecord, owner_cert: Certificate, provider: CryptoProvider = TEST_PROVIDER) -> bool:
    payload = RevocationPayload(record.revoked_cert_hash, record.revoked_at)
    return provider.verify(owner_cert.body.public_key, canonical_bytes(payload), record.owner_signature)


class RevocationSet:
    """Valid revocations observed for one owner.  Only ever grows."""

    def __init__(self, owner_cert: Certificate, provider: CryptoProvider = TEST_PROVIDER):
        self.owner_cert = owner_cert
        self.provider = provider
        self.records: dict[bytes, RevocationRecord] = {}

    def observe(self, record: RevocationRecord) -> bool:
        """Add ``record`` if it verifies under the owner; returns whether it did."""
        if not verify_revocation(record, self.owner_cert, self.provider):
            return False
        self.records.setdefault(record.revoked_cert_hash, record)
        return True

    def observe_all(self, records: Iterable[RevocationRecord]) -> int:
        return sum(self.observe(r) for r in records)

    def __contains__(self, cert_hash: bytes) -> bool:
        return cert_hash in self.records

    def __len__(self) -> int:
        return len(self.records)

    def copy(self) -> "RevocationSet":
        other = RevocationSet(self.owner_cert, self.provider)
        other.records = dict(self.records)
        return other


def verify_chain(
    credential: Optional[MemberCertificate],
    owner_cert: Certificate,
    presenter_cert: Certificate,
    revocations: Optional[RevocationSet] = None,
    provider: CryptoProvider = TEST_PROVIDER,
) -> None:
    """Check that ``presenter_cert`` may enter ``owner_cert``'s profile overlay.

    Raises :class:`NotAuthorized` for a missing or invalid credential and
    :class:`Revoked` if the presenter's hash has a valid revocation.
    """
    if not verify_self(owner_cert, provider):
        raise NotAuthorized("owner certificate does not self-verify")
    if credential is None:
        raise NotAuthorized("no member credential presented")
    if not verify_self(presenter_cert, provider):
        raise NotAuthorized("presenter certificate does not self-verify")
    if not verify_member_cert(credential, owner_cert, provider):
        raise NotAuthorized("credential is not signed by the profile owner")
    presenter_hash = presenter_cert.hash_with(provider)
    if credential.member_cert_hash != presenter_hash or credential.member_public_key != presenter_cert.body.public_key:
        raise NotAuthorized("credential was issued to a different certificate")
    if revocations is not None and presenter_hash in revocations:
        raise Revoked(f"member {presenter_hash.hex()[:12]} has been revoked")
