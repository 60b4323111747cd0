import random
from dataclasses import replace

import pytest

from socialmesh.crypto import TEST_PROVIDER, RealCryptoProvider, get_provider
from socialmesh.encoding import canonical_bytes
from socialmesh.errors import DecryptionError, InvalidPublicInfo, NotAuthorized, Revoked
from socialmesh.identity import (
    FRESHNESS_WINDOW,
    Certificate,
    FriendStatus,
    Identity,
    PublicInfo,
    RevocationSet,
    create_identity,
    issue_member_cert,
    node_id_for,
    revoke_member,
    sign_friend_entry,
    verify_chain,
    verify_friend_entry,
    verify_member_cert,
    verify_revocation,
    verify_self,
)

DAY = 86400


def flip_bit(data, bit):
    b = bytearray(data)
    b[bit // 8] ^= 1 << (bit % 8)
    return bytes(b)


def test_same_seed_same_certificate():
    info = PublicInfo("Ann", "ann@x.org", (), None)
    a, _ = create_identity(info, TEST_PROVIDER, 10, random.Random(5))
    b, _ = create_identity(info, TEST_PROVIDER, 10, random.Random(5))
    assert canonical_bytes(a) == canonical_bytes(b)


def test_created_certificate_self_verifies(make_identity):
    ident = make_identity("Ann", "ann@x.org")
    assert verify_self(ident.cert)
    assert ident.cert.friend_entries == ()
    assert ident.info.notification_address == ident.node_id(160)


def test_mutated_body_breaks_self_signature(make_identity):
    cert = make_identity("Ann").cert
    forged = replace(cert, body=replace(cert.body, created_at=cert.body.created_at + 1))
    assert not verify_self(forged)
    forged = replace(cert, body=replace(cert.body, info=replace(cert.body.info, full_name="mallory")))
    assert not verify_self(forged)


def test_public_info_validation():
    with pytest.raises(InvalidPublicInfo):
        create_identity(PublicInfo("  ", "", ("x",), None), TEST_PROVIDER, 0, random.Random(1))
    with pytest.raises(InvalidPublicInfo):
        PublicInfo("a", "", (), 256).validate(8)
    PublicInfo("", "only@email", (), 255).validate(8)


def test_node_id_is_hash_of_public_key(make_identity):
    ident = make_identity()
    digest = int.from_bytes(TEST_PROVIDER.hash(ident.public_key), "big")
    assert ident.node_id(160) == digest % (1 << 160)
    assert ident.node_id(8) == digest % 256
    assert node_id_for(ident.public_key, 16) == digest % (1 << 16)


def test_cert_hash_ignores_friend_entries(make_identity):
    alice, bob, carol = make_identity("alice"), make_identity("bob"), make_identity("carol")
    h = alice.cert_hash
    e1 = sign_friend_entry(bob, alice.cert, 10)
    e2 = sign_friend_entry(carol, alice.cert, 20)
    alice.add_friend_entry(e1)
    alice.add_friend_entry(e2)
    assert alice.cert_hash == h
    for entries in ((e2, e1), (e1,), ()):
        assert replace(alice.cert, friend_entries=entries).cert_hash == h


def test_friend_entry_verification(make_identity):
    alice, bob, carol = make_identity("alice"), make_identity("bob"), make_identity("carol")
    entry = sign_friend_entry(bob, alice.cert, 1000)
    assert verify_friend_entry(entry, alice.cert, bob.cert, 1000) is FriendStatus.VALID_FRESH
    assert verify_friend_entry(entry, alice.cert, carol.cert, 1000) is FriendStatus.INVALID
    assert verify_friend_entry(entry, carol.cert, bob.cert, 1000) is FriendStatus.INVALID
    forged = replace(entry, timestamp=1001)
    assert verify_friend_entry(forged, alice.cert, bob.cert, 2000) is FriendStatus.INVALID


def test_freshness_boundary(make_identity):
    alice, bob = make_identity("alice"), make_identity("bob")
    t = 50 * DAY
    entry = sign_friend_entry(bob, alice.cert, t)
    assert verify_friend_entry(entry, alice.cert, bob.cert, t) is FriendStatus.VALID_FRESH
    assert verify_friend_entry(entry, alice.cert, bob.cert, t + FRESHNESS_WINDOW) is FriendStatus.VALID_FRESH
    assert verify_friend_entry(entry, alice.cert, bob.cert, t + FRESHNESS_WINDOW + 1) is FriendStatus.VALID_STALE
    assert verify_friend_entry(entry, alice.cert, bob.cert, t + 10, freshness_window=10) is FriendStatus.VALID_FRESH
    assert verify_friend_entry(entry, alice.cert, bob.cert, t + 11, freshness_window=10) is FriendStatus.VALID_STALE
    # an entry dated after "now" cannot be genuine
    assert verify_friend_entry(entry, alice.cert, bob.cert, t - 1) is FriendStatus.INVALID


def test_verify_friend_entry_is_pure(make_identity):
    alice, bob = make_identity(), make_identity()
    entry = sign_friend_entry(bob, alice.cert, 7)
    results = {verify_friend_entry(entry, alice.cert, bob.cert, 7 + d) for d in (5,) * 10}
    assert len(results) == 1


def test_member_credentials(make_identity):
    owner, friend, other = make_identity("owner"), make_identity("friend"), make_identity("other")
    cred = issue_member_cert(owner, friend.cert, 100)
    assert verify_member_cert(cred, owner.cert)
    assert not verify_member_cert(cred, other.cert)
    verify_chain(cred, owner.cert, friend.cert)
    with pytest.raises(NotAuthorized):
        verify_chain(cred, owner.cert, other.cert)
    with pytest.raises(NotAuthorized):
        verify_chain(None, owner.cert, friend.cert)
    stolen_key = replace(cred, member_public_key=other.public_key)
    with pytest.raises(NotAuthorized):
        verify_chain(stolen_key, owner.cert, friend.cert)


def test_revocation(make_identity):
    owner, friend, mallory = make_identity("owner"), make_identity("friend"), make_identity("mallory")
    cred = issue_member_cert(owner, friend.cert, 100)
    revs = RevocationSet(owner.cert)
    rec = revoke_member(owner, friend.cert_hash, 200)
    assert verify_revocation(rec, owner.cert)
    assert revoke_member(owner, friend.cert_hash, 200) == rec
    fake = revoke_member(mallory, friend.cert_hash, 200)
    assert not verify_revocation(fake, owner.cert)
    assert not revs.observe(fake)
    verify_chain(cred, owner.cert, friend.cert, revs)
    assert revs.observe(rec)
    with pytest.raises(Revoked):
        verify_chain(cred, owner.cert, friend.cert, revs)
    # dominance: later observations never un-revoke
    revs.observe_all([fake, rec])
    fresh = issue_member_cert(owner, friend.cert, 300)
    with pytest.raises(Revoked):
        verify_chain(fresh, owner.cert, friend.cert, revs)
    unknown = revoke_member(owner, b"\x00" * 32, 10)
    assert verify_revocation(unknown, owner.cert)


@pytest.mark.parametrize("name", ["test", "real"])
def test_sign_verify_and_bit_flips(name):
    provider = get_provider(name)
    rng = random.Random(99)
    for _ in range(40):
        priv, pub = provider.generate_keypair(rng)
        data = rng.randbytes(rng.randrange(1, 100))
        sig = provider.sign(priv, data)
        assert provider.verify(pub, data, sig)
        assert not provider.verify(pub, flip_bit(data, rng.randrange(len(data) * 8)), sig)
        assert not provider.verify(pub, data, flip_bit(sig, rng.randrange(len(sig) * 8)))


@pytest.mark.parametrize("name", ["test", "real"])
def test_encryption_roundtrips(name):
    provider = get_provider(name)
    rng = random.Random(3)
    priv, pub = provider.generate_keypair(rng)
    other_priv, _ = provider.generate_keypair(rng)
    for size in (0, 1, 31, 32, 200):
        msg = rng.randbytes(size)
        ct = provider.pk_encrypt(pub, msg, rng)
        assert provider.pk_decrypt(priv, ct) == msg
        with pytest.raises(DecryptionError):
            provider.pk_decrypt(other_priv, ct)
        key = provider.generate_symmetric_key(rng)
        assert provider.sym_decrypt(key, provider.sym_encrypt(key, msg, rng)) == msg


def test_real_provider_identity_flow():
    real = RealCryptoProvider()
    rng = random.Random(8)
    owner = Identity.create(PublicInfo("Owner", "", (), None), real, 0, rng)
    friend = Identity.create(PublicInfo("Friend", "", (), None), real, 0, rng)
    assert verify_self(owner.cert, real)
    cred = issue_member_cert(owner, friend.cert, 5)
    verify_chain(cred, owner.cert, friend.cert, None, real)
    entry = sign_friend_entry(friend, owner.cert, 5)
    assert verify_friend_entry(entry, owner.cert, friend.cert, 6, provider=real) is FriendStatus.VALID_FRESH


def test_unknown_provider():
    with pytest.raises(ValueError):
        get_provider("rot13")


def test_randomized_identity_corpus():
    rng = random.Random(2024)
    for i in range(200):
        a = Identity.create(PublicInfo(f"a{i}", "", (), None), TEST_PROVIDER, 0, rng)
        b = Identity.create(PublicInfo(f"b{i}", "", (), None), TEST_PROVIDER, 0, rng)
        h = a.cert_hash
        t = rng.randrange(10**7)
        e = sign_friend_entry(b, a.cert, t)
        a.add_friend_entry(e)
        assert a.cert_hash == h
        assert isinstance(a.cert, Certificate)
        window = rng.randrange(1, 10**6)
        assert verify_friend_entry(e, a.cert, b.cert, t + window, window) is FriendStatus.VALID_FRESH
        assert verify_friend_entry(e, a.cert, b.cert, t + window + 1, window) is FriendStatus.VALID_STALE
