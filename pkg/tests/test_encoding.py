from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

import socialmesh  # noqa: F401  (registers every record type)
from oracles import ALICE_PRIV, BOB_PRIV, golden_fixtures
from socialmesh import encoding
from socialmesh.crypto import TEST_PROVIDER
from socialmesh.encoding import canonical_bytes, decode, registered_types, try_decode
from socialmesh.errors import DecodeError, StringTooLong
from socialmesh.identity import (
    Certificate,
    CertificateBody,
    Identity,
    PublicInfo,
    RevocationRecord,
    revoke_member,
    sign_friend_entry,
)

GOLDEN = Path(__file__).parent / "golden"


def fixed_identity(priv, info, created_at):
    pub = TEST_PROVIDER.public_key(priv)
    body = CertificateBody(info.canonical(), pub, created_at)
    return Identity(Certificate(body, TEST_PROVIDER.sign(priv, canonical_bytes(body)), ()), priv)


def golden(name):
    return bytes.fromhex((GOLDEN / f"{name}.hex").read_text().strip())


@pytest.fixture
def golden_world():
    alice = fixed_identity(ALICE_PRIV, PublicInfo("Alice Smith ", "alice@EXAMPLE.org", ["Example University"], 0x1234), 1000)
    bob = fixed_identity(BOB_PRIV, PublicInfo("bob jones", "", [], 0xABCDEF), 2000)
    entry = sign_friend_entry(bob, alice.cert, 5000)
    alice.add_friend_entry(entry)
    rev = revoke_member(alice, bob.cert_hash, 9000)
    return alice, bob, entry, rev


def test_golden_files_match_independent_oracle():
    g = golden_fixtures()
    for name in ("certificate", "friend_entry", "revocation"):
        assert golden(name) == g[name]


def test_golden_certificate(golden_world):
    alice, bob, entry, rev = golden_world
    assert canonical_bytes(alice.cert) == golden("certificate")
    assert canonical_bytes(entry) == golden("friend_entry")
    assert canonical_bytes(rev) == golden("revocation")
    g = golden_fixtures()
    assert alice.cert_hash == g["alice_hash"]
    assert bob.cert_hash == g["bob_hash"]


def test_golden_bytes_decode_back(golden_world):
    alice, _bob, entry, rev = golden_world
    assert decode(golden("certificate"), Certificate) == alice.cert
    assert decode(golden("revocation"), RevocationRecord) == rev
    assert decode(golden("friend_entry")) == entry


def test_case_differences_vanish_after_canonicalization():
    a = PublicInfo("  ALICE Smith", "Alice@Example.ORG", ["X"], 5).canonical()
    b = PublicInfo("alice smith ", "alice@example.org", ["x"], 5).canonical()
    assert canonical_bytes(a) == canonical_bytes(b)


def test_empty_affiliations_encode_as_zero_count():
    raw = canonical_bytes(PublicInfo("", "e", (), 0))
    # tag, name (len 0), email (len 1 + 'e'), affiliation count
    assert raw[:1] == b"\x01"
    assert raw[1:5] == b"\x00\x00\x00\x00"
    assert raw[5:10] == b"\x00\x00\x00\x01e"
    assert raw[10:14] == b"\x00\x00\x00\x00"
    assert len(raw) == 14 + 20


def test_string_too_long(monkeypatch):
    monkeypatch.setattr(encoding, "MAX_FIELD_LEN", 3)
    with pytest.raises(StringTooLong):
        canonical_bytes(PublicInfo("abcd", "", (), 0))
    canonical_bytes(PublicInfo("abc", "", (), 0))


def test_decode_rejects_garbage():
    raw = canonical_bytes(PublicInfo("a", "b", ("c",), 1))
    with pytest.raises(DecodeError):
        decode(raw + b"\x00")
    with pytest.raises(DecodeError):
        decode(raw[:-1])
    with pytest.raises(DecodeError):
        decode(b"\xff" + raw[1:])
    with pytest.raises(DecodeError):
        decode(raw, Certificate)
    assert try_decode(b"") is None
    with pytest.raises(TypeError):
        canonical_bytes(object())


def test_tags_unique_and_known():
    tags = registered_types()
    assert len(set(tags.values())) == len(tags)
    for tag in (0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0A, 0x0B, 0x0C):
        assert tag in tags


# -- round trip over every registered record type --------------------------------


def strategy_for(kind, depth=0):
    if kind == encoding.U8:
        return st.integers(0, 255)
    if kind == encoding.U64:
        return st.integers(0, 2**64 - 1)
    if kind == encoding.NODE:
        return st.integers(0, 2**160 - 1)
    if kind == encoding.BYTES:
        return st.binary(max_size=40)
    if kind == encoding.STR:
        return st.text(max_size=20)
    if kind == encoding.STRS:
        return st.lists(st.text(max_size=8), max_size=4).map(tuple)
    tag, cls = kind
    if tag == "rec":
        return record_strategy(cls, depth + 1)
    if tag == "list":
        return st.lists(record_strategy(cls, depth + 1), max_size=2 if depth < 2 else 0).map(tuple)
    if tag == "opt":
        return st.none() if depth >= 2 else st.one_of(st.none(), record_strategy(cls, depth + 1))
    if tag == "enum":
        return st.sampled_from(list(cls))
    raise AssertionError(kind)


def _try_build(cls, kw):
    try:
        return cls(**kw)
    except ValueError:
        return None


def record_strategy(cls, depth=0):
    # records whose constructor enforces shape invariants reject some draws
    fields = {name: strategy_for(kind, depth) for name, kind in cls._schema}
    return st.fixed_dictionaries(fields).map(lambda kw: _try_build(cls, kw)).filter(lambda x: x is not None)


ALL_RECORDS = sorted(registered_types().items())


@pytest.mark.parametrize("tag,cls", ALL_RECORDS, ids=[c.__name__ for _, c in ALL_RECORDS])
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_roundtrip_every_record_type(tag, cls, data):
    obj = data.draw(record_strategy(cls))
    raw = canonical_bytes(obj)
    assert raw[0] == tag
    back = decode(raw, cls)
    assert back == obj
    assert canonical_bytes(back) == raw


def test_golden_post_envelope_and_keys(golden_world):
    import json
    import random

    from socialmesh.directory import active_key, derive_directory_keys
    from socialmesh.profile import (
        PostKind,
        cred_key,
        index_key,
        make_post,
        pm_key,
        post_key,
        revoked_key,
        seal_message,
    )

    alice, bob, _entry, _rev = golden_world
    post = make_post(alice, PostKind.STATUS, b"hello friends", 86400 + 5)
    assert canonical_bytes(post) == golden("post")
    env = seal_message(bob, alice.cert, "lunch?", b"noon on friday", 7000, random.Random(0))
    assert canonical_bytes(env) == golden("envelope")

    keys = {k: int(v, 16) for k, v in json.loads((GOLDEN / "keys.json").read_text()).items()}
    a, b = alice.cert_hash, bob.cert_hash
    assert derive_directory_keys(alice.info) == {
        keys["dir:name:alice smith"], keys["dir:email:alice@example.org"], keys["dir:affil:example university"],
    }
    assert active_key(a) == keys["active:<alice>"]
    assert post_key(TEST_PROVIDER.hash(canonical_bytes(post)), 160) == keys["post:<post>"]
    assert index_key(a, 1, PostKind.STATUS, 160) == keys["idx:<alice>|day 1|status"]
    assert pm_key(a, 160) == keys["pm:<alice>"]
    assert revoked_key(a, 160) == keys["revoked:<alice>"]
    assert cred_key(b, 160) == keys["cred:<bob>"]
    assert alice.node_id(160) == keys["node_id:<alice pub>"]


def test_golden_files_match_oracle_for_post_and_envelope():
    from oracles import golden_more

    g = golden_more()
    assert golden("post") == g["post"]
    assert golden("envelope") == g["envelope"]
