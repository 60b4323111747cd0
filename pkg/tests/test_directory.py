import hashlib
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from socialmesh.directory import (
    ACTIVE_TTL,
    Decision,
    FriendshipResponse,
    check_requests,
    check_responses,
    confirm_request,
    derive_directory_keys,
    friend_entry_report,
    lookup_active,
    make_friend_request,
    publish_active,
    publish_directory_entry,
    respond_to_request,
    search_directory,
    send_friend_request,
)
from socialmesh.encoding import canonical_bytes
from socialmesh.errors import InvalidRequest
from socialmesh.identity import FriendStatus, PublicInfo, sign_friend_entry
from socialmesh.network import SocialNetwork


def key_oracle(prefix, text, bits=160):
    return int.from_bytes(hashlib.sha256(prefix + text.encode()).digest(), "big") % (1 << bits)


@pytest.fixture
def net():
    return SocialNetwork(seed=42)


def online(net, *people):
    users = [net.create_user(*p) for p in people]
    for u in users:
        u.go_online(net.users[0].peer.node_id if net.directory.overlay.nodes else None)
    net.directory.overlay.stabilize_until_stable()
    return users


def test_directory_keys():
    a = derive_directory_keys(PublicInfo("Alice Smith", "", (), 0))
    b = derive_directory_keys(PublicInfo("ALICE smith", "", (), 0))
    assert a == b == {key_oracle(b"dir:name:", "alice smith")}
    full = derive_directory_keys(PublicInfo("Alice", "A@X.org", ("Lab A", " "), 0))
    assert full == {key_oracle(b"dir:name:", "alice"), key_oracle(b"dir:email:", "a@x.org"), key_oracle(b"dir:affil:", "lab a")}
    assert len(derive_directory_keys(PublicInfo("x", "", (), 0), 16)) == 1


def test_publish_and_search(net):
    alice, alice2, bob = online(net, ("Alice Smith", "a@x.org"), ("alice smith", "other@y.org"), ("Bob", "b@x.org", ["Lab"]))
    hits = search_directory(bob.peer, PublicInfo("ALICE SMITH", "", (), 0))
    assert {c.hash_with() for c in hits} == {alice.cert_hash, alice2.cert_hash}
    # AND semantics
    hits = search_directory(bob.peer, PublicInfo("alice smith", "a@x.org", (), 0))
    assert [c.hash_with() for c in hits] == [alice.cert_hash]
    assert search_directory(bob.peer, PublicInfo("alice smith", "nobody@x.org", (), 0)) == []
    assert search_directory(alice.peer, PublicInfo("nobody", "", (), 0)) == []
    assert [c.hash_with() for c in search_directory(alice.peer, PublicInfo("", "", ("lab",), 0))] == [bob.cert_hash]
    with pytest.raises(ValueError):
        search_directory(alice.peer, PublicInfo("", "", (), 0))


def test_search_returns_every_matching_cert(net):
    people = online(net, *[(f"Pat Lee", f"pat{i}@x.org") for i in range(3)], ("Other", "o@x.org"))
    hits = search_directory(people[-1].peer, PublicInfo("pat lee", "", (), 0))
    assert {c.hash_with() for c in hits} == {p.cert_hash for p in people[:3]}
    for c in hits:
        assert c.info.full_name == "pat lee"


def test_republish_is_deduplicated(net):
    (alice,) = online(net, ("Alice", "a@x.org"))
    publish_directory_entry(alice.peer)
    publish_directory_entry(alice.peer)
    key = key_oracle(b"dir:name:", "alice")
    assert len(alice.peer.get(key)) == 1


def test_search_prefers_version_with_more_friend_entries(net):
    alice, bob = online(net, ("Alice", ""), ("Bob", ""))
    alice.identity.add_friend_entry(sign_friend_entry(bob.identity, alice.cert, net.clock.now))
    publish_directory_entry(alice.peer)
    (hit,) = search_directory(bob.peer, PublicInfo("alice", "", (), 0))
    assert len(hit.friend_entries) == 1
    report = friend_entry_report(hit, [bob.cert], net.clock.now)
    assert report == {bob.cert_hash: FriendStatus.VALID_FRESH}


def test_request_flow_unconditional(net):
    alice, bob = online(net, ("Alice", ""), ("Bob", ""))
    send_friend_request(alice.peer, bob.cert)
    send_friend_request(alice.peer, bob.cert)  # same second: identical bytes
    (req,) = check_requests(bob.peer)
    assert req.requester_cert.hash_with() == alice.cert_hash
    resp = respond_to_request(bob.peer, req, Decision.UNCONDITIONAL_ACCEPT)
    assert resp.signed_friend_entry is not None and resp.counter_request is not None
    status = FriendStatus.VALID_FRESH
    from socialmesh.identity import verify_friend_entry

    assert verify_friend_entry(resp.signed_friend_entry, alice.cert, bob.cert, net.clock.now) is status
    (got,) = check_responses(alice.peer)
    assert got == resp
    assert got.member_credential.member_cert_hash == alice.cert_hash


def test_tampered_and_misaddressed_requests_are_dropped(net):
    alice, bob, carol = online(net, ("Alice", ""), ("Bob", ""), ("Carol", ""))
    send_friend_request(alice.peer, bob.cert)
    send_friend_request(carol.peer, bob.cert)
    forged = make_friend_request(carol.identity, bob.cert.info, net.clock.now)
    forged = replace(forged, timestamp=forged.timestamp + 5)
    addr = bob.cert.info.notification_address
    carol.peer.put(addr, canonical_bytes(forged), 100)
    # right mailbox, wrong person
    misaddressed = make_friend_request(carol.identity, alice.cert.info, net.clock.now)
    carol.peer.put(addr, canonical_bytes(misaddressed), 100)
    carol.peer.put(addr, b"\x07garbage", 100)
    reqs = check_requests(bob.peer)
    assert sorted(r.requester_cert.hash_with() for r in reqs) == sorted([alice.cert_hash, carol.cert_hash])
    with pytest.raises(InvalidRequest):
        respond_to_request(bob.peer, forged, Decision.UNCONDITIONAL_ACCEPT)
    with pytest.raises(InvalidRequest):
        respond_to_request(bob.peer, misaddressed, Decision.UNCONDITIONAL_ACCEPT)


def test_no_requests(net):
    (alice,) = online(net, ("Alice", ""))
    assert check_requests(alice.peer) == []
    assert check_responses(alice.peer) == []


def test_reject_is_silent(net):
    alice, bob = online(net, ("Alice", ""), ("Bob", ""))
    before = set(alice.peer.get(alice.cert.info.notification_address))
    req = send_friend_request(alice.peer, bob.cert)
    resp = respond_to_request(bob.peer, req, Decision.REJECT)
    assert resp == FriendshipResponse(Decision.REJECT)
    assert set(alice.peer.get(alice.cert.info.notification_address)) == before
    assert check_responses(alice.peer) == []


def test_conditional_then_confirm(net):
    alice, bob = online(net, ("Alice", ""), ("Bob", ""))
    req = send_friend_request(alice.peer, bob.cert)
    resp = respond_to_request(bob.peer, req, Decision.CONDITIONAL_ACCEPT)
    assert resp.signed_friend_entry is None and resp.counter_request is not None
    (got,) = check_responses(alice.peer)
    assert got.signed_friend_entry is None
    confirm = confirm_request(bob.peer, req)
    assert confirm.decision is Decision.UNCONDITIONAL_ACCEPT
    assert confirm in check_responses(alice.peer)


@given(st.sampled_from(list(Decision)), st.booleans(), st.booleans(), st.booleans())
def test_response_shape_invariants(decision, entry, counter, cred):
    from socialmesh.identity import FriendEntry, MemberCertificate

    e = FriendEntry(b"s", b"f", 1, b"x") if entry else None
    c = object() if counter else None
    m = MemberCertificate(b"h", b"k", 1, b"s") if cred else None
    legal = {
        Decision.UNCONDITIONAL_ACCEPT: entry and counter and cred,
        Decision.CONDITIONAL_ACCEPT: counter and not entry and not cred,
        Decision.REJECT: not (entry or counter or cred),
    }[decision]
    if legal:
        FriendshipResponse(decision, e, c, m)
    else:
        with pytest.raises(ValueError):
            FriendshipResponse(decision, e, c, m)


def test_active_peer_list(net):
    alice, bob, mallory = online(net, ("Alice", ""), ("Bob", ""), ("Mallory", ""))
    publish_active(bob.peer, alice.cert_hash)
    assert bob.peer.node_id in lookup_active(alice.peer, alice.cert_hash)
    # anyone can list themselves; the admission handshake is what stops them
    publish_active(mallory.peer, alice.cert_hash)
    assert mallory.peer.node_id in lookup_active(alice.peer, alice.cert_hash)
    net.clock.advance(ACTIVE_TTL + 1)
    assert lookup_active(alice.peer, alice.cert_hash) == set()


def test_heartbeat_keeps_single_record(net):
    alice, bob = online(net, ("Alice", ""), ("Bob", ""))
    for _ in range(5):
        publish_active(bob.peer, alice.cert_hash, session_start=0)
        net.clock.advance(60)
    assert lookup_active(alice.peer, alice.cert_hash) == {bob.peer.node_id}
    from socialmesh.directory import active_key

    assert len(alice.peer.get(active_key(alice.cert_hash))) == 1


def test_network_friendship_workflow(net):
    alice, bob, carol = online(net, ("Alice", "a@x"), ("Bob", "b@x"), ("Carol", "c@x"))
    alice.request_friendship(alice.search(email="b@x")[0])
    carol.request_friendship(carol.search(full_name="alice")[0])
    for _ in range(3):
        for u in (alice, bob, carol):
            u.process_mailbox(lambda r: Decision.CONDITIONAL_ACCEPT)
    # Bob accepts Alice (policy conditional, but Bob never requested her) -> pending
    assert alice.cert_hash in bob.pending_inspection
    bob.confirm(alice.cert)
    for _ in range(2):
        for u in (alice, bob, carol):
            u.process_mailbox()
    assert bob.cert_hash in alice.credentials and alice.cert_hash in bob.credentials
    assert carol.cert_hash in alice.pending_inspection
    # Alice has not confirmed Carol yet, so Carol holds no credential
    assert alice.cert_hash not in carol.credentials
    alice.confirm(carol.cert)
    for _ in range(2):
        for u in (alice, bob, carol):
            u.process_mailbox()
    assert alice.cert_hash in carol.credentials and carol.cert_hash in alice.credentials
