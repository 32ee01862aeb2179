from __future__ import annotations

import random
from dataclasses import replace

import pytest

from slsp import wire
from slsp.crypto import CertificateAuthority, digest, generate_keypair, verify, verify_chain_link
from slsp.engine import (
    SEQ_LIMIT,
    Action,
    DuplicateCache,
    KeyStore,
    NodeConfig,
    PkdMode,
    SeqState,
    SequenceExhausted,
    validate_within_hops,
)
from slsp.wire import Frame, LsuPacket

from conftest import make_bench


def test_originated_lsu_is_signed_and_starts_the_chain(bench3):
    a = bench3.nodes[0]
    lsu = a.originate_lsu(0.0)
    assert (lsu.r_lsu, lsu.ttl, lsu.seq) == (2, 1, 0)
    assert verify_chain_link(lsu.zone_radius, lsu.hops_traversed, 1)
    assert verify(a.identity.keypair.public_key, wire.signable_bytes(lsu), lsu.signature)
    assert a.originate_lsu(0.1).seq == 1


def test_receive_relay_chain_and_ttl_exhaustion(bench3):
    a, b, c = bench3.nodes
    lsu = a.originate_lsu(0.0)
    d1 = b.receive(bench3.frame(0, lsu), 0.01)
    assert d1.action is Action.ACCEPT_RELAY
    (relay,) = d1.relays
    assert relay.ttl == 0 and relay.hops_traversed == digest(lsu.hops_traversed)
    d2 = c.receive(bench3.frame(1, relay), 0.02)
    assert d2.action is Action.ACCEPT_ONLY and d2.relays == ()


def test_duplicate_and_own_are_discarded(bench3):
    a, b, _ = bench3.nodes
    lsu = a.originate_lsu(0.0)
    assert b.receive(bench3.frame(0, lsu), 0.01).accepted
    assert b.receive(bench3.frame(0, lsu), 0.02).reason == "duplicate"
    assert a.receive(bench3.frame(1, wire.relayed(lsu)), 0.02).reason == "own"


def test_inflated_ttl_and_random_hops_fail_the_chain_check(bench3):
    a, b, _ = bench3.nodes
    lsu = a.originate_lsu(0.0)
    inflated = replace(lsu, ttl=lsu.ttl + 1)
    assert b.receive(bench3.frame(0, inflated), 0.01).reason == "bad_chain"
    forged = replace(lsu, hops_traversed=digest(b"x"))
    assert b.receive(bench3.frame(0, forged), 0.01).reason == "bad_chain"


def test_unchanged_forward_is_accepted_one_hop_further():
    bench = make_bench(4, NodeConfig(radius=2))
    bench.introduce()
    a, b, c, d = bench.nodes
    lsu = a.originate_lsu(0.0)
    relay = b.receive(bench.frame(0, lsu), 0.01).relays[0]
    # c forwards the ttl-0 copy untouched; d is 3 hops from a yet accepts it
    assert c.receive(bench.frame(1, relay), 0.02).action is Action.ACCEPT_ONLY
    assert d.receive(bench.frame(2, relay), 0.03).action is Action.ACCEPT_ONLY


def test_unknown_key_and_bad_signature(bench3):
    stranger = make_bench(5, seed=9).nodes[4]
    b = bench3.nodes[1]
    lsu = stranger.originate_lsu(0.0)
    assert b.receive(Frame(stranger.mac, stranger.ip, lsu), 0.0).reason == "no_key"
    a = bench3.nodes[0]
    good = a.originate_lsu(0.0)
    tampered = replace(good, links=(0x0A0000FF,))
    assert b.receive(bench3.frame(0, tampered), 0.0).reason == "bad_sig"


def test_pkd_from_unknown_node_is_validated_and_stored():
    bench = make_bench(2)
    a, b = bench.nodes
    pkd = a.originate_pkd(0.0)
    d = b.receive(bench.frame(0, pkd), 0.01)
    assert d.action is Action.ACCEPT_RELAY
    assert b.keystore.get(a.ip).public_key == a.identity.keypair.public_key


def test_pkd_with_known_key_skips_validation():
    bench = make_bench(2)
    bench.introduce()
    a, b = bench.nodes
    pkd = a.originate_pkd(0.0)
    broken = replace(pkd, certificate=replace(pkd.certificate, serial=pkd.certificate.serial + 99))
    assert b.receive(bench.frame(0, broken), 0.01).accepted


def test_pkd_with_rogue_certificate_is_rejected():
    bench = make_bench(2)
    a, b = bench.nodes
    rogue = CertificateAuthority(random.Random("rogue"))
    pkd = a.originate_pkd(0.0)
    forged = replace(pkd, certificate=rogue.issue(a.ip, pkd.public_key))
    assert b.receive(bench.frame(0, forged), 0.01).reason == "bad_cert"
    assert a.ip not in b.keystore


def test_validation_policy_can_skip_unknown_keys():
    bench = make_bench(2)
    a, b = bench.nodes
    b.validate_policy = validate_within_hops(1)
    d = b.receive(bench.frame(0, a.originate_pkd(0.0)), 0.01)
    assert d.accepted
    assert b.stats.pkd_validation_skipped == 1
    assert a.ip not in b.keystore


def test_lsu_with_attached_key_teaches_the_key():
    bench = make_bench(2, NodeConfig(pkd_mode=PkdMode.LSU_ATTACHED))
    a, b = bench.nodes
    lsu = a.originate_lsu(0.0)
    assert lsu.attached_key is not None
    assert b.receive(bench.frame(0, lsu), 0.01).accepted
    assert b.keystore.get(a.ip).public_key == a.identity.keypair.public_key
    # the next LSU has no key attached and still verifies
    lsu2 = a.originate_lsu(0.5)
    assert lsu2.attached_key is None
    assert b.receive(bench.frame(0, lsu2), 0.51).accepted


def test_keystore_fifo_eviction():
    ks = KeyStore(capacity=2)
    keys = [generate_keypair(random.Random(i)).public_key for i in range(3)]
    assert ks.insert(1, keys[0], 1, 0) == []
    assert ks.insert(2, keys[1], 2, 0) == []
    evicted = ks.insert(3, keys[2], 3, 0)
    assert [e.ip for e in evicted] == [1]
    assert 1 not in ks and len(ks) == 2
    # replacing an entry moves it to the tail
    ks.insert(2, keys[1], 4, 0)
    assert [e.ip for e in ks.insert(4, keys[0], 5, 0)] == [3]


def test_seq_state_boundary():
    s = SeqState(SEQ_LIMIT - 2)
    assert s.take() == SEQ_LIMIT - 2
    assert s.take() == SEQ_LIMIT - 1
    assert s.exhausted
    with pytest.raises(SequenceExhausted):
        s.take()


def test_rekey_silences_then_resumes_with_fresh_key():
    config = NodeConfig(lsu_period=2.0)
    bench = make_bench(2, config)
    bench.introduce()
    a, b = bench.nodes
    old = a.identity.keypair.key_id
    a.seq.next_seq = SEQ_LIMIT - 2
    assert a.originate_lsu(0.0).seq == SEQ_LIMIT - 2
    assert a.originate_lsu(0.1).seq == SEQ_LIMIT - 1
    assert a.originate_lsu(0.2) is None
    assert a.silence_until == pytest.approx(0.2 + config.lost_neighbor)
    t = 0.2
    while t < a.silence_until - 1e-9:
        assert a.timer_tick(t) == []
        t = min(a.next_wakeup(), a.silence_until)
    resume = a.silence_until
    out = a.timer_tick(resume)
    assert out, "the node must speak again once the silence ends"
    assert a.identity.keypair.key_id != old
    assert a.retired_key_ids == [old]
    kinds = [type(wire.decode_frame(f).payload).__name__ for f in out]
    assert "PkdPacket" in kinds
    pkd = next(wire.decode_frame(f).payload for f in out if isinstance(wire.decode_frame(f).payload, wire.PkdPacket))
    assert pkd.seq == 0
    assert b.receive(bench.frame(0, pkd), resume).accepted
    assert b.keystore.get(a.ip).public_key.key_id != old


def test_replayed_old_key_does_not_replace_newer_one():
    bench = make_bench(2)
    a, b = bench.nodes
    old_pkd = a.originate_pkd(0.0)
    a.seq.next_seq = SEQ_LIMIT
    a.rekey(0.1)
    out = []
    a._finish_rekey(a.silence_until, out)
    new_pkd = wire.decode_frame(out[0]).payload
    assert b.receive(bench.frame(0, new_pkd), 10.0).accepted
    b.receive(bench.frame(0, old_pkd), 10.1)
    assert b.keystore.get(a.ip).public_key == a.identity.keypair.public_key


def test_hello_verification_marks_neighbor(bench3):
    a, b, _ = bench3.nodes
    hello = a.make_hello()
    assert b.receive(bench3.frame(0, hello), 0.0).accepted
    assert b.nlp.verified_ips() == [a.ip]
    spoofed = Frame(a.mac, a.ip, replace(hello, ip=a.ip + 100))
    assert b.receive(spoofed, 0.1).reason in ("hello_mismatch", "nlp")


def test_key_rebroadcast_trigger():
    bench = make_bench(4, NodeConfig(lsu_period=1.0))
    bench.introduce()
    a = bench.nodes[0]
    assert a.key_rebroadcast_trigger(0.0)
    for i in (1, 2, 3):
        n = bench.nodes[i]
        a.receive(bench.frame(i, n.make_hello()), 0.0)
    a.originate_pkd(0.0)
    assert not a.key_rebroadcast_trigger(1.0)
    # one of three verified neighbors departs: 33% >= 30%
    a.nlp.entries.pop(bench.nodes[1].mac)
    assert a.key_rebroadcast_trigger(1.0)
    assert a.key_rebroadcast_trigger(10.0)


def test_nlp_discard_leaves_state_untouched(bench3):
    a, b, _ = bench3.nodes
    assert b.receive(bench3.frame(0, a.make_hello()), 0.0).accepted
    before = b.state_digest()
    lsu = a.originate_lsu(0.5)
    d = b.receive(Frame(a.mac, a.ip + 7, lsu), 0.5)
    assert d.reason == "nlp"
    assert b.state_digest() == before


def test_duplicate_cache_purge():
    dc = DuplicateCache(2.0)
    dc.add(("k",), 0.0)
    dc.purge(1.0)
    assert ("k",) in dc
    dc.purge(2.5)
    assert ("k",) not in dc and len(dc) == 0


def test_extended_pkd_radius_used_for_periodic_broadcast():
    bench = make_bench(1, NodeConfig(radius=2, extended_pkd_radius=4, lsu_period=1.0))
    a = bench.nodes[0]
    assert a.originate_pkd(0.0).r_pkd == 2
    assert a.originate_pkd(a.config.max_key_interval + 0.1).r_pkd == 4


def test_lsu_links_are_sorted_verified_neighbors(bench3):
    a, b, c = bench3.nodes
    a.receive(bench3.frame(2, c.make_hello()), 0.0)
    a.receive(bench3.frame(1, b.make_hello()), 0.0)
    lsu: LsuPacket = a.originate_lsu(0.1)
    assert lsu.links == (b.ip, c.ip)
