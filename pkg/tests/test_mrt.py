import gzip
import struct

import pytest

import mrt_oracle
import mrtgen
from bgpad.events import Kind, validate_event, write_event_log
from bgpad.mrt import MalformedRecord, attr_digest, fnv1a64, parse_mrt_stream, read_mrt

from conftest import DATA


def _one_update(**kw):
    msg = mrtgen.update_message(**kw)
    return mrtgen.message_record(1000, "192.0.2.1", 65001, msg)


def test_fnv_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_two_nlri_one_withdrawn():
    data = _one_update(withdrawn=["10.9.0.0/16"], nlri=["10.1.0.0/16", "192.0.2.0/24"],
                       attrs=mrtgen.announce_attrs([65001, 3356]))
    events, stats = parse_mrt_stream(data)
    assert [e.kind for e in events] == [Kind.WITHDRAW, Kind.ANNOUNCE, Kind.ANNOUNCE]
    a1, a2 = events[1:]
    assert a1.attr_digest == a2.attr_digest
    assert a1.as_path == (65001, 3356) and a1.next_hop == "192.0.2.1"
    assert stats.records_parsed == 1 and stats.events == 3


def test_empty_input():
    events, stats = parse_mrt_stream(b"")
    assert events == []
    assert (stats.records_read, stats.records_parsed, stats.records_skipped, stats.records_malformed,
            stats.events, stats.errors) == (0, 0, 0, 0, 0, [])


def test_digest_ignores_path_and_next_hop_but_not_med():
    base = mrtgen.announce_attrs([1, 2])
    other_path = mrtgen.announce_attrs([3, 4, 5], next_hop="192.0.2.77")
    with_med = base + mrtgen.attr(4, struct.pack("!I", 10), 0x80)
    d = [parse_mrt_stream(_one_update(nlri=["10.0.0.0/8"], attrs=a))[0][0].attr_digest
         for a in (base, other_path, with_med)]
    assert d[0] == d[1] != d[2]


def test_attr_digest_definition():
    attrs = {1: b"\x00", 2: b"xx", 4: b"\x00\x00\x00\x07"}
    buf = struct.pack("!BI", 1, 1) + b"\x00" + struct.pack("!BI", 4, 4) + b"\x00\x00\x00\x07"
    assert attr_digest(attrs) == f"{fnv1a64(buf):016x}"


def test_as4_path_wins_and_as_set_flattened():
    attrs = (mrtgen.attr(1, b"\x00")
             + mrtgen.attr(2, mrtgen.as_path_value([(2, [23456, 1]), (1, [7, 8])], asn_size=2))
             + mrtgen.attr(3, bytes([192, 0, 2, 1]))
             + mrtgen.attr(17, mrtgen.as_path_value([(2, [400000, 1]), (1, [7, 8])], 4), 0xC0))
    msg = mrtgen.update_message(nlri=["10.0.0.0/8"], attrs=attrs)
    ev = parse_mrt_stream(mrtgen.message_record(1, "192.0.2.1", 23456, msg, as4=False))[0][0]
    assert ev.as_path == (400000, 1, 7, 8)


def test_ipv6_mp_reach_and_unreach():
    attrs = mrtgen.attr(1, b"\x00") + mrtgen.mp_reach(["2001:db8:1::/48"]) + mrtgen.mp_unreach(["2001:db8:2::/48"])
    events, _ = parse_mrt_stream(_one_update(attrs=attrs))
    assert [(e.kind, e.prefix) for e in events] == [(Kind.WITHDRAW, "2001:db8:2::/48"),
                                                     (Kind.ANNOUNCE, "2001:db8:1::/48")]
    assert events[1].next_hop == "2001:db8::1"


def test_state_change_and_bad_fsm_code():
    good = mrtgen.state_record(5, "192.0.2.1", 1, 5, 6)
    bad = mrtgen.state_record(6, "192.0.2.1", 1, 5, 9)
    events, stats = parse_mrt_stream(good + bad)
    assert len(events) == 1 and (events[0].old_state, events[0].new_state) == (5, 6)
    assert stats.records_malformed == 1
    with pytest.raises(MalformedRecord):
        parse_mrt_stream(good + bad, strict=True)


def test_other_types_and_keepalives_are_skipped():
    other = mrtgen.record(1, 0, b"", rtype=13)
    ka = mrtgen.message_record(2, "192.0.2.1", 1, mrtgen.keepalive())
    events, stats = parse_mrt_stream(other + ka)
    assert events == [] and stats.records_skipped == 2 and stats.records_read == 2


def test_truncated_tail_is_malformed():
    data = _one_update(nlri=["10.0.0.0/8"], attrs=mrtgen.announce_attrs([1]))
    events, stats = parse_mrt_stream(data + data[:20])
    assert len(events) == 1 and stats.records_malformed == 1
    assert stats.records_read == stats.records_parsed + stats.records_skipped + stats.records_malformed


def test_out_of_order_records_are_stable_sorted():
    a = mrtgen.message_record(9, "192.0.2.1", 1, mrtgen.update_message(withdrawn=["10.0.0.0/8"]))
    b = mrtgen.message_record(3, "192.0.2.1", 1, mrtgen.update_message(withdrawn=["10.1.0.0/16"]))
    c = mrtgen.message_record(9, "192.0.2.1", 1, mrtgen.update_message(withdrawn=["10.2.0.0/16"]))
    events, _ = parse_mrt_stream(a + b + c)
    assert [e.prefix for e in events] == ["10.1.0.0/16", "10.0.0.0/8", "10.2.0.0/16"]


def test_gzip_wrapped(tmp_path):
    raw = (DATA / "golden_1000.mrt").read_bytes()
    path = tmp_path / "g.mrt.gz"
    path.write_bytes(gzip.compress(raw))
    assert read_mrt(path)[0] == parse_mrt_stream(raw)[0]
    events, stats = parse_mrt_stream(b"\x1f\x8b" + b"junk")
    assert events == [] and stats.records_malformed == 1


def test_golden_fixture_matches_committed_dump():
    events, stats = read_mrt(DATA / "golden_1000.mrt")
    assert stats.records_read == stats.records_parsed == 1000
    assert write_event_log(events) == (DATA / "golden_1000.events.csv").read_text()


def test_golden_dump_matches_mrtparse():
    pytest.importorskip("mrtparse")
    assert mrt_oracle.dump(DATA / "golden_1000.mrt") == (DATA / "golden_1000.events.csv").read_text()


def test_events_are_valid():
    events, _ = read_mrt(DATA / "golden_1000.mrt")
    for ev in events:
        validate_event(ev)
