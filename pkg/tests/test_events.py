import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgpad.events import (HEADER, InvalidEvent, Kind, LineError, UpdateEvent, announce, is_sorted,
                          parse_event_log, parse_line, read_event_log, save_event_log, sort_events,
                          state_change, validate_event, withdraw, write_event_log)


def test_announce_line_maps_fields():
    ev = parse_line("1043452800,192.0.2.1,65001,A,10.0.0.0/8,701 7018,192.0.2.1,00000000deadbeef,,")
    assert ev.kind is Kind.ANNOUNCE
    assert ev.as_path == (701, 7018)
    assert ev.prefix == "10.0.0.0/8" and ev.next_hop == "192.0.2.1"
    assert ev.attr_digest == "00000000deadbeef"
    assert ev.old_state is None and ev.new_state is None


def test_state_line_maps_fields():
    ev = parse_line("1043452800,192.0.2.1,65001,S,,,,,5,6")
    assert ev.kind is Kind.STATE and (ev.old_state, ev.new_state) == (5, 6)


def test_empty_sequence_writes_header_only():
    assert write_event_log([]) == HEADER + "\n"


def test_single_withdraw_line():
    text = write_event_log([withdraw(5, "192.0.2.1", 65001, "10.0.0.0/8")])
    assert text.splitlines()[1] == "5,192.0.2.1,65001,W,10.0.0.0/8,,,,,"


@pytest.mark.parametrize("line", [
    "1,192.0.2.1,65001,A,10.0.0.0/8,701,,,,",            # missing digest
    "1,192.0.2.1,65001,A,,701,,00000000deadbeef,,",       # missing prefix
    "1,192.0.2.1,65001,W,10.0.0.0/8,701,,,,",              # withdrawal with a path
    "1,192.0.2.1,65001,S,,,,,6,6",                         # no change
    "1,192.0.2.1,65001,S,,,,,0,6",                         # state outside 1..6
    "1,192.0.2.1,65001,X,10.0.0.0/8,,,,,",                 # unknown kind
    "1,192.0.2.1,65001,A,10.0.0.0/8",                      # short line
    "-1,192.0.2.1,65001,W,10.0.0.0/8,,,,,",                # negative time
    "1,not-an-ip,65001,W,10.0.0.0/8,,,,,",
    "1,192.0.2.1,65001,A,10.0.0.0/8,701,,DEADBEEFDEADBEEF,,",  # upper-case digest
])
def test_bad_lines_report_line_number(line):
    with pytest.raises(LineError) as err:
        parse_event_log(HEADER + "\n" + line + "\n")
    assert err.value.lineno == 2


def test_comments_and_blank_lines_are_skipped():
    text = "# a comment\n\n1,192.0.2.1,65001,W,10.0.0.0/8,,,,,\n"
    assert len(parse_event_log(text)) == 1


def test_write_rejects_invalid_event():
    bad = UpdateEvent(1, "192.0.2.1", 1, Kind.WITHDRAW, "10.0.0.0/8", (1,))
    with pytest.raises(InvalidEvent):
        write_event_log([bad])


def test_sort_is_stable():
    evs = [withdraw(5, "192.0.2.1", 1, "10.0.0.0/8"), withdraw(3, "192.0.2.1", 1, "10.0.1.0/24"),
           withdraw(5, "192.0.2.1", 1, "10.0.2.0/24")]
    out = sort_events(evs)
    assert [e.prefix for e in out] == ["10.0.1.0/24", "10.0.0.0/8", "10.0.2.0/24"]
    assert is_sorted(out) and not is_sorted(evs)


def test_file_round_trip(tmp_path):
    evs = [state_change(1, "192.0.2.1", 65001, 5, 6),
           announce(2, "2001:db8::1", 65001, "2001:db8::/32", (1, 2, 3), "2001:db8::1", "0123456789abcdef"),
           withdraw(3, "192.0.2.1", 65001, "10.0.0.0/8")]
    save_event_log(tmp_path / "e.csv", evs)
    assert read_event_log(tmp_path / "e.csv") == evs


# --------------------------------------------------------------------------- property

peers = st.sampled_from(["192.0.2.1", "192.0.2.2", "2001:db8::7"])
prefixes = st.sampled_from(["10.0.0.0/8", "192.0.2.0/24", "2001:db8::/32", "0.0.0.0/0"])
digests = st.integers(0, 2**64 - 1).map(lambda v: f"{v:016x}")


@st.composite
def events(draw):
    ts = draw(st.integers(0, 2**40))
    peer = draw(peers)
    pas = draw(st.integers(0, 2**32 - 1))
    kind = draw(st.sampled_from("AWS"))
    if kind == "A":
        nh = draw(st.sampled_from(["", "192.0.2.9", "2001:db8::9"]))
        return announce(ts, peer, pas, draw(prefixes), draw(st.lists(st.integers(0, 2**32 - 1), max_size=6)),
                        nh, draw(digests))
    if kind == "W":
        return withdraw(ts, peer, pas, draw(prefixes))
    old, new = draw(st.lists(st.integers(1, 6), min_size=2, max_size=2, unique=True))
    return state_change(ts, peer, pas, old, new)


@given(st.lists(events(), max_size=40))
def test_round_trip_property(evs):
    for ev in evs:
        validate_event(ev)
    text = write_event_log(evs)
    assert parse_event_log(text) == evs
    assert write_event_log(parse_event_log(text)) == text


def test_fuzz_round_trip_10k():
    import numpy as np

    rng = np.random.default_rng(10)
    evs = []
    for i in range(10_000):
        r = rng.integers(3)
        if r == 0:
            evs.append(announce(i, "192.0.2.1", int(rng.integers(2**32)), f"10.{i % 256}.0.0/16",
                                tuple(int(a) for a in rng.integers(0, 2**32, size=rng.integers(0, 5))),
                                "192.0.2.1", f"{int(rng.integers(2**63)):016x}"))
        elif r == 1:
            evs.append(withdraw(i, "2001:db8::1", 7, f"2001:db8:{i % 4096:x}::/48"))
        else:
            evs.append(state_change(i, "192.0.2.1", 7, int(rng.integers(1, 4)), int(rng.integers(4, 7))))
    assert parse_event_log(write_event_log(evs)) == evs
