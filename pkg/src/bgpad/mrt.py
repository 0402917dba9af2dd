"""MRT (RFC 6396) BGP4MP reader.

Only type 16 (BGP4MP) is decoded, subtypes STATE_CHANGE (0), MESSAGE (1),
MESSAGE_AS4 (4) and STATE_CHANGE_AS4 (5).  Everything else is counted as
skipped.  Gzip-wrapped input is recognised by its magic bytes.
"""

from __future__ import annotations

import gzip
import ipaddress
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO, Iterator

from .events import Kind, ParseStats, UpdateEvent

BGP4MP = 16
STATE_CHANGE, MESSAGE, MESSAGE_AS4, STATE_CHANGE_AS4 = 0, 1, 4, 5
ACCEPTED_SUBTYPES = {STATE_CHANGE, MESSAGE, MESSAGE_AS4, STATE_CHANGE_AS4}

BGP_UPDATE = 2
ATTR_AS_PATH, ATTR_NEXT_HOP, ATTR_MP_REACH, ATTR_MP_UNREACH, ATTR_AS4_PATH = 2, 3, 14, 15, 17
# carried explicitly (path, next hop) or per-prefix (MP NLRI), so kept out of the digest
DIGEST_EXCLUDED = frozenset({ATTR_AS_PATH, ATTR_NEXT_HOP, ATTR_MP_REACH, ATTR_MP_UNREACH, ATTR_AS4_PATH})

HEADER_LEN = 12
GZIP_MAGIC = b"\x1f\x8b"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class MalformedRecord(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class MrtRecordHeader:
    timestamp: int
    type: int
    subtype: int
    length: int


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def attr_digest(attrs: dict[int, bytes]) -> str:
    """FNV-1a over (type, length, value) of every attribute not carried explicitly.

    Each attribute contributes ``type:u8 | len(value):u32 | value`` in
    ascending type order.
    """
    buf = bytearray()
    for code in sorted(attrs):
        if code in DIGEST_EXCLUDED:
            continue
        value = attrs[code]
        buf += struct.pack("!BI", code, len(value))
        buf += value
    return f"{fnv1a64(bytes(buf)):016x}"


class _Body:
    """Bounds-checked big-endian cursor over one record body."""

    __slots__ = ("data", "pos", "end", "base")

    def __init__(self, data: bytes, base: int):
        self.data = data
        self.pos = 0
        self.end = len(data)
        self.base = base

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise MalformedRecord(self.base + self.pos, f"need {n} bytes, {self.end - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("!I", self.take(4))[0]

    def remaining(self) -> int:
        return self.end - self.pos


def _addr(raw: bytes) -> str:
    return str(ipaddress.ip_address(raw))


def _afi_len(afi: int, cur: _Body) -> int:
    if afi == 1:
        return 4
    if afi == 2:
        return 16
    raise MalformedRecord(cur.base + cur.pos, f"unknown AFI {afi}")


def _prefixes(cur: _Body, afi: int) -> list[str]:
    width = 32 if afi == 1 else 128
    out = []
    while cur.remaining() > 0:
        bits = cur.u8()
        if bits > width:
            raise MalformedRecord(cur.base + cur.pos, f"prefix length {bits} > {width}")
        raw = cur.take((bits + 7) // 8)
        full = raw + bytes(width // 8 - len(raw))
        net = ipaddress.ip_network((full, bits), strict=False)
        out.append(str(net))
    return out


def _as_path(value: bytes, asn_size: int, base: int) -> tuple[int, ...]:
    cur = _Body(value, base)
    path: list[int] = []
    fmt = "!H" if asn_size == 2 else "!I"
    while cur.remaining() > 0:
        seg_type = cur.u8()
        if seg_type not in (1, 2, 3, 4):
            raise MalformedRecord(base + cur.pos, f"unknown AS_PATH segment type {seg_type}")
        count = cur.u8()
        for _ in range(count):
            path.append(struct.unpack(fmt, cur.take(asn_size))[0])
    return tuple(path)


def _attributes(cur: _Body) -> dict[int, bytes]:
    attrs: dict[int, bytes] = {}
    while cur.remaining() > 0:
        flags = cur.u8()
        code = cur.u8()
        length = cur.u16() if flags & 0x10 else cur.u8()
        if code in attrs:
            raise MalformedRecord(cur.base + cur.pos, f"duplicate attribute {code}")
        attrs[code] = cur.take(length)
    return attrs


def _decode_update(msg: _Body, ts: int, peer_ip: str, peer_as: int, asn_size: int,
                   afi: int) -> list[UpdateEvent]:
    wlen = msg.u16()
    withdrawn = _prefixes(_Body(msg.take(wlen), msg.base + msg.pos - wlen), 1)
    alen = msg.u16()
    attrs = _attributes(_Body(msg.take(alen), msg.base + msg.pos - alen))
    nlri = _prefixes(_Body(msg.take(msg.remaining()), msg.base + msg.pos), 1)

    next_hop = ""
    if ATTR_NEXT_HOP in attrs:
        nh = attrs[ATTR_NEXT_HOP]
        if len(nh) != 4:
            raise MalformedRecord(msg.base, f"NEXT_HOP of length {len(nh)}")
        next_hop = _addr(nh)
    if ATTR_MP_UNREACH in attrs:
        mp = _Body(attrs[ATTR_MP_UNREACH], msg.base)
        mafi = mp.u16()
        _afi_len(mafi, mp)
        mp.u8()
        withdrawn += _prefixes(mp, mafi)
    if ATTR_MP_REACH in attrs:
        mp = _Body(attrs[ATTR_MP_REACH], msg.base)
        mafi = mp.u16()
        alen_ = _afi_len(mafi, mp)
        mp.u8()
        nh_len = mp.u8()
        nh_raw = mp.take(nh_len)
        mp.u8()
        if nh_len >= alen_ and not next_hop:
            next_hop = _addr(nh_raw[:alen_])
        nlri += _prefixes(mp, mafi)

    as_path: tuple[int, ...] = ()
    if ATTR_AS_PATH in attrs:
        as_path = _as_path(attrs[ATTR_AS_PATH], asn_size, msg.base)
    if ATTR_AS4_PATH in attrs:
        as_path = _as_path(attrs[ATTR_AS4_PATH], 4, msg.base)

    events = [UpdateEvent(ts, peer_ip, peer_as, Kind.WITHDRAW, p) for p in withdrawn]
    if nlri:
        digest = attr_digest(attrs)
        events += [UpdateEvent(ts, peer_ip, peer_as, Kind.ANNOUNCE, p, as_path, next_hop, digest)
                   for p in nlri]
    return events


def decode_record(header: MrtRecordHeader, body: bytes, offset: int) -> list[UpdateEvent] | None:
    """Decode one BGP4MP record body; ``None`` means "not an update/state record"."""
    cur = _Body(body, offset + HEADER_LEN)
    as4 = header.subtype in (MESSAGE_AS4, STATE_CHANGE_AS4)
    asn_size = 4 if as4 else 2
    peer_as = cur.u32() if as4 else cur.u16()
    _local_as = cur.u32() if as4 else cur.u16()
    _ifindex = cur.u16()
    afi = cur.u16()
    alen = _afi_len(afi, cur)
    peer_ip = _addr(cur.take(alen))
    cur.take(alen)  # local address

    if header.subtype in (STATE_CHANGE, STATE_CHANGE_AS4):
        old, new = cur.u16(), cur.u16()
        if cur.remaining():
            raise MalformedRecord(cur.base + cur.pos, "trailing bytes after state change")
        if not (1 <= old <= 6 and 1 <= new <= 6) or old == new:
            raise MalformedRecord(cur.base, f"invalid FSM transition {old}->{new}")
        return [UpdateEvent(header.timestamp, peer_ip, peer_as, Kind.STATE,
                            old_state=old, new_state=new)]

    marker = cur.take(16)
    if marker != b"\xff" * 16:
        raise MalformedRecord(cur.base + cur.pos - 16, "bad BGP marker")
    blen = cur.u16()
    if blen < 19 or blen - 18 != cur.remaining():
        raise MalformedRecord(cur.base + cur.pos, f"BGP length {blen} disagrees with record")
    btype = cur.u8()
    if btype != BGP_UPDATE:
        return None
    return _decode_update(_Body(cur.take(cur.remaining()), cur.base + cur.pos), header.timestamp,
                          peer_ip, peer_as, asn_size, afi)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == GZIP_MAGIC:
        return gzip.decompress(data)
    return data


def iter_records(data: bytes) -> Iterator[tuple[int, MrtRecordHeader | None, bytes]]:
    """Yield (offset, header, body); header is None for a truncated tail."""
    pos = 0
    n = len(data)
    while pos < n:
        if n - pos < HEADER_LEN:
            yield pos, None, data[pos:]
            return
        ts, rtype, sub, length = struct.unpack_from("!IHHI", data, pos)
        header = MrtRecordHeader(ts, rtype, sub, length)
        start = pos + HEADER_LEN
        if start + length > n:
            yield pos, None, data[pos:]
            return
        yield pos, header, data[start:start + length]
        pos = start + length


def parse_mrt_stream(source: bytes | BinaryIO, strict: bool = False) -> tuple[list[UpdateEvent], ParseStats]:
    """Decode MRT bytes into events.

    In the default skip-and-continue mode malformed records are counted and
    described in ``stats.errors``; ``strict=True`` raises
    :class:`MalformedRecord` at the first one instead.  The returned events
    are stable-sorted by timestamp.
    """
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    stats = ParseStats()
    try:
        data = _maybe_gunzip(bytes(data))
    except (OSError, EOFError, zlib.error) as exc:
        err = MalformedRecord(0, f"corrupt gzip wrapper: {exc}")
        if strict:
            raise err from exc
        stats.records_read = stats.records_malformed = 1
        stats.errors.append(str(err))
        return [], stats
    events: list[UpdateEvent] = []
    for offset, header, body in iter_records(data):
        stats.records_read += 1
        if header is None:
            err = MalformedRecord(offset, "truncated record")
            if strict:
                raise err
            stats.records_malformed += 1
            stats.errors.append(str(err))
            continue
        if header.type != BGP4MP or header.subtype not in ACCEPTED_SUBTYPES:
            stats.records_skipped += 1
            continue
        try:
            decoded = decode_record(header, body, offset)
        except MalformedRecord as err:
            if strict:
                raise
            stats.records_malformed += 1
            stats.errors.append(str(err))
            continue
        except ValueError as exc:  # address/prefix construction
            err = MalformedRecord(offset, str(exc))
            if strict:
                raise err from exc
            stats.records_malformed += 1
            stats.errors.append(str(err))
            continue
        if decoded is None:
            stats.records_skipped += 1
            continue
        stats.records_parsed += 1
        events.extend(decoded)
    events.sort(key=lambda e: e.timestamp)
    stats.events = len(events)
    return events, stats


def read_mrt(path, strict: bool = False) -> tuple[list[UpdateEvent], ParseStats]:
    with open(path, "rb") as fh:
        return parse_mrt_stream(fh.read(), strict=strict)
